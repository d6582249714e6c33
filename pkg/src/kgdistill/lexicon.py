"""Lexicon parsing and prompt expansion.

A lexicon is a static JSON file: one entry per category carrying its
dictionary definition and a flat list of hyponyms (more specific terms,
each with its own definition). Expansion turns the entries into the
ordered prompt list that seeds the language knowledge graph, keeping an
owner index per prompt so graph training knows which category each node
describes.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateCategory, LexiconParseError

# Prompt expansion modes. HIERARCHY emits the category definition plus one
# prompt per hyponym; the other two are ablation switches that reduce each
# category to a single prompt.
NAMES = "names"
DEFINITIONS = "definitions"
HIERARCHY = "hierarchy"
PROMPT_MODES = (NAMES, DEFINITIONS, HIERARCHY)

_ENTRY_KEYS = {"category", "definition", "hyponyms"}
_HYPONYM_KEYS = {"name", "definition"}


@dataclass(frozen=True)
class Hyponym:
    name: str
    definition: str


@dataclass(frozen=True)
class LexiconEntry:
    """One category with its definition and hyponym list (may be empty)."""

    category: str
    definition: str
    hyponyms: tuple[Hyponym, ...] = ()


@dataclass(frozen=True)
class PromptSet:
    """Ordered prompts plus the owning category index of each prompt."""

    prompts: tuple[str, ...]
    owner: tuple[int, ...]
    mode: str
    categories: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.prompts)

    @property
    def n_categories(self):
        return len(self.categories)


def _require_str(value, what, index):
    if not isinstance(value, str) or not value:
        raise LexiconParseError(f"entry {index}: {what} must be a nonempty string")
    return value


def parse_lexicon(path):
    """Parse and validate a lexicon file, returning entries in file order.

    Raises LexiconParseError (with position context) on malformed documents
    and DuplicateCategory when two entries share a name.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LexiconParseError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, list):
        raise LexiconParseError("top-level document must be a JSON array")

    entries = []
    seen = set()
    for idx, raw in enumerate(doc):
        if not isinstance(raw, dict):
            raise LexiconParseError(f"entry {idx}: expected an object")
        unknown = set(raw) - _ENTRY_KEYS
        if unknown:
            raise LexiconParseError(f"entry {idx}: unknown keys {sorted(unknown)}")
        category = _require_str(raw.get("category"), "category", idx)
        definition = _require_str(raw.get("definition"), "definition", idx)
        if category in seen:
            raise DuplicateCategory(category)
        seen.add(category)

        raw_hyp = raw.get("hyponyms", [])
        if not isinstance(raw_hyp, list):
            raise LexiconParseError(f"entry {idx}: hyponyms must be an array")
        hyponyms = []
        names = set()
        for hidx, h in enumerate(raw_hyp):
            if not isinstance(h, dict):
                raise LexiconParseError(f"entry {idx} hyponym {hidx}: expected an object")
            unknown = set(h) - _HYPONYM_KEYS
            if unknown:
                raise LexiconParseError(
                    f"entry {idx} hyponym {hidx}: unknown keys {sorted(unknown)}"
                )
            name = _require_str(h.get("name"), f"hyponym {hidx} name", idx)
            hdef = _require_str(h.get("definition"), f"hyponym {hidx} definition", idx)
            if name in names:
                raise LexiconParseError(f"entry {idx}: duplicate hyponym name {name!r}")
            names.add(name)
            hyponyms.append(Hyponym(name, hdef))
        entries.append(LexiconEntry(category, definition, tuple(hyponyms)))
    return entries


def expand_prompts(entries, mode=HIERARCHY, hyponym_text="definition"):
    """Expand lexicon entries into the prompt node list for graph extraction.

    HIERARCHY emits, per category, the definition followed by each hyponym's
    text (definition by default; ``hyponym_text="name"`` switches to names).
    NAMES/DEFINITIONS emit one prompt per category. Order is deterministic:
    entry order, then hyponym order.
    """
    if mode not in PROMPT_MODES:
        raise ValueError(f"mode must be one of {PROMPT_MODES}, got {mode!r}")
    if hyponym_text not in ("definition", "name"):
        raise ValueError(f"hyponym_text must be 'definition' or 'name', got {hyponym_text!r}")
    if not entries:
        raise LexiconParseError("cannot expand an empty lexicon")

    prompts = []
    owner = []
    for idx, entry in enumerate(entries):
        if mode == NAMES:
            prompts.append(entry.category)
            owner.append(idx)
        elif mode == DEFINITIONS:
            prompts.append(entry.definition)
            owner.append(idx)
        else:
            prompts.append(entry.definition)
            owner.append(idx)
            for h in entry.hyponyms:
                prompts.append(h.definition if hyponym_text == "definition" else h.name)
                owner.append(idx)
    return PromptSet(
        prompts=tuple(prompts),
        owner=tuple(owner),
        mode=mode,
        categories=tuple(e.category for e in entries),
    )
