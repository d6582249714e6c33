"""Reader for the standard WordNet database (WNDB) noun files.

Understands the `index.noun` / `data.noun` layout of the Princeton
distribution: header lines start with whitespace, data lines carry a
hexadecimal word count, a decimal pointer count, and the gloss after a
pipe. Only the noun part of speech is needed here.
"""

import os
from dataclasses import dataclass
from pathlib import Path

HYPONYM = "~"
ENV_VAR = "WNSEARCHDIR"


class WordNetError(Exception):
    pass


@dataclass(frozen=True)
class Synset:
    offset: int
    words: tuple[str, ...]
    gloss: str
    pointers: tuple[tuple[str, int, str], ...]  # (symbol, offset, pos)

    @property
    def lemma(self):
        return self.words[0].replace("_", " ")

    @property
    def definition(self):
        # glosses carry quoted usage examples after the definition
        return self.gloss.split('; "')[0].strip().rstrip(";").strip()


def _parse_data_line(line):
    head, _, gloss = line.partition("|")
    fields = head.split()
    offset = int(fields[0])
    # fields[1] = lexicographer file, fields[2] = part of speech
    w_cnt = int(fields[3], 16)
    pos = 4
    words = []
    for _ in range(w_cnt):
        words.append(fields[pos])
        pos += 2  # word, lex_id
    p_cnt = int(fields[pos])
    pos += 1
    pointers = []
    for _ in range(p_cnt):
        sym, target, target_pos = fields[pos], int(fields[pos + 1]), fields[pos + 2]
        pointers.append((sym, target, target_pos))
        pos += 4  # symbol, offset, pos, source/target
    return Synset(
        offset=offset, words=tuple(words), gloss=gloss.strip(), pointers=tuple(pointers)
    )


class WordNetDb:
    """Noun-only view of a WordNet database directory."""

    def __init__(self, directory):
        directory = Path(directory)
        index_path = directory / "index.noun"
        data_path = directory / "data.noun"
        for p in (index_path, data_path):
            if not p.exists():
                raise WordNetError(f"not a WordNet database directory (missing {p.name}): {directory}")
        self._synsets = {}
        for line in data_path.read_text(encoding="utf-8").splitlines():
            if not line or line[0].isspace():
                continue
            syn = _parse_data_line(line)
            self._synsets[syn.offset] = syn
        self._index = {}
        for line in index_path.read_text(encoding="utf-8").splitlines():
            if not line or line[0].isspace():
                continue
            fields = line.split()
            lemma = fields[0]
            synset_cnt = int(fields[2])
            p_cnt = int(fields[3])
            offsets = [int(v) for v in fields[4 + p_cnt + 2 :]]
            if len(offsets) != synset_cnt:
                raise WordNetError(f"index entry for {lemma!r} is inconsistent")
            self._index[lemma] = offsets

    @classmethod
    def discover(cls, directory=None):
        """Open the given directory, or the one named by $WNSEARCHDIR."""
        directory = directory or os.environ.get(ENV_VAR)
        if not directory:
            raise WordNetError(
                f"no WordNet directory given and ${ENV_VAR} is not set"
            )
        return cls(directory)

    @staticmethod
    def normalize(lemma):
        return lemma.strip().lower().replace(" ", "_")

    def first_noun_synset(self, lemma):
        """First-listed (most frequent) sense of a lemma, or None."""
        offsets = self._index.get(self.normalize(lemma))
        if not offsets:
            return None
        return self._synsets[offsets[0]]

    def synset(self, offset):
        return self._synsets[offset]

    def hyponyms(self, synset):
        """Direct hyponym synsets, in pointer order."""
        return [
            self._synsets[target]
            for sym, target, pos in synset.pointers
            if sym == HYPONYM and pos == "n" and target in self._synsets
        ]
