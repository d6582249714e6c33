"""Lexicon and embedding export: real database/model in, engine formats out."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crops import pixel_bounds, square_crop
from .kgde import write_kgde
from .wndb import WordNetDb


class ExportError(Exception):
    pass


@dataclass
class ExportManifest:
    """Record of one export invocation, written next to the output."""

    model: str = ""
    categories: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    proposal_source: str = ""
    skipped: list = field(default_factory=list)

    def write(self, path):
        doc = {
            "categories": self.categories,
            "model": self.model,
            "outputs": self.outputs,
            "proposal_source": self.proposal_source,
            "skipped": self.skipped,
        }
        Path(path).write_text(
            json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def export_lexicon(categories, db: WordNetDb, out_path):
    """Resolve categories against the database and write the lexicon file.

    Uses first-sense selection throughout. Returns (n_written, skipped)
    where skipped lists {category, reason} records for everything that
    could not be resolved; those go into the manifest's skip report.
    """
    entries = []
    skipped = []
    seen = set()
    for raw in categories:
        name = raw.strip()
        if not name:
            skipped.append({"category": raw, "reason": "empty category name"})
            continue
        if name in seen:
            skipped.append({"category": name, "reason": "duplicate category"})
            continue
        synset = db.first_noun_synset(name)
        if synset is None:
            skipped.append({"category": name, "reason": "no noun synset found"})
            continue
        definition = synset.definition
        if not definition:
            skipped.append({"category": name, "reason": "synset has an empty gloss"})
            continue
        hyponyms = []
        names_seen = set()
        for hyp in db.hyponyms(synset):
            hname = hyp.lemma
            hdef = hyp.definition
            if not hname or not hdef or hname in names_seen:
                continue
            names_seen.add(hname)
            hyponyms.append({"definition": hdef, "name": hname})
        seen.add(name)
        entries.append(
            {"category": name, "definition": definition, "hyponyms": hyponyms}
        )
    if not entries:
        raise ExportError("no category could be resolved; nothing to write")
    Path(out_path).write_text(
        json.dumps(entries, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return len(entries), skipped


def export_text_embeddings(texts, encoder, out_path, normalize=True):
    """Encode texts (rows in input order) into an embedding file."""
    texts = [t for t in texts]
    if not texts:
        raise ExportError("no input texts")
    emb = np.asarray(encoder.encode_texts(texts), dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        if (norms == 0).any():
            raise ExportError("encoder produced a zero-norm embedding")
        emb = emb / norms
    write_kgde(out_path, emb)
    return emb.shape


def export_crop_embeddings(boxes_json_path, encoder, out_path, normalize=True):
    """Encode square crops of the listed image regions, rows in input order.

    The boxes file is JSON: {"images": [{"path": ..., "boxes": [[x1,y1,x2,y2],
    ...]}]} with image paths relative to the file. Crop geometry follows the
    engine's square-crop rule.
    """
    try:
        from PIL import Image
    except ImportError as exc:
        raise ExportError(f"Pillow is required for crop export: {exc}") from exc

    boxes_json_path = Path(boxes_json_path)
    doc = json.loads(boxes_json_path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "images" not in doc:
        raise ExportError(f"{boxes_json_path}: expected an object with an 'images' list")
    crops = []
    for item in doc["images"]:
        img_path = boxes_json_path.parent / item["path"]
        if not img_path.exists():
            raise ExportError(f"image not found: {img_path}")
        with Image.open(img_path) as img:
            img = img.convert("RGB")
            for box in item["boxes"]:
                window = square_crop(box, img.size)
                crops.append(img.crop(pixel_bounds(window, img.size)))
    if not crops:
        raise ExportError(f"{boxes_json_path}: no boxes to crop")
    emb = np.asarray(encoder.encode_images(crops), dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        if (norms == 0).any():
            raise ExportError("encoder produced a zero-norm embedding")
        emb = emb / norms
    write_kgde(out_path, emb)
    return emb.shape
