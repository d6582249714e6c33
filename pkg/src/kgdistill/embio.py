"""Embedding-file and proposal-fixture I/O, plus the deterministic stub encoder.

The embedding file ("KGDE") is a purpose-built binary layout: 4-byte magic,
little-endian u32 version/rows/cols, then rows*cols little-endian float32
values in row-major order. Values are widened to float64 on load. The
proposal fixture is JSON Lines, one batch per line, referencing a sibling
embedding file by name.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptData,
    DegenerateBox,
    EmptyInput,
    FormatError,
    NonFiniteInput,
    ProposalFormatError,
    TruncatedFile,
)

MAGIC = b"KGDE"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def save_embeddings(path, matrix):
    """Write a finite 2-D array as a KGDE file (float32 payload)."""
    m = np.ascontiguousarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise EmptyInput("embedding matrix must be non-empty and 2-D")
    if not np.isfinite(m).all():
        raise NonFiniteInput("refusing to write non-finite embeddings")
    payload = m.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]))
        fh.write(payload)


def load_embeddings(path):
    """Load a KGDE file into a float64 matrix, validating the full layout."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = rows * cols * 4
    actual = len(data) - _HEADER.size
    if actual != expected:
        raise TruncatedFile(
            f"{path}: declared {rows}x{cols} needs {expected} payload bytes, found {actual}"
        )
    if rows == 0 or cols == 0:
        raise EmptyInput(f"{path}: empty matrix ({rows}x{cols})")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise CorruptData(int(bad[0]))
    return values.astype(np.float64).reshape(rows, cols)


def _hash_key(seed, text):
    digest = hashlib.sha256(struct.pack("<Q", seed) + text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stub_encode(text, dim, seed=0):
    """Deterministic stand-in for a text/image encoder.

    Keys a counter-based PRNG (Philox) with a 128-bit hash of (seed, text),
    draws ``dim`` standard normals, and L2-normalizes. The same
    (text, dim, seed) triple always yields the identical unit vector.
    """
    if dim < 2:
        raise EmptyInput(f"encoder dimension must be >= 2, got {dim}")
    rng = np.random.Generator(np.random.Philox(key=_hash_key(seed, text)))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def square_crop(box, image):
    """Square crop covering a box, sized by its longer edge.

    The square is centered on the box center, translated to stay inside the
    image when it fits, and clipped to the image bounds on any axis where
    the side exceeds the image extent.
    """
    x1, y1, x2, y2 = (float(v) for v in box)
    w, h = (float(v) for v in image)
    if x2 <= x1 or y2 <= y1:
        raise DegenerateBox(f"box {box} has non-positive extent")
    side = max(x2 - x1, y2 - y1)

    def axis(lo, hi, limit):
        center = (lo + hi) / 2.0
        a, b = center - side / 2.0, center + side / 2.0
        if side >= limit:
            return 0.0, limit
        if a < 0.0:
            return 0.0, side
        if b > limit:
            return limit - side, limit
        return a, b

    cx1, cx2 = axis(x1, x2, w)
    cy1, cy2 = axis(y1, y2, h)
    return (cx1, cy1, cx2, cy2)


@dataclass(frozen=True)
class ProposalBatch:
    """Teacher predictions for one image: boxes, probabilities, feature rows."""

    image_id: str
    image_size: tuple[float, float]
    boxes: np.ndarray  # M x 4, (x1, y1, x2, y2) clamped to image bounds
    probs: np.ndarray  # M x N_c, entries in [0, 1]
    feature_rows: np.ndarray  # M indices into the features file
    features_file: str

    def __len__(self):
        return self.boxes.shape[0]


_BATCH_KEYS = {"image_id", "image_size", "boxes", "probs", "feature_rows", "features_file"}


def _parse_batch(obj, where, n_categories=None):
    if not isinstance(obj, dict):
        raise ProposalFormatError(f"{where}: expected an object")
    unknown = set(obj) - _BATCH_KEYS
    if unknown:
        raise ProposalFormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = _BATCH_KEYS - set(obj)
    if missing:
        raise ProposalFormatError(f"{where}: missing keys {sorted(missing)}")
    image_id = obj["image_id"]
    if not isinstance(image_id, str) or not image_id:
        raise ProposalFormatError(f"{where}: image_id must be a nonempty string")
    size = obj["image_size"]
    if not (isinstance(size, list) and len(size) == 2 and all(v > 0 for v in size)):
        raise ProposalFormatError(f"{where}: image_size must be positive [w, h]")
    w, h = float(size[0]), float(size[1])

    if not obj["boxes"]:  # image with no proposals is a legal (empty) batch
        if obj["probs"] or obj["feature_rows"]:
            raise ProposalFormatError(f"{where}: boxes/probs/feature_rows counts disagree")
        boxes = np.zeros((0, 4))
        probs = np.zeros((0, n_categories or 0))
        rows = np.zeros(0, dtype=np.int64)
    else:
        boxes = np.asarray(obj["boxes"], dtype=np.float64)
        probs = np.asarray(obj["probs"], dtype=np.float64)
        rows = np.asarray(obj["feature_rows"], dtype=np.int64)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ProposalFormatError(f"{where}: boxes must be M x 4")
    m = boxes.shape[0]
    if probs.ndim != 2 or probs.shape[0] != m or rows.shape != (m,):
        raise ProposalFormatError(
            f"{where}: boxes/probs/feature_rows counts disagree "
            f"({m}/{probs.shape[0] if probs.ndim == 2 else '?'}/{rows.shape[0]})"
        )
    if n_categories is not None and probs.shape[1] != n_categories:
        raise ProposalFormatError(
            f"{where}: probs have {probs.shape[1]} categories, expected {n_categories}"
        )
    if not np.isfinite(boxes).all() or not np.isfinite(probs).all():
        raise ProposalFormatError(f"{where}: non-finite values")
    if (probs < 0).any() or (probs > 1).any():
        raise ProposalFormatError(f"{where}: probabilities outside [0, 1]")
    if (rows < 0).any():
        raise ProposalFormatError(f"{where}: negative feature row index")

    clamped = boxes.copy()
    clamped[:, (0, 2)] = np.clip(clamped[:, (0, 2)], 0.0, w)
    clamped[:, (1, 3)] = np.clip(clamped[:, (1, 3)], 0.0, h)
    if (clamped[:, 2] <= clamped[:, 0]).any() or (clamped[:, 3] <= clamped[:, 1]).any():
        raise ProposalFormatError(f"{where}: degenerate box after clamping to image bounds")

    features_file = obj["features_file"]
    if not isinstance(features_file, str) or not features_file:
        raise ProposalFormatError(f"{where}: features_file must be a nonempty string")
    return ProposalBatch(
        image_id=image_id,
        image_size=(w, h),
        boxes=clamped,
        probs=probs,
        feature_rows=rows,
        features_file=features_file,
    )


def load_proposals(path, n_categories=None, n_feature_rows=None):
    """Load a JSONL proposal fixture, validating every line.

    ``n_categories`` / ``n_feature_rows`` enable cross-checks against the
    lexicon and the referenced embedding file.
    """
    batches = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProposalFormatError(f"{where}: invalid JSON: {exc.msg}") from exc
            batch = _parse_batch(obj, where, n_categories=n_categories)
            if n_feature_rows is not None and len(batch) and batch.feature_rows.max() >= n_feature_rows:
                raise ProposalFormatError(
                    f"{where}: feature row {int(batch.feature_rows.max())} out of range "
                    f"(features file has {n_feature_rows} rows)"
                )
            batches.append(batch)
    return batches


def save_proposals(path, batches):
    """Write batches as JSONL (deterministic key order)."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in batches:
            obj = {
                "boxes": [[float(v) for v in row] for row in np.asarray(b.boxes)],
                "feature_rows": [int(v) for v in np.asarray(b.feature_rows)],
                "features_file": b.features_file,
                "image_id": b.image_id,
                "image_size": [float(b.image_size[0]), float(b.image_size[1])],
                "probs": [[float(v) for v in row] for row in np.asarray(b.probs)],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
