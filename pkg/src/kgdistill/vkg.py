"""Vision knowledge graph: one node vector per category, updated per batch.

Nodes start from category text embeddings. Each batch contributes argmax
assigned feature centroids; nodes move toward their centroid by EMA and,
in the fully dynamic mode, are then smoothed through the graph operator
W = (I - alpha*L)^-1 built from the batch affinity. Calibration multiplies
teacher probabilities by a softmax over node cosines.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embio import load_embeddings, save_embeddings
from .errors import DimMismatch, TooFewCategories, ZeroVector
from .linalg import affinity, row_softmax, smoothing_solve, sym_normalize

STATIC = "static"
DYNAMIC_NO_SMOOTH = "dynamic_no_smooth"
DYNAMIC = "dynamic"
VKG_MODES = (STATIC, DYNAMIC_NO_SMOOTH, DYNAMIC)


@dataclass
class VisionKnowledgeGraph:
    nodes: np.ndarray  # N_c x d
    lam: float = 0.99  # EMA weight on the previous node value
    alpha: float = 0.5  # smoothing scale
    mode: str = DYNAMIC
    raw_smoothing: bool = False  # apply W without row normalization

    @property
    def n_categories(self):
        return self.nodes.shape[0]

    @property
    def dim(self):
        return self.nodes.shape[1]


@dataclass
class CentroidBatch:
    """Per-category mean feature of argmax-assigned proposals."""

    centroids: np.ndarray  # N_c x d, row i meaningful iff counts[i] > 0
    counts: np.ndarray  # N_c

    @property
    def present(self):
        return self.counts > 0


def vkg_init(category_embeddings, lam=0.99, alpha=0.5, mode=DYNAMIC, raw_smoothing=False):
    emb = np.array(category_embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise TooFewCategories("vision graph needs at least 2 category embeddings")
    if mode not in VKG_MODES:
        raise ValueError(f"mode must be one of {VKG_MODES}, got {mode!r}")
    if not (0.0 < lam < 1.0) and lam != 1.0:
        # lam == 1.0 is tolerated as the "frozen EMA" boundary used in tests
        raise ValueError(f"lambda must lie in (0, 1], got {lam}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return VisionKnowledgeGraph(
        nodes=emb, lam=lam, alpha=alpha, mode=mode, raw_smoothing=raw_smoothing
    )


def batch_centroids(features, p_hat):
    """Mean feature per category, assigning each proposal by argmax of p_hat.

    Exact probability ties break toward the lowest category index. Absent
    categories get count 0 and a zero placeholder row.
    """
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(p_hat, dtype=np.float64)
    if p.ndim != 2:
        raise DimMismatch("p_hat must be a 2-D probability matrix")
    if f.shape[0] != p.shape[0]:
        raise DimMismatch(f"{f.shape[0]} feature rows vs {p.shape[0]} probability rows")
    n_c = p.shape[1]
    counts = np.zeros(n_c, dtype=np.int64)
    sums = np.zeros((n_c, f.shape[1] if f.ndim == 2 else 0), dtype=np.float64)
    if f.shape[0]:
        assigned = p.argmax(axis=1)  # first maximum wins: lowest index on ties
        np.add.at(counts, assigned, 1)
        np.add.at(sums, assigned, f)
    centroids = np.zeros_like(sums)
    present = counts > 0
    centroids[present] = sums[present] / counts[present, None]
    return CentroidBatch(centroids=centroids, counts=counts)


def vkg_update(g: VisionKnowledgeGraph, c: CentroidBatch):
    """EMA step toward present centroids, then optional manifold smoothing.

    STATIC graphs are left untouched. Smoothing builds the affinity over
    centroid anchors (falling back to the current node for absent
    categories), and by default row-normalizes W so node magnitudes stay
    stable across updates; ``raw_smoothing`` applies W as-is.
    """
    if g.mode == STATIC:
        return g.nodes
    if c.centroids.shape != g.nodes.shape:
        raise DimMismatch(f"centroids {c.centroids.shape} vs nodes {g.nodes.shape}")
    present = c.present
    nodes = g.nodes.copy()
    nodes[present] = g.lam * nodes[present] + (1.0 - g.lam) * c.centroids[present]

    if g.mode == DYNAMIC:
        anchors = np.where(present[:, None], c.centroids, nodes)
        a = affinity(anchors, diag="zero")
        if a.sum(axis=1).min() < 1e-12:
            # The Gaussian kernel (near-)underflowed on some row: the batch
            # carries no usable graph structure, so leave the nodes as-is.
            warnings.warn("affinity underflowed; skipping smoothing", UserWarning)
        else:
            w = smoothing_solve(sym_normalize(a), g.alpha)
            if not g.raw_smoothing:
                w = w / w.sum(axis=1, keepdims=True)
            nodes = w @ nodes
    g.nodes = nodes
    return g.nodes


def vkg_calibrate(g: VisionKnowledgeGraph, features, p_hat, temperature=1.0):
    """Teacher probabilities reweighted by a softmax over node cosines."""
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(p_hat, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != g.dim:
        raise DimMismatch(f"features must be M x {g.dim}")
    if p.shape != (f.shape[0], g.n_categories):
        raise DimMismatch(f"p_hat must be {f.shape[0]} x {g.n_categories}, got {p.shape}")
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if f.shape[0] == 0:
        return np.zeros((0, g.n_categories))
    f_norms = np.linalg.norm(f, axis=1)
    zero = np.flatnonzero(f_norms == 0.0)
    if zero.size:
        raise ZeroVector("feature", int(zero[0]))
    v_norms = np.linalg.norm(g.nodes, axis=1)
    zero = np.flatnonzero(v_norms == 0.0)
    if zero.size:
        raise ZeroVector("node", int(zero[0]))
    cos = (f / f_norms[:, None]) @ (g.nodes / v_norms[:, None]).T
    weights = row_softmax(cos / temperature)
    return p * weights


def save_vkg(g: VisionKnowledgeGraph, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "alpha": g.alpha,
        "dim": int(g.dim),
        "lambda": g.lam,
        "mode": g.mode,
        "n_categories": int(g.n_categories),
        "nodes_file": "nodes.kgde",
        "raw_smoothing": g.raw_smoothing,
    }
    (directory / "vkg.json").write_text(
        json.dumps(header, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    save_embeddings(directory / "nodes.kgde", g.nodes)


def load_vkg(directory):
    directory = Path(directory)
    header = json.loads((directory / "vkg.json").read_text(encoding="utf-8"))
    nodes = load_embeddings(directory / header["nodes_file"])
    if nodes.shape != (header["n_categories"], header["dim"]):
        raise DimMismatch(
            f"checkpoint nodes are {nodes.shape}, header says "
            f"{(header['n_categories'], header['dim'])}"
        )
    return VisionKnowledgeGraph(
        nodes=nodes,
        lam=float(header["lambda"]),
        alpha=float(header["alpha"]),
        mode=header["mode"],
        raw_smoothing=bool(header.get("raw_smoothing", False)),
    )
