"""Language knowledge graph: extraction, graph-network reasoning, calibration.

Prompt embeddings form the graph nodes. Reasoning stacks proposal features
on top of the node features, builds a Gaussian affinity over the combined
rows (diagonal 1), and runs a two-layer graph convolution whose softmax
output yields per-category probabilities for proposals (``q_f``) and nodes
(``q_omega``). Training minimizes cross-entropy of each node against its
owning category; gradients are exact backpropagation with the affinity held
constant. Calibration multiplies teacher probabilities by ``q_f``.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embio import load_embeddings, save_embeddings
from .errors import (
    DimMismatch,
    DivergedGcn,
    NonFiniteInput,
    NumericalUnderflow,
    RowCountMismatch,
)
from .lexicon import PROMPT_MODES, PromptSet
from .linalg import affinity, row_softmax, sym_normalize

_LOG_CLAMP = 1e-300


@dataclass
class GcnParams:
    """Trainable weights of the two-layer graph convolution."""

    w0: np.ndarray  # d x h
    w1: np.ndarray  # h x n_categories

    @property
    def hidden_dim(self):
        return self.w0.shape[1]


@dataclass
class LanguageKnowledgeGraph:
    node_features: np.ndarray  # N_L x d, one row per prompt
    owner: np.ndarray  # N_L category indices
    n_categories: int
    gcn: GcnParams
    prompts: tuple[str, ...] = ()
    mode: str = "hierarchy"

    @property
    def n_nodes(self):
        return self.node_features.shape[0]

    @property
    def feature_dim(self):
        return self.node_features.shape[1]


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_gcn(feature_dim, hidden_dim, n_categories, seed=0):
    rng = np.random.Generator(np.random.Philox(key=seed))
    return GcnParams(
        w0=glorot_uniform(rng, feature_dim, hidden_dim),
        w1=glorot_uniform(rng, hidden_dim, n_categories),
    )


def lkg_extract(prompts: PromptSet, encoder, hidden_dim=256, seed=0):
    """Build the language graph by encoding every prompt.

    ``encoder`` is either a callable text -> vector or a precomputed matrix
    with one row per prompt (file-backed provider). All vectors must share
    one dimension; mismatches raise DimMismatch / RowCountMismatch.
    """
    n = len(prompts.prompts)
    if isinstance(encoder, np.ndarray):
        if encoder.ndim != 2 or encoder.shape[0] != n:
            raise RowCountMismatch(
                f"provider has {encoder.shape[0] if encoder.ndim == 2 else '?'} rows "
                f"for {n} prompts"
            )
        omega = np.array(encoder, dtype=np.float64)
    else:
        vecs = []
        dim = None
        for text in prompts.prompts:
            v = np.asarray(encoder(text), dtype=np.float64).ravel()
            if dim is None:
                dim = v.size
            elif v.size != dim:
                raise DimMismatch(f"encoder produced dims {dim} and {v.size}")
            vecs.append(v)
        omega = np.stack(vecs)
    return LanguageKnowledgeGraph(
        node_features=omega,
        owner=np.asarray(prompts.owner, dtype=np.int64),
        n_categories=prompts.n_categories,
        gcn=init_gcn(omega.shape[1], hidden_dim, prompts.n_categories, seed=seed),
        prompts=tuple(prompts.prompts),
        mode=prompts.mode,
    )


@dataclass
class GcnCache:
    a_hat: np.ndarray
    h0: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    q: np.ndarray
    n_proposals: int


def gcn_forward(g: LanguageKnowledgeGraph, f=None):
    """Two-layer graph convolution over stacked [proposals; nodes].

    Returns (q_f, q_omega, cache): row-stochastic category probabilities for
    the ``M`` proposal rows and the graph nodes, plus the intermediates
    needed for the backward pass. ``f`` may be None or empty (graph-only
    forward used during training on batches with no kept proposals).
    """
    omega = g.node_features
    if f is None:
        f = np.zeros((0, omega.shape[1]))
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != omega.shape[1]:
        raise DimMismatch(
            f"proposal features have {f.shape[1] if f.ndim == 2 else '?'} columns, "
            f"graph features have {omega.shape[1]}"
        )
    m = f.shape[0]
    h0 = np.vstack([f, omega])
    a_hat = sym_normalize(affinity(h0, diag="one"))
    z1 = a_hat @ (h0 @ g.gcn.w0)
    h1 = np.maximum(z1, 0.0)
    z2 = a_hat @ (h1 @ g.gcn.w1)
    q = row_softmax(z2)
    cache = GcnCache(a_hat=a_hat, h0=h0, z1=z1, h1=h1, q=q, n_proposals=m)
    return q[:m], q[m:], cache


def gcn_loss_and_grad(g: LanguageKnowledgeGraph, f=None):
    """Node-ownership cross-entropy and exact gradients for w0, w1.

    The affinity matrix is treated as a constant (no gradient through the
    bandwidth), matching standard graph-convolution practice.
    """
    _, q_omega, cache = gcn_forward(g, f)
    m = cache.n_proposals
    owners = g.owner
    picked = q_omega[np.arange(len(owners)), owners]
    if (picked < _LOG_CLAMP).any():
        warnings.warn(
            "node probability clamped before log", NumericalUnderflow, stacklevel=2
        )
        picked = np.maximum(picked, _LOG_CLAMP)
    loss = -float(np.log(picked).sum())

    # d(loss)/d(z2): softmax cross-entropy on node rows, zero on proposals.
    dz2 = cache.q.copy()
    dz2[np.arange(len(owners)) + m, owners] -= 1.0
    dz2[:m] = 0.0

    a_hat = cache.a_hat
    dw1 = (a_hat @ cache.h1).T @ dz2
    dh1 = a_hat @ (dz2 @ g.gcn.w1.T)
    dz1 = dh1 * (cache.z1 > 0.0)
    dw0 = (a_hat @ cache.h0).T @ dz1
    return loss, {"w0": dw0, "w1": dw1}


@dataclass
class GcnOptimizer:
    """Optimizer state for graph-network training: plain GD or Adam."""

    method: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    moments: dict = field(default_factory=dict)

    def _update(self, name, w, grad):
        if self.method == "gd":
            return w - self.lr * grad
        m, v = self.moments.get(name, (np.zeros_like(w), np.zeros_like(w)))
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.moments[name] = (m, v)
        m_hat = m / (1 - self.beta1 ** self.t)
        v_hat = v / (1 - self.beta2 ** self.t)
        return w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def gcn_step(g: LanguageKnowledgeGraph, f, opt: GcnOptimizer):
    """One training step on the graph weights; returns (params, loss).

    The updated params are also written back into ``g``. Non-finite
    gradients abort with DivergedGcn.
    """
    if opt.method not in ("adam", "gd"):
        raise ValueError(f"unknown gcn optimizer {opt.method!r}")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = gcn_loss_and_grad(g, f)
    except NonFiniteInput as exc:
        raise DivergedGcn(f"forward pass diverged: {exc}") from exc
    if not all(np.isfinite(v).all() for v in grads.values()) or not np.isfinite(loss):
        raise DivergedGcn("non-finite gradient in graph-network training")
    opt.t += 1
    params = GcnParams(
        w0=opt._update("w0", g.gcn.w0, grads["w0"]),
        w1=opt._update("w1", g.gcn.w1, grads["w1"]),
    )
    if not (np.isfinite(params.w0).all() and np.isfinite(params.w1).all()):
        raise DivergedGcn("non-finite parameters after optimizer step")
    g.gcn = params
    return params, loss


def lkg_calibrate(p_hat, q_f):
    """Per-proposal elementwise product of teacher and graph probabilities."""
    p = np.asarray(p_hat, dtype=np.float64)
    q = np.asarray(q_f, dtype=np.float64)
    if p.shape != q.shape:
        raise DimMismatch(f"teacher probs {p.shape} vs graph probs {q.shape}")
    return p * q


def save_lkg(g: LanguageKnowledgeGraph, directory):
    """Checkpoint: JSON header plus embedding-file payloads for the matrices."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "feature_dim": int(g.feature_dim),
        "files": {"omega": "omega.kgde", "w0": "w0.kgde", "w1": "w1.kgde"},
        "hidden_dim": int(g.gcn.hidden_dim),
        "mode": g.mode,
        "n_categories": int(g.n_categories),
        "owner": [int(v) for v in g.owner],
        "prompts": list(g.prompts),
    }
    (directory / "lkg.json").write_text(
        json.dumps(header, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    save_embeddings(directory / "omega.kgde", g.node_features)
    save_embeddings(directory / "w0.kgde", g.gcn.w0)
    save_embeddings(directory / "w1.kgde", g.gcn.w1)


def load_lkg(directory):
    directory = Path(directory)
    header = json.loads((directory / "lkg.json").read_text(encoding="utf-8"))
    if header["mode"] not in PROMPT_MODES:
        raise DimMismatch(f"unknown prompt mode {header['mode']!r} in checkpoint")
    omega = load_embeddings(directory / header["files"]["omega"])
    w0 = load_embeddings(directory / header["files"]["w0"])
    w1 = load_embeddings(directory / header["files"]["w1"])
    owner = np.asarray(header["owner"], dtype=np.int64)
    if omega.shape[0] != owner.size:
        raise RowCountMismatch(
            f"checkpoint has {omega.shape[0]} node rows for {owner.size} owners"
        )
    return LanguageKnowledgeGraph(
        node_features=omega,
        owner=owner,
        n_categories=int(header["n_categories"]),
        gcn=GcnParams(w0=w0, w1=w1),
        prompts=tuple(header["prompts"]),
        mode=header["mode"],
    )
