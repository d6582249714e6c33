"""Dense linear-algebra and statistics primitives shared by all modules.

Everything operates on plain 2-D float64 numpy arrays (row-major). All
functions are pure and deterministic: same input bits, same output bits.
The affinity/normalize/solve trio implements the graph machinery used by
both knowledge graphs: Gaussian affinity with a variance bandwidth,
symmetric degree normalization, and the (I - alpha*L)^-1 smoothing solve.
"""

import warnings

import numpy as np

from .errors import (
    BadAlpha,
    DegenerateBandwidth,
    EmptyInput,
    IsolatedNode,
    NonFiniteInput,
    SingularSystem,
)

# Bandwidth floor used when all pairwise distances coincide.
EPS_BANDWIDTH = 1e-12


def as_matrix(m, name="matrix"):
    """Coerce to a C-contiguous 2-D float64 array, rejecting non-finite input."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise EmptyInput(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.size == 0:
        raise EmptyInput(f"{name} is empty ({a.shape[0]}x{a.shape[1]})")
    if not np.isfinite(a).all():
        raise NonFiniteInput(f"{name} contains NaN/Inf")
    return a


def row_softmax(m):
    """Row-wise softmax with max-subtraction for overflow safety.

    Each output row sums to 1 within 1e-9 and is invariant to adding a
    constant to the input row.
    """
    a = as_matrix(m, "softmax input")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def pairwise_sq_dists(x):
    """Exactly symmetric matrix of squared Euclidean row distances."""
    sq = np.einsum("ij,ij->i", x, x)
    gram = x @ x.T
    gram = (gram + gram.T) / 2.0
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def affinity(h, diag):
    """Gaussian affinity over row features with a variance bandwidth.

    Off-diagonal entries are exp(-d_ij^2 / Var({d_ij^2})) where Var is the
    population variance over all off-diagonal squared distances (self
    distances excluded). The diagonal is set to 1 or 0 per ``diag``, the
    two conventions used by the language and vision graphs respectively.

    Parameters
    ----------
    h : array, n x d
        Row feature matrix, n >= 1.
    diag : {"one", "zero"}
        Diagonal convention.

    Returns
    -------
    array, n x n, exactly symmetric, entries in [0, 1].

    Warns with DegenerateBandwidth and floors the bandwidth at 1e-12 when
    the variance is zero (e.g. identical rows, or n == 2 where only one
    distinct pair exists).
    """
    if diag not in ("one", "zero"):
        raise ValueError(f"diag must be 'one' or 'zero', got {diag!r}")
    x = as_matrix(h, "affinity input")
    n = x.shape[0]
    diag_val = 1.0 if diag == "one" else 0.0
    if n == 1:
        # Single node: no pairwise structure, only the diagonal convention.
        return np.array([[diag_val]])
    d2 = pairwise_sq_dists(x)
    off = d2[~np.eye(n, dtype=bool)]
    var = off.var()  # population variance, no Bessel correction
    if var <= 0.0:
        warnings.warn(
            "all pairwise distances equal; flooring affinity bandwidth",
            DegenerateBandwidth,
            stacklevel=2,
        )
        var = EPS_BANDWIDTH
    a = np.exp(-d2 / var)
    np.fill_diagonal(a, diag_val)
    return a


def sym_normalize(a):
    """Symmetric degree normalization D^-1/2 A D^-1/2 with D_ii = sum_j A_ij.

    Requires a square nonnegative matrix; a zero row sum raises IsolatedNode
    naming the offending row.
    """
    m = as_matrix(a, "adjacency")
    n, c = m.shape
    if n != c:
        raise EmptyInput(f"adjacency must be square, got {n}x{c}")
    if (m < 0).any():
        raise NonFiniteInput("adjacency must be nonnegative")
    deg = m.sum(axis=1)
    zero = np.flatnonzero(deg == 0.0)
    if zero.size:
        raise IsolatedNode(int(zero[0]))
    inv_sqrt = 1.0 / np.sqrt(deg)
    # Outer product first keeps the result exactly symmetric for symmetric A.
    return m * (inv_sqrt[:, None] * inv_sqrt[None, :])


def smoothing_solve(l, alpha):
    """Exact dense inverse of (I - alpha*L) via LU with partial pivoting.

    ``l`` is expected to come from sym_normalize (spectral radius <= 1), so
    the system is nonsingular for every alpha in (0, 1); the singularity
    guard exists for invalid inputs only.
    """
    if not (0.0 < alpha < 1.0):
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")
    m = as_matrix(l, "smoothing operator")
    n, c = m.shape
    if n != c:
        raise EmptyInput(f"smoothing operator must be square, got {n}x{c}")
    system = np.eye(n) - alpha * m
    try:
        w = np.linalg.solve(system, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.isfinite(w).all():
        raise SingularSystem("solve produced non-finite entries")
    return w


def l2_normalize_rows(x, eps=0.0):
    """Scale each row to unit L2 norm; zero rows raise unless eps > 0."""
    m = as_matrix(x, "features")
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if eps > 0.0:
        norms = np.maximum(norms, eps)
    elif (norms == 0.0).any():
        raise NonFiniteInput("cannot normalize zero-norm row")
    return m / norms[:, None]


def cosine_matrix(a, b):
    """Cosine similarity between every row of ``a`` and every row of ``b``."""
    return l2_normalize_rows(a) @ l2_normalize_rows(b).T
