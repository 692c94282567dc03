"""Dense matrix helpers shared by the solvers, the simulator and the learner.

Conventions: ``vec`` stacks columns top to bottom.  ``vecs``/``vecv`` are the
half-vectorization pair for symmetric forms (off-diagonals doubled on the
matrix side) so that ``vecv(x) @ vecs(P) == x @ P @ x`` for symmetric ``P``.
"""

from __future__ import annotations

import numpy as np

HURWITZ_TOL = 1e-10
RANK_RTOL = 1e-10
SYMMETRY_RTOL = 1e-12

__all__ = [
    "RankDeficient",
    "bdiag",
    "constrained_quadratic_min",
    "is_hurwitz",
    "kron",
    "lstsq",
    "mat_from_vecs",
    "observable",
    "regulation_rank",
    "stabilizable",
    "symmetrize",
    "vec",
    "vecs",
    "vecv",
]


class RankDeficient(ValueError):
    """A least-squares system lost full column rank.

    Carries the numerical rank so callers can report by how much the data
    fell short of the excitation requirement.
    """

    def __init__(self, message, rank=None, required=None):
        super().__init__(message)
        self.rank = rank
        self.required = required


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def symmetrize(p, rtol=SYMMETRY_RTOL):
    """Return (P + P')/2, rejecting matrices that are not symmetric to rtol."""
    p = _as_matrix(p, "P")
    if p.shape[0] != p.shape[1]:
        raise ValueError("P must be square")
    scale = max(float(np.abs(p).max()), 1.0)
    if float(np.abs(p - p.T).max()) > rtol * scale:
        raise ValueError("matrix is not symmetric to within tolerance")
    return 0.5 * (p + p.T)


def vec(m):
    """Stack the columns of ``m`` into a single vector."""
    return _as_matrix(m, "M").flatten(order="F")


def _triu_pairs(m):
    return np.triu_indices(m)


def vecs(p, rtol=SYMMETRY_RTOL):
    """Half-vectorize a symmetric matrix, doubling off-diagonal entries.

    Ordering is the upper-triangular row scan
    ``[p11, 2 p12, ..., 2 p1m, p22, 2 p23, ..., pmm]``.
    """
    p = symmetrize(p, rtol=rtol)
    i, j = _triu_pairs(p.shape[0])
    weights = np.where(i == j, 1.0, 2.0)
    return weights * p[i, j]


def vecv(v):
    """Quadratic monomials of a vector in the ordering dual to :func:`vecs`."""
    v = np.asarray(v, dtype=float).ravel()
    i, j = _triu_pairs(v.size)
    return v[i] * v[j]


def vecv_rows(x):
    """Row-wise :func:`vecv` of an (N, n) array, returning (N, n(n+1)/2)."""
    x = np.asarray(x, dtype=float)
    i, j = _triu_pairs(x.shape[1])
    return x[:, i] * x[:, j]


def mat_from_vecs(h, m):
    """Invert :func:`vecs`: rebuild the symmetric m-by-m matrix."""
    h = np.asarray(h, dtype=float).ravel()
    if h.size != m * (m + 1) // 2:
        raise ValueError("vector length does not match matrix dimension")
    out = np.zeros((m, m))
    i, j = _triu_pairs(m)
    out[i, j] = np.where(i == j, h, 0.5 * h)
    return out + np.triu(out, 1).T


def kron(a, b):
    """Kronecker product of two matrices."""
    return np.kron(_as_matrix(a, "A"), _as_matrix(b, "B"))


def bdiag(blocks):
    """Assemble a block-diagonal matrix from a non-empty list of blocks."""
    blocks = [_as_matrix(b, "block") for b in blocks]
    if not blocks:
        raise ValueError("bdiag needs at least one block")
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def is_hurwitz(a, tol=HURWITZ_TOL):
    """True when every eigenvalue of ``a`` has real part below ``-tol``."""
    a = _as_matrix(a, "A")
    if a.shape[0] != a.shape[1]:
        raise ValueError("A must be square")
    return bool(np.max(np.linalg.eigvals(a).real) < -tol)


def lstsq(m, rhs, rank_rtol=RANK_RTOL):
    """Least-squares solve of ``m @ z = rhs`` requiring full column rank.

    Columns are equilibrated before the SVD solve; the rank test applies to
    the scaled matrix so badly scaled but informative columns still count.
    Raises :class:`RankDeficient` with the numerical rank otherwise.
    """
    m = _as_matrix(m, "M")
    rhs = np.asarray(rhs, dtype=float)
    col_norms = np.linalg.norm(m, axis=0)
    if np.any(col_norms == 0.0):
        rank = int(np.count_nonzero(col_norms))
        raise RankDeficient(
            f"matrix has {m.shape[1] - rank} identically zero columns",
            rank=rank, required=m.shape[1])
    scaled = m / col_norms
    z, _, rank, _ = np.linalg.lstsq(scaled, rhs, rcond=rank_rtol)
    if rank < m.shape[1]:
        raise RankDeficient(
            f"numerical rank {rank} below required {m.shape[1]}",
            rank=int(rank), required=m.shape[1])
    if z.ndim == 1:
        return z / col_norms
    return z / col_norms[:, None]


def constrained_quadratic_min(m, rhs, w_diag, rank_rtol=RANK_RTOL):
    """Minimize ``z' diag(w) z`` over the least-squares solutions of ``m z = rhs``.

    When the constraint matrix has full column rank the feasibility
    minimizer is unique and returned directly.  Otherwise the weighted
    quadratic selects one member of the affine solution family.  Columns
    are equilibrated so the rank decision survives wide column-scale
    spreads.

    Returns ``(z, unique)``.
    """
    m = _as_matrix(m, "M")
    rhs = np.asarray(rhs, dtype=float).ravel()
    w = np.asarray(w_diag, dtype=float).ravel()
    if w.size != m.shape[1] or np.any(w <= 0):
        raise ValueError("w_diag must be a positive vector matching columns")
    col = np.linalg.norm(m, axis=0)
    col[col == 0.0] = 1.0
    u, s, vt = np.linalg.svd(m / col, full_matrices=True)
    tol = s[0] * rank_rtol if s.size else 0.0
    rank = int(np.count_nonzero(s > tol))
    s_inv = np.zeros_like(s)
    s_inv[:rank] = 1.0 / s[:rank]
    y_ls = vt.T[:, :s.size] @ (s_inv * (u.T[:s.size] @ rhs))
    if rank == m.shape[1]:
        return y_ls / col, True
    # weights transform with the column scaling: z = y / col
    w_scaled = w / col ** 2
    null_basis = vt[rank:].T
    gram = null_basis.T @ (w_scaled[:, None] * null_basis)
    alpha = np.linalg.solve(gram, -null_basis.T @ (w_scaled * y_ls))
    return (y_ls + null_basis @ alpha) / col, False


def _pbh_rank_ok(stacked, scale, rank_rtol):
    s = np.linalg.svd(stacked, compute_uv=False)
    return s[-1] > rank_rtol * max(s[0], scale)


def stabilizable(a, b, rank_rtol=1e-8):
    """PBH test: every eigenvalue with nonnegative real part is controllable."""
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    n = a.shape[0]
    scale = max(np.abs(a).max(), np.abs(b).max())
    for lam in np.linalg.eigvals(a):
        if lam.real < -1e-12:
            continue
        stacked = np.hstack([a - lam * np.eye(n), b]).astype(complex)
        if not _pbh_rank_ok(stacked, scale, rank_rtol):
            return False
    return True


def observable(a, c, rank_rtol=1e-8):
    """PBH test at every eigenvalue of ``a`` for the pair (C, A)."""
    a = _as_matrix(a, "A")
    c = _as_matrix(c, "C")
    n = a.shape[0]
    scale = max(np.abs(a).max(), np.abs(c).max())
    for lam in np.linalg.eigvals(a):
        stacked = np.vstack([a - lam * np.eye(n), c]).astype(complex)
        if not _pbh_rank_ok(stacked, scale, rank_rtol):
            return False
    return True


def regulation_rank(a, b, c, lam, rank_rtol=RANK_RTOL):
    """Numerical rank of ``[[A - lam I, B], [C, 0]]`` at a complex ``lam``."""
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    c = _as_matrix(c, "C")
    n = a.shape[0]
    p = c.shape[0]
    m = b.shape[1]
    pencil = np.zeros((n + p, n + m), dtype=complex)
    pencil[:n, :n] = a - lam * np.eye(n)
    pencil[:n, n:] = b
    pencil[n:, :n] = c
    s = np.linalg.svd(pencil, compute_uv=False)
    return int(np.count_nonzero(s > rank_rtol * s[0]))
