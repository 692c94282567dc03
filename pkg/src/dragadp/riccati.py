"""Model-based optimal-control solvers.

Three routes to the stabilizing solution of the continuous-time algebraic
Riccati equation live here: a direct solve used as the exactness oracle,
Newton-type policy iteration from a stabilizing gain, and value iteration
with diminishing step sizes and expanding norm-ball projection, which needs
no stabilizing initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import linops


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted before the stopping test fired."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class AreSolution:
    """Stabilizing Riccati solution with its feedback gain and residual."""

    p: np.ndarray
    k: np.ndarray
    residual: float


@dataclass(frozen=True, eq=False)
class ViSchedule:
    """Step sizes, projection bounds and stopping rule for value iteration.

    Step sizes are ``epsilon_scale / (k + epsilon_offset)``: positive,
    diverging in sum and vanishing in the limit for any positive constants.
    The projection bound grows as ``bound_scale * (r + 1)`` unless
    ``bound_fixed`` pins it to a known a-priori bound on the solution.
    """

    epsilon_scale: float = 1.0
    epsilon_offset: float = 1.0
    bound_scale: float = 10.0
    bound_fixed: float | None = None
    threshold: float = 1e-6
    p0: np.ndarray | None = None
    max_iterations: int = 1_000_000

    def __post_init__(self):
        if self.epsilon_scale <= 0 or self.epsilon_offset <= 0:
            raise ValueError("step-size schedule must be positive")
        if self.bound_fixed is not None and self.bound_fixed <= 0:
            raise ValueError("fixed bound must be positive")
        if self.bound_fixed is None and self.bound_scale <= 0:
            raise ValueError("bound growth rate must be positive")
        if self.threshold <= 0:
            raise ValueError("stopping threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("iteration budget must be positive")
        if self.p0 is not None:
            p0 = linops.symmetrize(self.p0, rtol=1e-9)
            if np.linalg.eigvalsh(p0)[0] <= 0:
                raise ValueError("initial value matrix must be positive definite")
            object.__setattr__(self, "p0", p0)

    def epsilon(self, k):
        return self.epsilon_scale / (k + self.epsilon_offset)

    def bound(self, r):
        if self.bound_fixed is not None:
            return self.bound_fixed
        return self.bound_scale * (r + 1)

    def initial_value(self, n):
        if self.p0 is None:
            return np.eye(n)
        if self.p0.shape != (n, n):
            raise ValueError("initial value matrix has the wrong dimension")
        return self.p0.copy()


@dataclass
class ViTrace:
    """Per-iteration record of a value-iteration run."""

    metrics: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    reset_iterations: list = field(default_factory=list)
    iterations: int = 0

    @property
    def resets(self):
        return len(self.reset_iterations)


def are_residual(a, b, q, r, p):
    """Relative Riccati residual, Frobenius norm over the cost norm."""
    res = a.T @ p + p @ a + q - p @ b @ np.linalg.solve(r, b.T @ p)
    return float(np.linalg.norm(res) / np.linalg.norm(q))


def lyapunov(a, q):
    """Solve ``A' P + P A + Q = 0`` through the vectorized linear system."""
    a = np.asarray(a, dtype=float)
    q = linops.symmetrize(q, rtol=1e-6)
    n = a.shape[0]
    op = np.kron(np.eye(n), a.T) + np.kron(a.T, np.eye(n))
    p_vec = np.linalg.solve(op, -linops.vec(q))
    return 0.5 * (p_vec.reshape((n, n), order="F")
                  + p_vec.reshape((n, n), order="F").T)


def _check_shapes(a, b, q, r):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = linops.symmetrize(q, rtol=1e-9)
    r = linops.symmetrize(r, rtol=1e-9)
    if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise ValueError("A must be square and conformable with B")
    if q.shape != a.shape or r.shape != (b.shape[1], b.shape[1]):
        raise ValueError("cost matrices have inconsistent dimensions")
    return a, b, q, r


def _sqrt_psd(q):
    vals, vecs = np.linalg.eigh(q)
    if vals[0] < -1e-12 * max(vals[-1], 1.0):
        raise ValueError("state cost must be positive semidefinite")
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _refine_are_extended(a, b, q, r, p64, target=1e-10, dps=50, steps=6):
    """Newton refinement of a Riccati solution in extended precision.

    Badly scaled plants can push the value matrix so far above the cost
    scale that the residual drowns in double-precision rounding of the
    individual terms; a couple of Newton steps in software floats settle
    the true residual.  Returns the refined matrix rounded back to floats
    together with the certified residual of the unrounded solution.
    """
    import mpmath as mp

    n = a.shape[0]
    with mp.workdps(dps):
        def to_mp(m):
            return mp.matrix([[mp.mpf(float(v)) for v in row]
                              for row in np.atleast_2d(m)])

        a_mp, b_mp, q_mp, r_mp = map(to_mp, (a, b, q, r))
        r_inv = r_mp ** -1
        p = to_mp(p64)
        q_norm = mp.mnorm(q_mp, "f")

        def residual_of(p_cur):
            return (a_mp.T * p_cur + p_cur * a_mp + q_mp
                    - p_cur * b_mp * r_inv * b_mp.T * p_cur)

        def lyap(a_cl, w):
            at = a_cl.T
            op = mp.zeros(n * n, n * n)
            for i in range(n):
                for j in range(n):
                    for k in range(n):
                        op[j * n + i, j * n + k] += at[i, k]
                        op[j * n + i, k * n + i] += at[j, k]
            rhs = mp.matrix(n * n, 1)
            for j in range(n):
                for i in range(n):
                    rhs[j * n + i] = -w[i, j]
            sol = mp.lu_solve(op, rhs)
            out = mp.zeros(n, n)
            for j in range(n):
                for i in range(n):
                    out[i, j] = sol[j * n + i]
            return (out + out.T) / 2

        rel = mp.mnorm(residual_of(p), "f") / q_norm
        for _ in range(steps):
            if rel < mp.mpf(target):
                break
            a_cl = a_mp - b_mp * (r_inv * b_mp.T * p)
            p = p + lyap(a_cl, residual_of(p))
            rel = mp.mnorm(residual_of(p), "f") / q_norm
        p_out = np.array([[float(p[i, j]) for j in range(n)]
                          for i in range(n)])
        return 0.5 * (p_out + p_out.T), float(rel)


def solve_are_exact(a, b, q, r, refine=True, residual_target=1e-8):
    """Direct stabilizing Riccati solve with certified residual.

    Preconditions are checked explicitly so failures name the violated
    assumption rather than surfacing as a numerical error.  When the
    double-precision residual cannot reach ``residual_target`` because of
    term cancellation, the solution is polished in extended precision and
    the reported residual is the certified one of the polished solution
    (the returned matrix is its double rounding).
    """
    a, b, q, r = _check_shapes(a, b, q, r)
    if np.linalg.eigvalsh(r)[0] <= 0:
        raise ValueError("input cost R must be positive definite")
    if not linops.stabilizable(a, b):
        raise ValueError("pair (A, B) is not stabilizable")
    if not linops.observable(a, _sqrt_psd(q)):
        raise ValueError("pair (A, sqrt(Q)) is not observable")
    p = scipy.linalg.solve_continuous_are(a, b, q, r)
    p = 0.5 * (p + p.T)
    if refine:
        # Newton steps polish the Schur-method solution in plain floats
        for _ in range(5):
            res_before = are_residual(a, b, q, r, p)
            if res_before < 1e-14:
                break
            k = np.linalg.solve(r, b.T @ p)
            p_next = lyapunov(a - b @ k, q + k.T @ r @ k)
            if are_residual(a, b, q, r, p_next) >= res_before:
                break
            p = p_next
    residual = are_residual(a, b, q, r, p)
    if refine and residual > residual_target:
        p, residual = _refine_are_extended(a, b, q, r, p,
                                           target=0.01 * residual_target)
    k = np.linalg.solve(r, b.T @ p)
    return AreSolution(p=p, k=k, residual=residual)


def kleinman_pi(a, b, q, r, k0, tol=1e-10, max_iterations=200):
    """Policy iteration from a stabilizing gain.

    Alternates Lyapunov evaluation of the current gain with the gain
    improvement step until successive value matrices agree to ``tol``
    relative.  Returns the value and gain sequences together with the
    final solution; the sequences start at the first evaluated pair.
    """
    a, b, q, r = _check_shapes(a, b, q, r)
    k = np.asarray(k0, dtype=float)
    if k.shape != (b.shape[1], a.shape[0]):
        raise ValueError("initial gain has the wrong shape")
    if not linops.is_hurwitz(a - b @ k):
        raise ValueError("initial gain is not stabilizing")
    p_seq, k_seq = [], []
    p_prev = None
    for _ in range(max_iterations):
        try:
            p = lyapunov(a - b @ k, q + k.T @ r @ k)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Lyapunov evaluation failed") from exc
        k = np.linalg.solve(r, b.T @ p)
        p_seq.append(p)
        k_seq.append(k)
        if p_prev is not None and \
                np.linalg.norm(p - p_prev) <= tol * np.linalg.norm(p):
            break
        p_prev = p
    else:
        raise ConvergenceError("policy iteration did not converge")
    solution = AreSolution(p=p_seq[-1], k=k_seq[-1],
                           residual=are_residual(a, b, q, r, p_seq[-1]))
    return p_seq, k_seq, solution


def _spectral_norm_sym(p):
    return float(np.abs(np.linalg.eigvalsh(p)).max())


def model_based_vi(a, b, q, r, schedule=None):
    """Value iteration on the known model.

    From any positive definite start the value matrix follows damped
    Riccati-residual steps; iterates escaping the current norm ball are
    reset to the start and the ball expands.  Stops when the step metric
    ``|P~_k - P_{k-1}| / eps_{k-1}`` falls below the threshold.
    """
    a, b, q, r = _check_shapes(a, b, q, r)
    schedule = schedule or ViSchedule()
    n = a.shape[0]
    r_inv_bt = np.linalg.solve(r, b.T)
    p0 = schedule.initial_value(n)
    p = p0.copy()
    trace = ViTrace()
    ball = 0
    for k in range(schedule.max_iterations):
        eps = schedule.epsilon(k)
        p_tilde = p + eps * (p @ a + a.T @ p + q - p @ b @ r_inv_bt @ p)
        p_tilde = 0.5 * (p_tilde + p_tilde.T)
        metric = _spectral_norm_sym(p_tilde - p) / eps
        trace.metrics.append(metric)
        trace.norms.append(_spectral_norm_sym(p_tilde))
        if _spectral_norm_sym(p_tilde) > schedule.bound(ball):
            trace.reset_iterations.append(k)
            p = p0.copy()
            ball += 1
        else:
            p = p_tilde
        trace.iterations = k + 1
        if metric < schedule.threshold:
            break
    else:
        raise ConvergenceError(
            f"value iteration hit the {schedule.max_iterations} iteration cap",
            trace=trace)
    k_gain = r_inv_bt @ p
    solution = AreSolution(p=p, k=k_gain, residual=are_residual(a, b, q, r, p))
    return solution, trace
