"""Data-driven value iteration for optimal output regulation.

The learner never touches the plant matrices.  It deviates the recorded
state by a family of candidate steady-state maps, integrates quadratic
signal products over a window sequence, and solves one linear data
equation per iteration whose unknowns stack the value-update matrix, the
improved gain, and the exosystem coupling images.  After the value matrix
converges, the same data equation evaluated on the remaining deviation
maps recovers the input and disturbance matrices and the steady-state
pair, completing the feedback-feedforward policy.

Badly scaled plants are handled by an optional linear reparametrization of
state and time (plain unit conversion from known scenario constants, no
model knowledge); all learned quantities are mapped back exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import linops
from .linops import RankDeficient
from .riccati import ConvergenceError, ViSchedule, ViTrace


@dataclass(frozen=True, eq=False)
class XjBasis:
    """Deviation maps: zero, one output-consistent particular map, and an
    orthonormal basis of the output-annihilated maps."""

    x_list: tuple

    @property
    def n(self):
        return self.x_list[0].shape[0]

    @property
    def q(self):
        return self.x_list[0].shape[1]

    @property
    def count(self):
        return len(self.x_list)


def build_xj_basis(c, f, tol=1e-10):
    """Construct the h + 2 deviation maps for the data equations.

    ``X_0 = 0``; ``X_1`` is the minimum-norm solution of ``C X = -F``; the
    rest reshape an orthonormal null-space basis of ``I_q (x) C``, so every
    later map satisfies ``C X_j = 0`` exactly.
    """
    c = np.asarray(c, dtype=float)
    f = np.asarray(f, dtype=float)
    p, n = c.shape
    q = f.shape[1]
    if f.shape[0] != p:
        raise ValueError("C and F must have matching row counts")
    if np.linalg.matrix_rank(c) < p:
        raise ValueError("output map C must have full row rank")
    x0 = np.zeros((n, q))
    x1 = -np.linalg.pinv(c) @ f
    if np.linalg.norm(c @ x1 + f) > tol:
        raise ValueError("particular solution of C X = -F failed")
    kernel = scipy.linalg.null_space(np.kron(np.eye(q), c))
    h = (n - p) * q
    if kernel.shape[1] != h:
        raise ValueError("unexpected null-space dimension")
    mats = [x0, x1]
    for col in range(h):
        xj = kernel[:, col].reshape((n, q), order="F")
        if np.linalg.norm(c @ xj) > tol:
            raise ValueError("null-space basis member leaks into the output")
        mats.append(xj)
    return XjBasis(x_list=tuple(mats))


@dataclass(frozen=True)
class NoiseSpec:
    """Seeded sum-of-sinusoids exploration signal, per input axis.

    ``amplitude`` is per sinusoid, so the signal is bounded by
    ``n_per_axis * amplitude`` on each axis.
    """

    amplitude: float = 1.0
    n_per_axis: int = 100
    freq_low: float = 0.01
    freq_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_per_axis < 1:
            raise ValueError("need at least one sinusoid per axis")
        if self.amplitude <= 0:
            raise ValueError("noise amplitude must be positive")
        if not 0 < self.freq_low < self.freq_high:
            raise ValueError("need 0 < freq_low < freq_high")


def make_exploration_noise(spec):
    """Deterministic exploration signal from a seeded spectrum.

    Frequencies are log-uniform over the configured band and phases
    uniform, all drawn once from the seed, so equal seeds reproduce the
    signal bit for bit.
    """
    rng = np.random.default_rng(spec.seed)
    freqs = np.exp(rng.uniform(np.log(spec.freq_low),
                               np.log(spec.freq_high),
                               size=(3, spec.n_per_axis)))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(3, spec.n_per_axis))

    def eta(t):
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            return spec.amplitude * np.sin(
                freqs * t_arr + phases).sum(axis=1)
        angles = freqs[:, :, None] * t_arr[None, None, :] \
            + phases[:, :, None]
        return spec.amplitude * np.sin(angles).sum(axis=1).T

    return eta


@dataclass(frozen=True, eq=False)
class DataLog:
    """Window integrals of the quadratic data signals for every deviation map.

    Per map ``j``: ``i_mats[j]`` integrates the symmetric state monomials,
    ``gamma_u[j]`` and ``gamma_v[j]`` the state-input and state-exostate
    products, and ``deltas[j]`` holds the monomial differences across each
    window.
    """

    i_mats: tuple
    gamma_u: tuple
    gamma_v: tuple
    deltas: tuple
    window_times: np.ndarray
    window_dt: float
    rho: int

    @property
    def n(self):
        # i-columns count n(n+1)/2
        cols = self.i_mats[0].shape[1]
        return int(round((np.sqrt(8 * cols + 1) - 1) / 2))

    @property
    def m(self):
        return self.gamma_u[0].shape[1] // self.n

    @property
    def q_dim(self):
        return self.gamma_v[0].shape[1] // self.n

    @property
    def required_rank(self):
        n, m, q = self.n, self.m, self.q_dim
        return n * (n + 1) // 2 + (m + q) * n


def _cumtrapz(y, dt):
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0, out=out[1:])
    return out


def accumulate(traj, basis, window_dt, rho=None):
    """Integrate the data signals over ``rho`` contiguous windows.

    The trajectory must be sampled at a fixed step dividing the window
    length; integrals use the trapezoidal rule on that grid.
    """
    dt = traj.dt
    ratio = window_dt / dt
    spw = int(round(ratio))
    if spw < 1 or abs(ratio - spw) > 1e-6 * max(ratio, 1.0):
        raise ValueError("window length must be a multiple of the sample step")
    n_samples = traj.times.size
    if rho is None:
        rho = (n_samples - 1) // spw
    needed = rho * spw + 1
    if n_samples < needed:
        raise ValueError(
            f"trajectory covers {n_samples - 1} steps but {rho} windows "
            f"need {needed - 1}")
    edges = spw * np.arange(rho + 1)
    i_mats, gamma_u, gamma_v, deltas = [], [], [], []
    u = traj.u[:needed]
    v = traj.v[:needed]
    for xj in basis.x_list:
        xbar = traj.x[:needed] - v @ xj.T
        vv = linops.vecv_rows(xbar)
        xu = (xbar[:, :, None] * u[:, None, :]).reshape(needed, -1)
        xv = (xbar[:, :, None] * v[:, None, :]).reshape(needed, -1)
        cv = _cumtrapz(vv, dt)
        cu = _cumtrapz(xu, dt)
        cx = _cumtrapz(xv, dt)
        i_mats.append(cv[edges[1:]] - cv[edges[:-1]])
        gamma_u.append(cu[edges[1:]] - cu[edges[:-1]])
        gamma_v.append(cx[edges[1:]] - cx[edges[:-1]])
        deltas.append(vv[edges[1:]] - vv[edges[:-1]])
    return DataLog(i_mats=tuple(i_mats), gamma_u=tuple(gamma_u),
                   gamma_v=tuple(gamma_v), deltas=tuple(deltas),
                   window_times=traj.times[edges].copy(),
                   window_dt=window_dt, rho=int(rho))


def check_rank(log, j, rank_rtol=linops.RANK_RTOL):
    """Excitation test on the raw data block of one deviation map."""
    stacked = np.hstack([log.i_mats[j], log.gamma_u[j], log.gamma_v[j]])
    col_norms = np.linalg.norm(stacked, axis=0)
    nonzero = col_norms > 0
    scaled = stacked[:, nonzero] / col_norms[nonzero]
    if scaled.shape[1] == 0:
        return False, 0
    s = np.linalg.svd(scaled, compute_uv=False)
    rank = int(np.count_nonzero(s > rank_rtol * s[0]))
    return rank == log.required_rank, rank


def theta_matrix(log, j, r):
    """Regressor of the data equation for deviation map ``j``."""
    n, m = log.n, log.m
    r = np.asarray(r, dtype=float)
    return np.hstack([log.i_mats[j],
                      2.0 * log.gamma_u[j] @ np.kron(np.eye(n), r),
                      2.0 * log.gamma_v[j]])


class ThetaSolver:
    """Prefactored least-squares solver for one regressor matrix.

    The factorization happens once; every iteration is a pair of small
    matrix products.  Columns are equilibrated so the rank test and the
    solve are insensitive to the wide dynamic range the input-cost factor
    induces.
    """

    def __init__(self, theta, rank_rtol=linops.RANK_RTOL):
        theta = np.asarray(theta, dtype=float)
        self.shape = theta.shape
        col_norms = np.linalg.norm(theta, axis=0)
        required = theta.shape[1]
        if np.any(col_norms == 0.0):
            rank = int(np.count_nonzero(col_norms))
            raise RankDeficient("regressor has identically zero columns",
                                rank=rank, required=required)
        u, s, vt = np.linalg.svd(theta / col_norms, full_matrices=False)
        rank = int(np.count_nonzero(s > rank_rtol * s[0]))
        if rank < required:
            raise RankDeficient(
                f"regressor rank {rank} below required {required}",
                rank=rank, required=required)
        self._col_norms = col_norms
        self._u = u
        self._s_inv = 1.0 / s
        self._vt = vt
        self._theta = theta

    def solve(self, rhs):
        z = (self._vt.T * self._s_inv) @ (self._u.T @ rhs)
        z = z / self._col_norms
        resid = np.linalg.norm(self._theta @ z - rhs) \
            / max(np.linalg.norm(rhs), 1e-300)
        return z, float(resid)


def _split_solution(z, n, m, q):
    n_sym = n * (n + 1) // 2
    h = linops.mat_from_vecs(z[:n_sym], n)
    k = z[n_sym:n_sym + m * n].reshape((m, n), order="F")
    w = z[n_sym + m * n:].reshape((q, n), order="F")
    return h, k, w


def solve_data_equation(solver, delta, p, n, m, q):
    """One least-squares solve of the data equation at value matrix ``p``.

    Returns the value-update matrix, the improved gain, the exosystem
    coupling image ``(D - S(X_j))' P`` and the solve residual.
    """
    rhs = delta @ linops.vecs(p)
    z, resid = solver.solve(rhs)
    h, k, w = _split_solution(z, n, m, q)
    return h, k, w, resid


def vi_data_step(log, p_k, q, r, eps_k, b_r, p0, solver=None):
    """Single stochastic-approximation value update from window data.

    Assembles the regressor only when no prefactored ``solver`` is given;
    iterative callers must reuse one solver since the regressor does not
    depend on the iteration.
    """
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    if solver is None:
        solver = ThetaSolver(theta_matrix(log, 0, r))
    n, m, q_dim = log.n, log.m, log.q_dim
    h, k_next, w, _ = solve_data_equation(solver, log.deltas[0], p_k,
                                          n, m, q_dim)
    p_tilde = p_k + eps_k * (h + q - k_next.T @ r @ k_next)
    p_tilde = 0.5 * (p_tilde + p_tilde.T)
    if float(np.abs(np.linalg.eigvalsh(p_tilde)).max()) > b_r:
        return p0.copy(), k_next, h, True
    return p_tilde, k_next, h, False


@dataclass(frozen=True, eq=False)
class Scaling:
    """Linear state/time reparametrization used inside the learner.

    ``state_scale`` multiplies raw state rows to give scaled states and
    ``time_scale`` multiplies raw times.  Both derive from known scenario
    constants (a length unit and the mean motion), never from the plant
    matrices, so applying them keeps the algorithm model-free.
    """

    state_scale: np.ndarray
    time_scale: float

    @classmethod
    def natural(cls, n_bar, length_km=1.0):
        s = np.array([1.0, 1.0, 1.0,
                      1.0 / n_bar, 1.0 / n_bar, 1.0 / n_bar]) / length_km
        return cls(state_scale=s, time_scale=n_bar)

    def scale_q(self, q):
        t_diag = 1.0 / self.state_scale
        return q * np.outer(t_diag, t_diag)

    def unscale_gain(self, k_hat):
        return k_hat * self.state_scale[None, :]

    def unscale_value(self, p_hat):
        s = self.state_scale
        return (p_hat * np.outer(s, s)) / self.time_scale

    def unscale_state_map(self, x_hat):
        return x_hat / self.state_scale[:, None]

    def unscale_input_map(self, b_hat):
        return (b_hat / self.state_scale[:, None]) * self.time_scale


@dataclass
class AdpTrace:
    """Diagnostics of one learning run."""

    vi: ViTrace
    theta_assemblies: int
    rank_checks: tuple
    solve_residuals: list = field(default_factory=list)
    p_condition: float = float("nan")
    regulator_unique: bool = True


@dataclass(frozen=True, eq=False)
class LearnedPolicy:
    """Output of the data-driven iteration: gains, recovered model pieces
    and the run trace."""

    k: np.ndarray
    l: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    b_hat: np.ndarray
    d_hat: np.ndarray
    trace: AdpTrace


def _scaled_trajectory(traj, scaling):
    from .sim import Trajectory
    return Trajectory(times=traj.times * scaling.time_scale,
                      x=traj.x * scaling.state_scale[None, :],
                      v=traj.v.copy(), u=traj.u.copy(), e=traj.e.copy())


def run_algorithm2(traj, basis, q, r, schedule=None, window_dt=5.0,
                   rho=None, scaling=None):
    """Learn the feedback-feedforward policy from one recorded trajectory.

    Phases: integrate the window data for every deviation map and verify
    excitation; iterate the value update on the zero-map data until the
    step metric crosses the threshold; recover the exosystem coupling on
    the remaining maps, then the input and disturbance matrices; solve the
    steady-state problem from the recovered pieces and assemble the gains.
    """
    q = linops.symmetrize(q, rtol=1e-9)
    r = linops.symmetrize(r, rtol=1e-9)
    schedule = schedule or ViSchedule()
    n = basis.n
    q_dim = basis.q
    m = r.shape[0]

    if scaling is not None:
        work_traj = _scaled_trajectory(traj, scaling)
        work_basis = XjBasis(x_list=tuple(
            xj * scaling.state_scale[:, None] for xj in basis.x_list))
        work_q = scaling.scale_q(q)
        work_window = window_dt * scaling.time_scale
    else:
        work_traj = traj
        work_basis = basis
        work_q = q
        work_window = window_dt

    log = accumulate(work_traj, work_basis, work_window, rho=rho)
    rank_checks = []
    for j in range(len(work_basis.x_list)):
        ok, rank = check_rank(log, j)
        rank_checks.append((j, rank))
        if not ok:
            raise RankDeficient(
                f"excitation rank {rank} below {log.required_rank} "
                f"for deviation map {j}",
                rank=rank, required=log.required_rank)

    solver = ThetaSolver(theta_matrix(log, 0, r))

    p = schedule.initial_value(n)
    p0 = schedule.initial_value(n)
    vi_trace = ViTrace()
    trace = AdpTrace(vi=vi_trace, theta_assemblies=1,
                     rank_checks=tuple(rank_checks))
    converged = False
    for k_iter in range(schedule.max_iterations):
        eps = schedule.epsilon(k_iter)
        p_next, k_gain, h, reset = vi_data_step(
            log, p, work_q, r, eps, schedule.bound(vi_trace.resets), p0,
            solver=solver)
        metric = float(np.abs(np.linalg.eigvalsh(p_next - p)).max()) / eps
        vi_trace.metrics.append(metric)
        vi_trace.norms.append(
            float(np.abs(np.linalg.eigvalsh(p_next)).max()))
        if reset:
            vi_trace.reset_iterations.append(k_iter)
        p = p_next
        vi_trace.iterations = k_iter + 1
        if not reset and metric < schedule.threshold:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"data-driven value iteration hit the "
            f"{schedule.max_iterations} iteration cap", trace=trace)

    p_star = p
    eigs = np.linalg.eigvalsh(p_star)
    if eigs[0] <= 0:
        raise ConvergenceError("converged value matrix is not positive "
                               "definite", trace=trace)
    trace.p_condition = float(eigs[-1] / eigs[0])

    # final solve at the converged value matrix: gain and zero-map coupling
    h, k_star, w0, resid = solve_data_equation(
        solver, log.deltas[0], p_star, n, m, q_dim)
    trace.solve_residuals.append(resid)
    d_hat_s = np.linalg.solve(p_star, w0.T)
    b_hat_s = np.linalg.solve(p_star, k_star.T @ r)

    # exosystem coupling images of the remaining deviation maps
    s_images = []
    for j in range(1, len(work_basis.x_list)):
        solver_j = ThetaSolver(theta_matrix(log, j, r))
        _, _, w_j, resid_j = solve_data_equation(
            solver_j, log.deltas[j], p_star, n, m, q_dim)
        trace.solve_residuals.append(resid_j)
        s_images.append(d_hat_s - np.linalg.solve(p_star, w_j.T))

    # steady-state problem from recovered pieces, over the affine family
    # X = X_1 + sum alpha_j X_j with the map images combining linearly
    x1_s = work_basis.x_list[1]
    s_x1 = s_images[0]
    basis_cols = [linops.vec(s_img) for s_img in s_images[1:]]
    m_alpha = np.column_stack(basis_cols) if basis_cols else \
        np.zeros((n * q_dim, 0))
    m_u = -np.kron(np.eye(q_dim), b_hat_s)
    system = np.hstack([m_alpha, m_u])
    rhs = linops.vec(d_hat_s) - linops.vec(s_x1)
    z, unique = linops.constrained_quadratic_min(
        system, rhs, np.ones(system.shape[1]))
    trace.regulator_unique = unique
    n_alpha = m_alpha.shape[1]
    alpha = z[:n_alpha]
    u_star_s = z[n_alpha:].reshape((m, q_dim), order="F")
    x_star_s = x1_s.copy()
    for coeff, xj in zip(alpha, work_basis.x_list[2:]):
        x_star_s = x_star_s + coeff * xj

    if scaling is not None:
        p_star = scaling.unscale_value(p_star)
        k_star = scaling.unscale_gain(k_star)
        x_star = scaling.unscale_state_map(x_star_s)
        b_hat = scaling.unscale_input_map(b_hat_s)
        d_hat = scaling.unscale_input_map(d_hat_s)
    else:
        x_star = x_star_s
        b_hat = b_hat_s
        d_hat = d_hat_s
    u_star = u_star_s
    l_star = u_star + k_star @ x_star
    return LearnedPolicy(k=k_star, l=l_star, x=x_star, u=u_star, p=p_star,
                         b_hat=b_hat, d_hat=d_hat, trace=trace)
