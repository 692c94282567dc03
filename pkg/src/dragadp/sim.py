"""Fixed-step closed-loop simulation and evaluation metrics.

The plant state is integrated with the classical fourth-order Runge-Kutta
scheme while the exostate follows its closed-form block rotations, so the
reference/disturbance generator carries no integration error at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import adp, cw_plant, regulator, riccati


class SimulationDiverged(RuntimeError):
    """State left the configured envelope; carries the blow-up time."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled closed-loop record.

    ``e`` is the output tracking error, re-derived from the state and
    exostate at every sample so the stored record cannot drift from the
    output identity.
    """

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        n = self.times.size
        if not (self.x.shape[0] == self.v.shape[0] == self.u.shape[0]
                == self.e.shape[0] == n):
            raise ValueError("trajectory arrays must share their length")
        steps = np.diff(self.times)
        if n > 1 and not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class RunMetrics:
    """Scalar summary of one evaluation branch."""

    j_cost: float
    terminal_error_km: float
    settling_time_s: float | None
    settled: bool
    max_input: float


def gain_policy(k, l):
    """Feedback-feedforward law ``u = -K x + L v``."""
    k = np.asarray(k, dtype=float)
    l = np.asarray(l, dtype=float)

    def policy(t, x, v):
        return l @ v - k @ x

    return policy


def noise_policy(k0, eta):
    """Exploration law ``u = -K0 x + eta(t)`` used during data collection."""
    k0 = np.asarray(k0, dtype=float)

    def policy(t, x, v):
        return np.asarray(eta(t), dtype=float) - k0 @ x

    return policy


def integrate(plant, policy, x0, v0, horizon, dt, t0=0.0,
              state_cap_km=1.0e4):
    """Propagate the closed loop over ``[t0, t0 + horizon]``.

    ``policy(t, x, v)`` supplies the input at every integrator stage.  A
    position-norm cap guards data collection under non-stabilizing
    policies: exceeding it raises :class:`SimulationDiverged` with the
    offending time instead of silently recording a blown-up arc.
    """
    if dt <= 0 or horizon < dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError("horizon must be an integer number of steps")
    a, b, d = plant.A, plant.B, plant.D
    freqs = cw_plant.exo_frequencies(plant.E)
    times = t0 + dt * np.arange(n_steps + 1)
    half_times = t0 + 0.5 * dt * np.arange(2 * n_steps + 1)
    v_half = cw_plant.exo_series(freqs, v0, half_times - t0)
    x = np.asarray(x0, dtype=float).copy()
    xs = np.empty((n_steps + 1, 6))
    us = np.empty((n_steps + 1, 3))
    xs[0] = x

    def deriv(xx, uu, vv):
        return a @ xx + b @ uu + d @ vv

    for i in range(n_steps):
        t = times[i]
        v_now = v_half[2 * i]
        v_mid = v_half[2 * i + 1]
        v_next = v_half[2 * i + 2]
        u1 = policy(t, x, v_now)
        us[i] = u1
        k1 = deriv(x, u1, v_now)
        x2 = x + 0.5 * dt * k1
        k2 = deriv(x2, policy(t + 0.5 * dt, x2, v_mid), v_mid)
        x3 = x + 0.5 * dt * k2
        k3 = deriv(x3, policy(t + 0.5 * dt, x3, v_mid), v_mid)
        x4 = x + dt * k3
        k4 = deriv(x4, policy(t + dt, x4, v_next), v_next)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or \
                np.linalg.norm(x[:3]) > state_cap_km:
            raise SimulationDiverged(
                f"state exceeded {state_cap_km} km at t = {times[i + 1]:.1f} s",
                time=float(times[i + 1]))
        xs[i + 1] = x
    v_full = v_half[::2]
    us[n_steps] = policy(times[-1], x, v_full[-1])
    errors = xs @ plant.C.T + v_full @ plant.F.T
    return Trajectory(times=times, x=xs, v=v_full, u=us, e=errors)


def hill_initial_state(deputy, chief, n_bar=None):
    """Rotating-frame relative state from small element differences.

    First-order mapping valid for near-circular orbits: radial offset from
    the semi-major-axis difference, along-track offset from the phase
    difference, cross-track from inclination/node differences, and the
    secular along-track drift rate from the period difference.
    """
    a_c = chief.semi_major_axis_km
    n = chief.mean_motion if n_bar is None else n_bar
    d_a = deputy.semi_major_axis_km - a_c
    d_inc = math.radians(deputy.inclination_deg - chief.inclination_deg)
    d_raan = math.radians(deputy.raan_deg - chief.raan_deg)
    d_peri = math.radians(deputy.arg_perigee_deg - chief.arg_perigee_deg)
    d_anom = math.radians(deputy.true_anomaly_deg - chief.true_anomaly_deg)
    inc = math.radians(chief.inclination_deg)
    theta = math.radians(chief.arg_perigee_deg + chief.true_anomaly_deg)
    x = d_a
    y = a_c * (d_peri + d_anom + math.cos(inc) * d_raan)
    z = a_c * (d_inc * math.sin(theta) - d_raan * math.sin(inc)
               * math.cos(theta))
    xdot = 0.0
    ydot = -1.5 * n * d_a
    zdot = a_c * n * (d_inc * math.cos(theta) + d_raan * math.sin(inc)
                      * math.sin(theta))
    return np.array([x, y, z, xdot, ydot, zdot])


def metrics(traj, x_map, u_map, q, r, settle_tol_km=1e-3):
    """Quadratic cost and tracking summary of a recorded run.

    The cost integrates the error-system quadratic form with the deviations
    from the steady-state manifold defined by ``(x_map, u_map)``.
    """
    x_map = np.asarray(x_map, dtype=float)
    u_map = np.asarray(u_map, dtype=float)
    xbar = traj.x - traj.v @ x_map.T
    ubar = traj.u - traj.v @ u_map.T
    integrand = np.einsum("ij,jk,ik->i", xbar, q, xbar) \
        + np.einsum("ij,jk,ik->i", ubar, r, ubar)
    j_cost = float(np.trapezoid(integrand, traj.times))
    err_norms = np.linalg.norm(traj.e, axis=1)
    terminal = float(err_norms[-1])
    settled_idx = np.flatnonzero(err_norms <= settle_tol_km)
    if settled_idx.size:
        settling_time = float(traj.times[settled_idx[0]])
        settled = True
    else:
        settling_time = None
        settled = False
    max_input = float(np.linalg.norm(traj.u, axis=1).max())
    return RunMetrics(j_cost=j_cost, terminal_error_km=terminal,
                      settling_time_s=settling_time, settled=settled,
                      max_input=max_input)


@dataclass(frozen=True, eq=False)
class LearnPhase:
    """Products of data collection and learning, before any evaluation."""

    plant: cw_plant.PlantModel
    assumptions: cw_plant.AssumptionReport
    traj_learning: Trajectory
    traj_data: Trajectory
    basis: adp.XjBasis
    data_log: adp.DataLog
    learned: adp.LearnedPolicy


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    """Everything one scenario run produces."""

    learned: adp.LearnedPolicy
    oracle: riccati.AreSolution
    oracle_regulator: regulator.RegulatorSolution
    l_star: np.ndarray
    traj_learning: Trajectory
    traj_eval_vi: Trajectory
    traj_eval_lqr: Trajectory
    metrics_vi: RunMetrics
    metrics_lqr: RunMetrics
    assumptions: cw_plant.AssumptionReport
    plant: cw_plant.PlantModel
    data_log: adp.DataLog


def learn_phase(config):
    """Collect the exploration trajectory and learn a policy from it.

    The full learning window is recorded at the output step; the window
    integrals come from a finer re-run of its head (same physics, same
    seed) so quadrature error does not limit the learned-gain accuracy.
    """
    plant = config.build_plant()
    q, r = config.q_matrix(), config.r_matrix()
    report = cw_plant.validate_assumptions(plant, q=q)
    x0 = hill_initial_state(config.deputy, config.chief, n_bar=config.n_bar)
    v0 = config.v0_vector()
    eta = adp.make_exploration_noise(config.noise_spec())
    collect = noise_policy(config.k0_matrix(), eta)

    traj_learning = integrate(plant, collect, x0, v0,
                              config.learn_end_seconds(), config.dt)
    data_span = config.rho * config.window_dt
    traj_data = integrate(plant, collect, x0, v0, data_span, config.data_dt)

    basis = adp.build_xj_basis(plant.C, plant.F)
    log = adp.accumulate(traj_data, basis, config.window_dt, rho=config.rho)
    learned = adp.run_algorithm2(
        traj_data, basis, q, r, config.vi_schedule(),
        window_dt=config.window_dt, rho=config.rho,
        scaling=config.scaling())
    return LearnPhase(plant=plant, assumptions=report,
                      traj_learning=traj_learning, traj_data=traj_data,
                      basis=basis, data_log=log, learned=learned)


def evaluate_policies(config, phase, k_vi, l_vi):
    """Propagate the learned and oracle gain pairs from the common state.

    Both branches start from the post-collection state so the comparison
    isolates gain quality from the exploration transient.
    """
    plant = phase.plant
    q, r = config.q_matrix(), config.r_matrix()
    are = riccati.solve_are_exact(plant.A, plant.B, q, r)
    reg = regulator.solve_regulator(plant.A, plant.B, plant.C, plant.D,
                                    plant.E, plant.F)
    l_star = regulator.feedforward_gain(reg.u, are.k, reg.x)

    learn_end = config.learn_end_seconds()
    eval_span = config.horizon_seconds() - learn_end
    x_start = phase.traj_learning.x[-1]
    v_start = phase.traj_learning.v[-1]
    traj_vi = integrate(plant, gain_policy(k_vi, l_vi),
                        x_start, v_start, eval_span, config.dt, t0=learn_end)
    traj_lqr = integrate(plant, gain_policy(are.k, l_star),
                         x_start, v_start, eval_span, config.dt, t0=learn_end)
    metrics_vi = metrics(traj_vi, reg.x, reg.u, q, r,
                         settle_tol_km=config.settle_tol_km)
    metrics_lqr = metrics(traj_lqr, reg.x, reg.u, q, r,
                          settle_tol_km=config.settle_tol_km)
    return ScenarioResult(
        learned=phase.learned, oracle=are, oracle_regulator=reg,
        l_star=l_star, traj_learning=phase.traj_learning,
        traj_eval_vi=traj_vi, traj_eval_lqr=traj_lqr,
        metrics_vi=metrics_vi, metrics_lqr=metrics_lqr,
        assumptions=phase.assumptions, plant=plant,
        data_log=phase.data_log)


def run_scenario(config):
    """Full pipeline: collect, learn, then evaluate against the oracle."""
    phase = learn_phase(config)
    return evaluate_policies(config, phase, phase.learned.k,
                             phase.learned.l)
