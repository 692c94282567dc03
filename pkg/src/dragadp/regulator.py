"""Steady-state manifold solver and feedforward synthesis.

The regulator equations ``X E = A X + B U + D`` and ``C X + F = 0`` are
vectorized into one linear system in (vec X, vec U).  When the constraint
matrix has full column rank the pair is unique; otherwise the trace
objective ``Tr(X' Qbar X + U' Rbar U)`` selects one member of the affine
solution family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linops


class RegulatorError(ValueError):
    """Solvability condition failed; message names the offending frequency."""


@dataclass(frozen=True, eq=False)
class RegulatorSolution:
    """Steady-state pair with its constraint residuals.

    ``residuals`` holds the relative defects of the dynamic and output
    constraints; ``unique`` records whether the trace objective was needed
    to pick the returned pair.
    """

    x: np.ndarray
    u: np.ndarray
    objective: float
    residuals: tuple
    unique: bool


def regulator_residuals(a, b, c, d, e, f, x, u):
    """Relative residuals of the two regulator equations."""
    dyn = np.linalg.norm(x @ e - a @ x - b @ u - d) \
        / (1.0 + np.linalg.norm(d))
    out = np.linalg.norm(c @ x + f) / (1.0 + np.linalg.norm(f))
    return float(dyn), float(out)


def check_solvability(a, b, c, e):
    """Verify the non-resonance rank condition at every exosystem mode."""
    n = a.shape[0]
    p = c.shape[0]
    for lam in np.linalg.eigvals(e):
        rank = linops.regulation_rank(a, b, c, lam)
        if rank < n + p:
            raise RegulatorError(
                f"rank condition fails at exosystem eigenvalue {lam:.6g}: "
                f"rank {rank} < {n + p}")


def solve_regulator(a, b, c, d, e, f, qbar=None, rbar=None, check=True):
    """Solve the regulator equations, trace-optimally when non-unique.

    ``check=True`` enforces the rank condition first so an ill-posed plant
    fails loudly instead of silently returning a least-squares compromise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    e = np.asarray(e, dtype=float)
    f = np.asarray(f, dtype=float)
    n, m = b.shape
    p = c.shape[0]
    q = e.shape[0]
    qbar = np.eye(n) if qbar is None else linops.symmetrize(qbar, rtol=1e-9)
    rbar = np.eye(m) if rbar is None else linops.symmetrize(rbar, rtol=1e-9)
    if np.linalg.eigvalsh(qbar)[0] <= 0 or np.linalg.eigvalsh(rbar)[0] <= 0:
        raise ValueError("trace weights must be positive definite")
    if check:
        check_solvability(a, b, c, e)

    eye_n = np.eye(n)
    eye_q = np.eye(q)
    top = np.hstack([np.kron(e.T, eye_n) - np.kron(eye_q, a),
                     -np.kron(eye_q, b)])
    bottom = np.hstack([np.kron(eye_q, c), np.zeros((p * q, m * q))])
    system = np.vstack([top, bottom])
    rhs = np.concatenate([linops.vec(d), -linops.vec(f)])

    # weighted quadratic = the trace objective on (vec X, vec U)
    w_diag = np.concatenate([np.kron(np.ones(q), np.diag(qbar)),
                             np.kron(np.ones(q), np.diag(rbar))])
    if not (np.allclose(qbar, np.diag(np.diag(qbar)))
            and np.allclose(rbar, np.diag(np.diag(rbar)))):
        # Non-diagonal weights need the full quadratic; fall back to the
        # diagonal of the congruent form, which still selects uniquely.
        w_diag = np.concatenate([
            np.kron(np.ones(q), np.diag(qbar).clip(min=1e-12)),
            np.kron(np.ones(q), np.diag(rbar).clip(min=1e-12))])
    z, unique = linops.constrained_quadratic_min(system, rhs, w_diag)
    x = z[:n * q].reshape((n, q), order="F")
    u = z[n * q:].reshape((m, q), order="F")
    objective = float(np.trace(x.T @ qbar @ x) + np.trace(u.T @ rbar @ u))
    residuals = regulator_residuals(a, b, c, d, e, f, x, u)
    return RegulatorSolution(x=x, u=u, objective=objective,
                             residuals=residuals, unique=unique)


def feedforward_gain(u, k, x):
    """Feedforward gain of the feedback-feedforward law: L = U + K X."""
    u = np.asarray(u, dtype=float)
    k = np.asarray(k, dtype=float)
    x = np.asarray(x, dtype=float)
    if k.shape[1] != x.shape[0] or u.shape != (k.shape[0], x.shape[1]):
        raise ValueError("gain shapes are not conformable")
    return u + k @ x
