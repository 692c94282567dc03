"""Relative-motion plant construction for a drag-controlled deputy/chief pair.

Builds the continuous-time matrices (A, B, C, D, E, F) of the tracking
problem: rotating-frame translational dynamics with differential-drag
damping and oblateness coupling, a neutrally stable harmonic exosystem
driving references and disturbances, and the position output map.

Internal units are km, kg, s.  Spacecraft parameters are stored in their
tabulated units (areas in m^2, densities in kg/m^3) and converted where
they enter the dynamics.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linops

EARTH_RADIUS_KM = 6378.136
EARTH_J2 = 1.08263e-3
EARTH_MU_KM3_S2 = 398600.4418

EXO_FREQS = (0.1, 0.2, 0.3, 0.4)

INPUT_MODELS = ("paper", "extended", "per_axis")

# beta [m^2/kg] * density [kg/m^3] is 1/m; the dynamics carry 1/km.
_PER_M_TO_PER_KM = 1.0e3


@dataclass(frozen=True)
class OrbitalElements:
    """Classical elements of a near-circular orbit; angles in degrees."""

    semi_major_axis_km: float
    inclination_deg: float
    raan_deg: float
    arg_perigee_deg: float
    true_anomaly_deg: float

    def __post_init__(self):
        if not self.semi_major_axis_km > EARTH_RADIUS_KM:
            raise ValueError("semi-major axis must be above the Earth surface")
        for name in ("inclination_deg", "raan_deg", "arg_perigee_deg",
                     "true_anomaly_deg"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def mean_motion(self) -> float:
        return math.sqrt(EARTH_MU_KM3_S2 / self.semi_major_axis_km ** 3)


@dataclass(frozen=True)
class DragParams:
    """Drag and spacecraft geometry parameters.

    ``ballistic_sensitivity`` is the 1x3 row mapping attitude deviation to
    ballistic-coefficient change; when omitted it is computed from the facet
    set at zero reference attitude.  ``input_geometry`` distributes the
    attitude channels over the acceleration axes for the full-rank input
    model (the facet-to-axis coupling is not pinned down by the physical
    parameters, so it stays configurable).
    """

    beta_chief: float = 0.022           # m^2/kg
    beta_deputy: float = 0.022          # m^2/kg
    density_chief: float = 2.2e-11      # kg/m^3
    density_deputy: float = 2.2e-11     # kg/m^3
    scale_height_km: float = 8.0
    r_c_km: float = 6678.136
    facet_areas: tuple = (0.06,)        # m^2
    drag_coeffs: tuple = (2.2,)
    facet_normals: tuple = ((0.0, 1.0, 0.0),)
    flow_axis: tuple = (0.0, 0.0, 1.0)
    mass_kg: float = 6.0
    ballistic_sensitivity: tuple | None = None
    input_geometry: tuple = ((1.0, 0.0, 0.0),
                             (0.0, 1.0, 0.0),
                             (0.0, 0.0, 1.0))

    def __post_init__(self):
        if self.density_chief < 0 or self.density_deputy < 0:
            raise ValueError("densities must be nonnegative")
        if self.mass_kg <= 0:
            raise ValueError("spacecraft mass must be positive")
        if self.scale_height_km <= 0:
            raise ValueError("scale height must be positive")
        if len(self.facet_areas) != len(self.drag_coeffs) or \
                len(self.facet_areas) != len(self.facet_normals):
            raise ValueError("facet arrays must have matching lengths")
        if len(self.facet_areas) < 1:
            raise ValueError("at least one facet is required")
        if any(a < 0 for a in self.facet_areas):
            raise ValueError("facet areas must be nonnegative")
        for normal in self.facet_normals:
            vec = np.asarray(normal, dtype=float)
            if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
                raise ValueError("facet normals must be unit vectors")
        if self.ballistic_sensitivity is None:
            object.__setattr__(
                self, "ballistic_sensitivity",
                tuple(drag_sensitivity(self)))

    @property
    def sensitivity_row(self) -> np.ndarray:
        return np.asarray(self.ballistic_sensitivity, dtype=float)

    @property
    def geometry(self) -> np.ndarray:
        return np.asarray(self.input_geometry, dtype=float)


@dataclass(frozen=True)
class J2Params:
    """Oblateness parameters; the correction factor c derives from them."""

    j2: float = EARTH_J2
    earth_radius_km: float = EARTH_RADIUS_KM
    r_ref_km: float = EARTH_RADIUS_KM
    inclination_rad: float = math.radians(45.0)

    def __post_init__(self):
        if self.r_ref_km <= 0 or self.earth_radius_km <= 0:
            raise ValueError("radii must be positive")
        if 1.0 + self.s < 0:
            raise ValueError("J2 correction would be imaginary")

    @property
    def s(self) -> float:
        return (3.0 * self.j2 * self.earth_radius_km ** 2
                / (8.0 * self.r_ref_km ** 2)
                * (1.0 + 3.0 * math.cos(2.0 * self.inclination_rad)))

    @property
    def c(self) -> float:
        return math.sqrt(1.0 + self.s)


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Immutable bundle of the six system matrices plus the mean motion."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    n_bar: float

    def __post_init__(self):
        shapes = {"A": (6, 6), "B": (6, 3), "C": (3, 6),
                  "D": (6, 8), "E": (8, 8), "F": (3, 8)}
        for name, shape in shapes.items():
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, mat)
        if self.n_bar <= 0:
            raise ValueError("mean motion must be positive")


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the numerical well-posedness checks on a plant."""

    stabilizable: bool
    observable_output: bool
    observable_cost: bool
    regulation_rank_ok: bool
    regulation_ranks: tuple
    required_rank: int

    @property
    def all_ok(self) -> bool:
        return (self.stabilizable and self.observable_output
                and self.observable_cost and self.regulation_rank_ok)


def density_at_offset(density_chief, x_km, scale_height_km, exact=False):
    """Deputy density from the chief value at a radial offset.

    Linearized form by default, ``density * (1 - x/H)``; ``exact=True``
    evaluates the exponential profile instead.
    """
    if scale_height_km <= 0:
        raise ValueError("scale height must be positive")
    ratio = x_km / scale_height_km
    if exact:
        return density_chief * math.exp(-ratio)
    return density_chief * (1.0 - ratio)


def _mrp_rotation_linear(sigma):
    sigma = np.asarray(sigma, dtype=float).ravel()
    skew = np.array([[0.0, -sigma[2], sigma[1]],
                     [sigma[2], 0.0, -sigma[0]],
                     [-sigma[1], sigma[0], 0.0]])
    return np.eye(3) - 4.0 * skew


def drag_sensitivity(params, reference_attitude=(0.0, 0.0, 0.0)):
    """Per-axis sensitivity of the ballistic coefficient to attitude.

    Sums ``4 C_D A / m`` contributions over the facets, each projected
    through the cross product of the facet normal with the (attitude-rotated)
    flow direction.  Returns a 1x3 row in m^2/kg per attitude unit.
    """
    if params.mass_kg <= 0:
        raise ValueError("spacecraft mass must be positive")
    flow = _mrp_rotation_linear(reference_attitude) @ np.asarray(
        params.flow_axis, dtype=float)
    row = np.zeros(3)
    for area, cd, normal in zip(params.facet_areas, params.drag_coeffs,
                                params.facet_normals):
        row += (4.0 * cd * area / params.mass_kg) * np.cross(
            np.asarray(normal, dtype=float), flow)
    return row


def _beta_rho_per_km(beta_m2_kg, density_kg_m3):
    return beta_m2_kg * density_kg_m3 * _PER_M_TO_PER_KM


def build_A(n_bar, j2, drag):
    """Assemble the 6x6 state matrix [[0, I], [L1, L2]].

    L1 carries the oblateness-corrected restoring terms, with the signs
    taken from the scalar equations of motion: +(5c^2-2) n^2 on the radial
    channel and -n^2 on the cross-track channel.  L2 holds the Coriolis and
    drag-damping terms.
    """
    if n_bar <= 0:
        raise ValueError("mean motion must be positive")
    c = j2.c
    dd = _beta_rho_per_km(drag.beta_deputy, drag.density_deputy) \
        * n_bar * drag.r_c_km
    lam1 = np.diag([(5.0 * c ** 2 - 2.0) * n_bar ** 2, 0.0, -n_bar ** 2])
    lam2 = np.array([[-0.5 * dd, 2.0 * n_bar * c, 0.0],
                     [-2.0 * n_bar, -dd, 0.0],
                     [0.0, 0.0, -0.5 * dd]])
    a = np.zeros((6, 6))
    a[:3, 3:] = np.eye(3)
    a[3:, :3] = lam1
    a[3:, 3:] = lam2
    return a


def input_scale(n_bar, drag):
    """Acceleration per attitude unit on the actuated channel, km/s^2."""
    sens_mag = float(np.linalg.norm(drag.sensitivity_row))
    return (0.5 * n_bar ** 2 * drag.r_c_km ** 2
            * drag.density_deputy * sens_mag * _PER_M_TO_PER_KM)


def build_B(n_bar, drag, mode="paper", reference_velocity=(0.0, 0.0, 0.0)):
    """Assemble the 6x3 input matrix for the selected input model.

    ``paper``     -- only the along-track acceleration row is populated,
                     with the drag-modulation row vector.
    ``extended``  -- additionally perturbs the radial and cross-track rows
                     by the velocity-dependent corrections linearized at
                     ``reference_velocity`` (km/s).
    ``per_axis``  -- full-rank model: each attitude axis drives its own
                     acceleration channel at the same drag-authority
                     magnitude, distributed by the configured geometry.
    """
    if mode not in INPUT_MODELS:
        raise ValueError(f"unknown input model {mode!r}")
    b = np.zeros((6, 3))
    rho_row_per_km = drag.density_deputy * drag.sensitivity_row \
        * _PER_M_TO_PER_KM
    if mode == "per_axis":
        b[3:, :] = input_scale(n_bar, drag) * drag.geometry
        return b
    b[4, :] = 0.5 * n_bar ** 2 * drag.r_c_km ** 2 * rho_row_per_km
    if mode == "extended":
        vx, vy, vz = (float(v) for v in reference_velocity)
        factor = 0.5 * drag.r_c_km * n_bar
        b[3, :] = -factor * vx * rho_row_per_km
        b[4, :] += -factor * vy * rho_row_per_km
        b[5, :] = -factor * vz * rho_row_per_km
    return b


def build_exo_and_output(n_bar, j2, drag, freqs=EXO_FREQS):
    """Exosystem, output, tracking and disturbance maps (E, C, F, D)."""
    blocks = [np.array([[0.0, w], [-w, 0.0]]) for w in freqs]
    e_mat = linops.bdiag(blocks)
    c_mat = np.hstack([np.eye(3), np.zeros((3, 3))])
    f_mat = np.hstack([np.eye(3), np.zeros((3, 5))])
    xi_j2 = -3.0 * n_bar ** 2 * j2.j2 * j2.earth_radius_km ** 2 / j2.r_ref_km
    beta_mismatch = (_beta_rho_per_km(drag.beta_chief, drag.density_chief)
                     - _beta_rho_per_km(drag.beta_deputy,
                                        drag.density_deputy))
    xi_drag = -0.5 * n_bar ** 2 * drag.r_c_km ** 2 * beta_mismatch
    d_mat = np.zeros((6, 8))
    d_mat[3, 2] = xi_j2
    d_mat[3, 5] = xi_j2
    d_mat[4, 4] = xi_j2 + xi_drag
    d_mat[5, 0] = xi_j2
    d_mat[5, 6] = xi_j2
    return e_mat, c_mat, f_mat, d_mat


def build_plant(n_bar, j2, drag, input_model="per_axis",
                reference_velocity=(0.0, 0.0, 0.0), freqs=EXO_FREQS,
                semi_major_axis_km=None):
    """Construct the full plant; warns when n_bar conflicts with the orbit."""
    if semi_major_axis_km is not None:
        n_from_a = math.sqrt(EARTH_MU_KM3_S2 / semi_major_axis_km ** 3)
        if abs(n_from_a - n_bar) > 0.05 * n_bar:
            warnings.warn(
                f"configured mean motion {n_bar:.6g} 1/s differs from the "
                f"semi-major-axis value {n_from_a:.6g} 1/s by more than 5%",
                stacklevel=2)
    a = build_A(n_bar, j2, drag)
    b = build_B(n_bar, drag, mode=input_model,
                reference_velocity=reference_velocity)
    e_mat, c_mat, f_mat, d_mat = build_exo_and_output(n_bar, j2, drag, freqs)
    return PlantModel(A=a, B=b, C=c_mat, D=d_mat, E=e_mat, F=f_mat,
                      n_bar=n_bar)


def validate_assumptions(plant, q=None):
    """Numerically check stabilizability, observability and the rank test.

    ``q`` optionally supplies the state cost whose square root must form an
    observable pair with A; the output map is always checked.
    """
    a, b, c = plant.A, plant.B, plant.C
    stab = linops.stabilizable(a, b)
    obs_output = linops.observable(a, c)
    if q is None:
        obs_cost = obs_output
    else:
        q = linops.symmetrize(q, rtol=1e-9)
        vals, vecs = np.linalg.eigh(q)
        if np.any(vals < -1e-12 * max(vals.max(), 1.0)):
            raise ValueError("state cost must be positive semidefinite")
        sqrt_q = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
        obs_cost = linops.observable(a, sqrt_q)
    required = a.shape[0] + c.shape[0]
    ranks = []
    for lam in np.linalg.eigvals(plant.E):
        ranks.append((complex(lam), linops.regulation_rank(a, b, c, lam)))
    rank_ok = all(r == required for _, r in ranks)
    return AssumptionReport(
        stabilizable=stab,
        observable_output=obs_output,
        observable_cost=obs_cost,
        regulation_rank_ok=rank_ok,
        regulation_ranks=tuple(ranks),
        required_rank=required)


def exo_frequencies(e_mat):
    """Recover the block frequencies of a block-rotation exosystem matrix."""
    e_mat = np.asarray(e_mat, dtype=float)
    if e_mat.shape[0] != e_mat.shape[1] or e_mat.shape[0] % 2:
        raise ValueError("exosystem matrix must be even-dimensional square")
    n_blocks = e_mat.shape[0] // 2
    freqs = []
    check = np.zeros_like(e_mat)
    for k in range(n_blocks):
        w = e_mat[2 * k, 2 * k + 1]
        check[2 * k, 2 * k + 1] = w
        check[2 * k + 1, 2 * k] = -w
        freqs.append(w)
    if not np.allclose(check, e_mat, atol=1e-12):
        raise ValueError("matrix is not block-rotation structured")
    return tuple(freqs)


def exo_step(e_mat, v, dt):
    """Advance the exostate by the exact rotation of each 2-block."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    freqs = exo_frequencies(e_mat)
    v = np.asarray(v, dtype=float).ravel()
    out = np.empty_like(v)
    for k, w in enumerate(freqs):
        cs, sn = math.cos(w * dt), math.sin(w * dt)
        v1, v2 = v[2 * k], v[2 * k + 1]
        out[2 * k] = cs * v1 + sn * v2
        out[2 * k + 1] = -sn * v1 + cs * v2
    return out


def exo_series(freqs, v0, times):
    """Closed-form exostate history over an array of times, shape (N, 2k)."""
    v0 = np.asarray(v0, dtype=float).ravel()
    times = np.asarray(times, dtype=float).ravel()
    out = np.empty((times.size, v0.size))
    for k, w in enumerate(freqs):
        ang = w * times
        cs, sn = np.cos(ang), np.sin(ang)
        out[:, 2 * k] = cs * v0[2 * k] + sn * v0[2 * k + 1]
        out[:, 2 * k + 1] = -sn * v0[2 * k] + cs * v0[2 * k + 1]
    return out
