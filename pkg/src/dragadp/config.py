"""Scenario configuration: defaults, validation, and the YAML file format.

The default configuration reproduces the deputy/chief tracking scenario the
package is built around; an empty file yields exactly that scenario.  The
file grammar is a YAML mapping of the sections documented in the README;
unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from . import adp, cw_plant
from .riccati import ViSchedule


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every broken invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  - "
                         + "\n  - ".join(self.violations))


DEFAULT_DEPUTY = cw_plant.OrbitalElements(
    semi_major_axis_km=6678.376, inclination_deg=45.0, raan_deg=20.0,
    arg_perigee_deg=30.0, true_anomaly_deg=19.75)
DEFAULT_CHIEF = cw_plant.OrbitalElements(
    semi_major_axis_km=6678.136, inclination_deg=45.0, raan_deg=20.0,
    arg_perigee_deg=30.0, true_anomaly_deg=20.0)

MIN_RHO = 87


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one learn/compare scenario.

    Distances in km, times in seconds, angles in degrees.  The learning
    schedule fields parametrize the value-iteration step sizes and bound in
    the learner's scaled coordinates.
    """

    deputy: cw_plant.OrbitalElements = DEFAULT_DEPUTY
    chief: cw_plant.OrbitalElements = DEFAULT_CHIEF
    n_bar: float = 0.00108
    j2: float = cw_plant.EARTH_J2
    r_ref_km: float = cw_plant.EARTH_RADIUS_KM
    drag: cw_plant.DragParams = field(default_factory=cw_plant.DragParams)
    input_model: str = "per_axis"
    q_scale: float = 1.4
    r_scale: float = 0.01
    horizon_periods: float = 40.0
    learn_periods: float = 15.0
    dt: float = 1.0
    window_dt: float = 50.0
    rho: int = 120
    data_dt: float = 0.05
    noise_amplitude: float = 2.0
    noise_n: int = 100
    noise_freq_low: float = 5.0e-4
    noise_freq_high: float = 0.2
    seed: int = 7
    k0_mode: str = "zero"
    k0_scale: float = 0.5
    k0_seed: int = 1
    epsilon_scale: float = 5.0
    epsilon_offset: float = 1.0
    bound_fixed: float | None = None
    bound_scale: float = 10.0
    vi_threshold: float = 1.0e-5
    p0_scale: float = 1.0
    max_iterations: int = 1_000_000
    scale_data: bool = True
    length_scale_km: float = 1.0
    v0: tuple = (1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0)
    settle_tol_km: float = 1.0e-3
    output_dir: str | None = None
    output_stride: int = 10

    # ---- derived quantities -------------------------------------------

    def period_seconds(self) -> float:
        return 2.0 * math.pi / self.n_bar

    def horizon_seconds(self) -> float:
        return self.horizon_periods * self.period_seconds()

    def learn_end_seconds(self) -> float:
        return self.learn_periods * self.period_seconds()

    def j2_params(self) -> cw_plant.J2Params:
        return cw_plant.J2Params(
            j2=self.j2, earth_radius_km=cw_plant.EARTH_RADIUS_KM,
            r_ref_km=self.r_ref_km,
            inclination_rad=math.radians(self.chief.inclination_deg))

    def build_plant(self) -> cw_plant.PlantModel:
        return cw_plant.build_plant(
            self.n_bar, self.j2_params(), self.drag,
            input_model=self.input_model,
            semi_major_axis_km=self.chief.semi_major_axis_km)

    def q_matrix(self) -> np.ndarray:
        return self.q_scale * np.eye(6)

    def r_matrix(self) -> np.ndarray:
        return self.r_scale * np.eye(3)

    def noise_spec(self) -> adp.NoiseSpec:
        return adp.NoiseSpec(
            amplitude=self.noise_amplitude, n_per_axis=self.noise_n,
            freq_low=self.noise_freq_low, freq_high=self.noise_freq_high,
            seed=self.seed)

    def scaling(self) -> adp.Scaling | None:
        if not self.scale_data:
            return None
        return adp.Scaling.natural(self.n_bar,
                                   length_km=self.length_scale_km)

    def k0_matrix(self) -> np.ndarray:
        if self.k0_mode == "zero":
            return np.zeros((3, 6))
        rng = np.random.default_rng(self.k0_seed)
        raw = self.k0_scale * rng.standard_normal((3, 6))
        scaling = adp.Scaling.natural(self.n_bar,
                                      length_km=self.length_scale_km)
        # draw the gain at unit scale in the learner's coordinates
        return raw * scaling.state_scale[None, :]

    def vi_schedule(self) -> ViSchedule:
        return ViSchedule(
            epsilon_scale=self.epsilon_scale,
            epsilon_offset=self.epsilon_offset,
            bound_fixed=self.bound_fixed,
            bound_scale=self.bound_scale,
            threshold=self.vi_threshold,
            p0=self.p0_scale * np.eye(6),
            max_iterations=self.max_iterations)

    def v0_vector(self) -> np.ndarray:
        return np.asarray(self.v0, dtype=float)

    # ---- validation ----------------------------------------------------

    def validate(self) -> list:
        bad = []
        if self.n_bar <= 0:
            bad.append("n_bar must be positive")
        if self.learn_periods >= self.horizon_periods:
            bad.append("learn_periods must be below horizon_periods")
        if self.learn_periods <= 0:
            bad.append("learn_periods must be positive")
        if self.rho < MIN_RHO:
            bad.append(f"rho = {self.rho} below the minimum {MIN_RHO} "
                       "windows needed for full excitation rank")
        if self.dt <= 0:
            bad.append("dt must be positive")
        if self.data_dt <= 0:
            bad.append("data_dt must be positive")
        if self.window_dt <= self.data_dt:
            bad.append("window_dt must exceed data_dt")
        if self.window_dt > 0 and self.data_dt > 0:
            ratio = self.window_dt / self.data_dt
            if abs(ratio - round(ratio)) > 1e-6 * max(ratio, 1.0):
                bad.append("window_dt must be a multiple of data_dt")
        if self.n_bar > 0 and \
                self.rho * self.window_dt > self.learn_end_seconds():
            bad.append("rho * window_dt exceeds the learning window")
        if self.q_scale <= 0:
            bad.append("q_scale must be positive")
        if self.r_scale <= 0:
            bad.append("r_scale must be positive")
        if self.input_model not in cw_plant.INPUT_MODELS:
            bad.append(f"input_model must be one of {cw_plant.INPUT_MODELS}")
        if self.noise_amplitude < 0:
            bad.append("noise_amplitude must be nonnegative")
        if self.noise_n < 1:
            bad.append("noise_n must be at least 1")
        if not 0 < self.noise_freq_low < self.noise_freq_high:
            bad.append("need 0 < noise_freq_low < noise_freq_high")
        if self.k0_mode not in ("zero", "random"):
            bad.append("k0_mode must be 'zero' or 'random'")
        if len(self.v0) != 8:
            bad.append("v0 must have 8 components")
        if self.epsilon_scale <= 0 or self.epsilon_offset <= 0:
            bad.append("step-size schedule constants must be positive")
        if self.bound_fixed is not None and self.bound_fixed <= 0:
            bad.append("bound_fixed must be positive when set")
        if self.bound_scale <= 0:
            bad.append("bound_scale must be positive")
        if self.vi_threshold <= 0:
            bad.append("vi_threshold must be positive")
        if self.p0_scale <= 0:
            bad.append("p0_scale must be positive")
        if self.max_iterations < 1:
            bad.append("max_iterations must be positive")
        if self.length_scale_km <= 0:
            bad.append("length_scale_km must be positive")
        if self.settle_tol_km <= 0:
            bad.append("settle_tol_km must be positive")
        if self.output_stride < 1:
            bad.append("output_stride must be at least 1")
        return bad

    # ---- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        def elements(oe):
            return {"semi_major_axis_km": oe.semi_major_axis_km,
                    "inclination_deg": oe.inclination_deg,
                    "raan_deg": oe.raan_deg,
                    "arg_perigee_deg": oe.arg_perigee_deg,
                    "true_anomaly_deg": oe.true_anomaly_deg}

        drag = asdict(self.drag)
        drag = {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in drag.items()}
        drag["facet_normals"] = [list(nrm) for nrm in self.drag.facet_normals]
        drag["input_geometry"] = [list(row)
                                  for row in self.drag.input_geometry]
        drag["ballistic_sensitivity"] = list(self.drag.ballistic_sensitivity)
        return {
            "orbit": {"deputy": elements(self.deputy),
                      "chief": elements(self.chief),
                      "n_bar": self.n_bar},
            "environment": {"j2": self.j2, "r_ref_km": self.r_ref_km},
            "drag": drag,
            "plant": {"input_model": self.input_model},
            "cost": {"q_scale": self.q_scale, "r_scale": self.r_scale},
            "simulation": {"horizon_periods": self.horizon_periods,
                           "learn_periods": self.learn_periods,
                           "dt": self.dt,
                           "settle_tol_km": self.settle_tol_km,
                           "v0": list(self.v0)},
            "learning": {"window_dt": self.window_dt, "rho": self.rho,
                         "data_dt": self.data_dt,
                         "noise_amplitude": self.noise_amplitude,
                         "noise_n": self.noise_n,
                         "noise_freq_low": self.noise_freq_low,
                         "noise_freq_high": self.noise_freq_high,
                         "seed": self.seed,
                         "k0_mode": self.k0_mode,
                         "k0_scale": self.k0_scale,
                         "k0_seed": self.k0_seed,
                         "epsilon_scale": self.epsilon_scale,
                         "epsilon_offset": self.epsilon_offset,
                         "bound_fixed": self.bound_fixed,
                         "bound_scale": self.bound_scale,
                         "vi_threshold": self.vi_threshold,
                         "p0_scale": self.p0_scale,
                         "max_iterations": self.max_iterations,
                         "scale_data": self.scale_data,
                         "length_scale_km": self.length_scale_km},
            "output": {"directory": self.output_dir,
                       "stride": self.output_stride},
        }


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _from_dict(data) -> ScenarioConfig:
    violations = []
    known = {"orbit", "environment", "drag", "plant", "cost",
             "simulation", "learning", "output"}
    unknown = set(data) - known
    if unknown:
        violations.append(f"unknown sections: {sorted(unknown)}")
    kwargs = {}

    def take(section, key, target=None, cast=None):
        sec = data.get(section) or {}
        if not isinstance(sec, dict):
            violations.append(f"section '{section}' must be a mapping")
            return
        if key in sec:
            value = sec.pop(key)
            if cast is not None and value is not None:
                try:
                    value = cast(value)
                except (TypeError, ValueError):
                    violations.append(f"{section}.{key} has invalid type")
                    return
            kwargs[target or key] = value

    orbit = data.get("orbit") or {}
    for role in ("deputy", "chief"):
        if role in orbit:
            spec = orbit.pop(role)
            try:
                kwargs[role] = cw_plant.OrbitalElements(**spec)
            except (TypeError, ValueError) as exc:
                violations.append(f"orbit.{role}: {exc}")
    take("orbit", "n_bar", cast=float)
    take("environment", "j2", cast=float)
    take("environment", "r_ref_km", cast=float)
    if "drag" in data and data["drag"]:
        try:
            drag_kwargs = {k: _tupled(v) for k, v in data.pop("drag").items()}
            kwargs["drag"] = cw_plant.DragParams(**drag_kwargs)
        except (TypeError, ValueError) as exc:
            violations.append(f"drag: {exc}")
    take("plant", "input_model", cast=str)
    take("cost", "q_scale", cast=float)
    take("cost", "r_scale", cast=float)
    take("simulation", "horizon_periods", cast=float)
    take("simulation", "learn_periods", cast=float)
    take("simulation", "dt", cast=float)
    take("simulation", "settle_tol_km", cast=float)
    take("simulation", "v0", cast=lambda v: tuple(float(x) for x in v))
    for key, cast in (
            ("window_dt", float), ("rho", int), ("data_dt", float),
            ("noise_amplitude", float), ("noise_n", int),
            ("noise_freq_low", float), ("noise_freq_high", float),
            ("seed", int), ("k0_mode", str), ("k0_scale", float),
            ("k0_seed", int), ("epsilon_scale", float),
            ("epsilon_offset", float),
            ("bound_fixed", lambda v: None if v is None else float(v)),
            ("bound_scale", float), ("vi_threshold", float),
            ("p0_scale", float), ("max_iterations", int),
            ("scale_data", bool), ("length_scale_km", float)):
        take("learning", key, cast=cast)
    take("output", "directory", target="output_dir",
         cast=lambda v: None if v is None else str(v))
    take("output", "stride", target="output_stride", cast=int)

    for section in known:
        leftovers = data.get(section)
        if isinstance(leftovers, dict) and leftovers:
            violations.append(
                f"unknown keys in '{section}': {sorted(leftovers)}")

    if violations:
        raise ConfigError(violations)
    try:
        config = ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from exc
    bad = config.validate()
    if bad:
        raise ConfigError(bad)
    return config


def parse_config(path) -> ScenarioConfig:
    """Load and validate a scenario file; an empty file means defaults."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"config parse error: {exc}"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    return _from_dict(raw)


def write_config(config, path):
    """Serialize a configuration so that parsing it back round-trips."""
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(config.to_dict(), handle, sort_keys=True)
