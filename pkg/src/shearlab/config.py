"""JSON run configuration.

Sections and keys::

    grid        K, J, L_Y, dealias_fraction
    physics     nu, mu, gamma, eps, s, delta
    multipliers J_sum, psi_tol
    schedule    dt, t_end, sample_every, linear_only, diagnostics, max_substeps
    init        family, amplitude, seed, band_limits
    experiment  kappas, T_max, stability_factor, bisection_depth, mode, amplitude_range, max_substeps
    output      directory, checkpoint_every
    verify      any SampleSpec field

Every section is optional; unknown sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from .dynamics import Schedule, ScheduleError
from .experiments import FAMILIES
from .grid import SpectralGrid
from .inequalities import SampleSpec
from .params import MultiplierParams, ParameterError, PhysicalParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitSpec:
    family: str = "band_limited"
    amplitude: float = 1e-3
    seed: int = 0
    band_limits: Optional[tuple] = None


@dataclass(frozen=True)
class ExperimentSpec:
    kappas: tuple = ()
    T_max: Optional[float] = None
    stability_factor: float = 10.0
    bisection_depth: int = 6
    #: "ed" (rate scaling), "threshold" (amplitude bisection) or "both"
    mode: str = "ed"
    amplitude_range: tuple = (0.5, 200.0)
    max_substeps: int = 16


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    checkpoint_every: int = 0


@dataclass(frozen=True)
class Config:
    grid: SpectralGrid
    physics: PhysicalParams
    multipliers: MultiplierParams
    schedule: Schedule
    init: InitSpec
    experiment: ExperimentSpec
    output: OutputSpec
    verify: SampleSpec
    source: dict = field(default_factory=dict, compare=False)

    def with_seed(self, seed: int) -> "Config":
        return replace(self, init=replace(self.init, seed=int(seed)), verify=replace(self.verify, seed=int(seed)))

    def with_output(self, directory) -> "Config":
        return replace(self, output=replace(self.output, directory=str(directory)))


_GRID_KEYS = {"K": int, "J": int, "L_Y": float, "dealias_fraction": float}
_PHYS_KEYS = {k: float for k in ("nu", "mu", "gamma", "eps", "s", "delta")}
_MULT_KEYS = {"J_sum": int, "psi_tol": float}
_SCHED_KEYS = {"dt": float, "t_end": float, "sample_every": int, "linear_only": bool, "diagnostics": str,
               "max_substeps": int}
_INIT_KEYS = {"family": str, "amplitude": float, "seed": int, "band_limits": tuple}
_EXP_KEYS = {"kappas": tuple, "T_max": float, "stability_factor": float, "bisection_depth": int, "mode": str,
             "amplitude_range": tuple, "max_substeps": int}
_OUT_KEYS = {"directory": str, "checkpoint_every": int}
_VERIFY_KEYS = {f.name: f.type for f in dataclasses.fields(SampleSpec)}

SECTIONS = {"grid": _GRID_KEYS, "physics": _PHYS_KEYS, "multipliers": _MULT_KEYS, "schedule": _SCHED_KEYS,
            "init": _INIT_KEYS, "experiment": _EXP_KEYS, "output": _OUT_KEYS, "verify": _VERIFY_KEYS}


def _coerce(section: str, key: str, value: Any, kind) -> Any:
    where = f"{section}.{key}={value!r}"
    if value is None and key in ("band_limits", "T_max", "max_substeps"):
        return None
    if kind in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer")
        return int(value)
    if kind in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite")
        return float(value)
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if kind in (str, "str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if kind in (tuple, "tuple"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{where}: list entries must be numbers")
        return tuple(float(v) for v in value)
    return value


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    keys = SECTIONS[name]
    out = {}
    for k, v in sec.items():
        if k not in keys:
            raise ConfigError(f"unknown key {name}.{k}; allowed keys: {', '.join(sorted(keys))}")
        out[k] = _coerce(name, k, v, keys[k])
    return out


def _build(name: str, fn, kwargs: dict):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return fn(**kwargs)
    except (ParameterError, ScheduleError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config(raw: dict) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    for name in raw:
        if name not in SECTIONS:
            raise ConfigError(f"unknown section {name!r}; allowed sections: {', '.join(SECTIONS)}")
    g = {"K": 8, "J": 64, "L_Y": 8 * math.pi, **_section(raw, "grid")}
    grid = _build("grid", SpectralGrid, g)
    physics = _build("physics", PhysicalParams, _section(raw, "physics"))
    mult = _build("multipliers", MultiplierParams.from_physical, {"p": physics, **_section(raw, "multipliers")})
    s = {"dt": 0.05, "t_end": 1.0, **_section(raw, "schedule")}
    schedule = _build("schedule", Schedule, s)
    init_kw = _section(raw, "init")
    init = InitSpec(**init_kw)
    if init.family not in FAMILIES:
        raise ConfigError(f"init.family={init.family!r}: expected one of {', '.join(FAMILIES)}")
    if not init.amplitude > 0:
        raise ConfigError(f"init.amplitude={init.amplitude!r}: must be positive")
    if init.band_limits is not None and (len(init.band_limits) != 2 or min(init.band_limits) < 0):
        raise ConfigError(f"init.band_limits={list(init.band_limits)!r}: expected [k_max, xi_max] with nonnegative entries")
    exp = ExperimentSpec(**_section(raw, "experiment"))
    _check_experiment(exp, physics)
    out = OutputSpec(**_section(raw, "output"))
    if out.checkpoint_every < 0:
        raise ConfigError(f"output.checkpoint_every={out.checkpoint_every}: must be nonnegative")
    vkw = _section(raw, "verify")
    for k in ("n_train", "n_heldout", "seed", "k_max", "J_sum", "grid_K", "grid_J", "ascent_starts",
              "ascent_rounds", "ascent_proposals"):
        if k in vkw:
            vkw[k] = _coerce("verify", k, vkw[k], int)
    verify = _build("verify", SampleSpec, vkw)
    return Config(grid, physics, mult, schedule, init, exp, out, verify, raw)


def _check_experiment(exp: ExperimentSpec, physics: PhysicalParams) -> None:
    if exp.mode not in ("ed", "threshold", "both"):
        raise ConfigError(f"experiment.mode={exp.mode!r}: expected 'ed', 'threshold' or 'both'")
    for kap in exp.kappas:
        if not 0 < kap < 1:
            raise ConfigError(f"experiment.kappas contains {kap!r}: every kappa must lie in (0, 1)")
    if not exp.stability_factor > 1:
        raise ConfigError(f"experiment.stability_factor={exp.stability_factor!r}: must exceed 1")
    if exp.bisection_depth < 6:
        raise ConfigError(f"experiment.bisection_depth={exp.bisection_depth}: must be at least 6")
    if len(exp.amplitude_range) != 2 or not 0 < exp.amplitude_range[0] < exp.amplitude_range[1]:
        raise ConfigError(f"experiment.amplitude_range={list(exp.amplitude_range)!r}: expected [lo, hi] with 0 < lo < hi")
    if exp.T_max is not None:
        for kap in exp.kappas:
            if not exp.T_max > kap ** (-1 / 6):
                raise ConfigError(f"experiment.T_max={exp.T_max!r}: must exceed kappa^(-1/6)={kap ** (-1 / 6):.6g} "
                                  f"for kappa={kap!r}")
    if exp.max_substeps < 1:
        raise ConfigError(f"experiment.max_substeps={exp.max_substeps}: must be positive")


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
