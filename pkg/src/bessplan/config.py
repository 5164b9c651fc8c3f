"""Experiment configuration files.

A config is an INI file with three sections. Every physical quantity carries
its unit in the key name, and a bare key such as ``sigma`` or ``t_f`` is
rejected rather than guessed::

    [system]
    sigma_kwh_per_sqrt_h = 1.0
    b_max_kwh = 1.0
    delta = 0.02
    t_f_hours = 5
    alpha = 0.5

    [line]
    p_line_kw = 15
    beta_kwh = 0.0            ; optional, calibrated when absent
    p_line_grid_kw = 0, 2, 5, 10, 15, 30, 60, 100

    [simulation]
    scenario = two-mg         ; single | two-mg
    policy = discrete-kkt     ; disconnected | bang-bang | discrete-kkt
    capacity_kwh = 10         ; optional, per microgrid
    n_paths = 5000
    dt_seconds = 30
    seed = 0
    bridge_correction = false
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .policy import PolicyKind
from .single_mg import SystemParams
from .two_mg import TwoMgParams

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "DEFAULT_P_LINE_GRID"]

DEFAULT_P_LINE_GRID = (0.0, 2.0, 5.0, 10.0, 15.0, 30.0, 60.0, 100.0)

# key -> (section, parser); dimensionless keys have no suffix by design
_KEYS = {
    "sigma_kwh_per_sqrt_h": ("system", float),
    "b_max_kwh": ("system", float),
    "delta": ("system", float),
    "t_f_hours": ("system", float),
    "alpha": ("system", float),
    "p_line_kw": ("line", float),
    "beta_kwh": ("line", float),
    "p_line_grid_kw": ("line", "grid"),
    "scenario": ("simulation", str),
    "policy": ("simulation", str),
    "capacity_kwh": ("simulation", float),
    "n_paths": ("simulation", int),
    "dt_seconds": ("simulation", float),
    "seed": ("simulation", int),
    "bridge_correction": ("simulation", "bool"),
}

# bare names that need a unit; mapped to the accepted spelling for the message
_UNITLESS = {
    "sigma": "sigma_kwh_per_sqrt_h",
    "b_max": "b_max_kwh",
    "t_f": "t_f_hours",
    "horizon": "t_f_hours",
    "p_line": "p_line_kw",
    "beta": "beta_kwh",
    "p_line_grid": "p_line_grid_kw",
    "capacity": "capacity_kwh",
    "dt": "dt_seconds",
}

SCENARIOS = ("single", "two-mg")


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    sigma: float = 1.0
    b_max: float = 1.0
    delta: float = 0.02
    t_f: float = 5.0
    alpha: float = 0.5
    p_line: float = 15.0
    beta: float | None = None
    p_line_grid: tuple[float, ...] = DEFAULT_P_LINE_GRID
    scenario: str = "two-mg"
    policy: str = "discrete-kkt"
    capacity_kwh: float | None = None
    n_paths: int = 5000
    dt_seconds: float = 30.0
    seed: int = 0
    bridge_correction: bool = False
    source: str = field(default="<defaults>", compare=False)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        try:
            self.system_params()
        except ValueError as exc:
            name, _, value = str(exc).partition(":")
            raise ConfigError(_unit_key(name.replace("invalid ", "")), f"out of range:{value}") from None
        if not self.p_line >= 0 or not math.isfinite(self.p_line):
            raise ConfigError("p_line_kw", f"must be finite and >= 0, got {self.p_line}")
        if self.beta is not None and not self.beta >= 0:
            raise ConfigError("beta_kwh", f"must be >= 0, got {self.beta}")
        if len(self.p_line_grid) == 0 or any(not p >= 0 for p in self.p_line_grid):
            raise ConfigError("p_line_grid_kw", "must be a nonempty list of values >= 0")
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"expected one of {SCENARIOS}, got {self.scenario!r}")
        try:
            PolicyKind(self.policy)
        except ValueError:
            kinds = tuple(k.value for k in PolicyKind)
            raise ConfigError("policy", f"expected one of {kinds}, got {self.policy!r}") from None
        if self.capacity_kwh is not None and not self.capacity_kwh > 0:
            raise ConfigError("capacity_kwh", f"must be > 0, got {self.capacity_kwh}")
        if self.n_paths < 1:
            raise ConfigError("n_paths", f"must be >= 1, got {self.n_paths}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed}")
        if not self.dt_seconds > 0:
            raise ConfigError("dt_seconds", f"must be > 0, got {self.dt_seconds}")
        steps = self.t_f * 3600.0 / self.dt_seconds
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ConfigError("dt_seconds", f"{self.dt_seconds} s does not divide t_f_hours = {self.t_f}")

    @property
    def k_steps(self) -> int:
        return int(round(self.t_f * 3600.0 / self.dt_seconds))

    def system_params(self) -> SystemParams:
        return SystemParams(self.sigma, self.b_max, self.delta, self.t_f, self.alpha)

    def two_mg_params(self, beta: float | None = None) -> TwoMgParams:
        b = self.beta if beta is None else beta
        return TwoMgParams(self.system_params(), self.p_line, 0.0 if b is None else b)

    def override(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self

    def echo(self) -> list[str]:
        """``key = value`` lines in config-file spelling, for CSV headers."""
        grid = ", ".join(repr(float(p)) for p in self.p_line_grid)
        lines = [
            f"config = {self.source}",
            f"sigma_kwh_per_sqrt_h = {self.sigma!r}",
            f"b_max_kwh = {self.b_max!r}",
            f"delta = {self.delta!r}",
            f"t_f_hours = {self.t_f!r}",
            f"alpha = {self.alpha!r}",
            f"p_line_kw = {self.p_line!r}",
            f"beta_kwh = {'' if self.beta is None else repr(self.beta)}",
            f"p_line_grid_kw = {grid}",
            f"scenario = {self.scenario}",
            f"policy = {self.policy}",
            f"capacity_kwh = {'' if self.capacity_kwh is None else repr(self.capacity_kwh)}",
            f"n_paths = {self.n_paths}",
            f"dt_seconds = {self.dt_seconds!r}",
            f"seed = {self.seed}",
            f"bridge_correction = {str(self.bridge_correction).lower()}",
        ]
        return lines


_FIELD_OF_KEY = {
    "sigma_kwh_per_sqrt_h": "sigma",
    "b_max_kwh": "b_max",
    "t_f_hours": "t_f",
    "p_line_kw": "p_line",
    "beta_kwh": "beta",
    "p_line_grid_kw": "p_line_grid",
}


def _unit_key(name: str) -> str:
    for key, attr in _FIELD_OF_KEY.items():
        if attr == name:
            return key
    return name


def _parse_value(key: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind == "grid":
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw, 0)
        return kind(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None

    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key in _UNITLESS:
                raise ConfigError(key, f"ambiguous unit; write {_UNITLESS[key]}")
            if key not in _KEYS:
                raise ConfigError(key, "unknown key")
            expected, kind = _KEYS[key]
            if section != expected:
                raise ConfigError(key, f"belongs in section [{expected}], found in [{section}]")
            values[_FIELD_OF_KEY.get(key, key)] = _parse_value(key, kind, raw)
    return ExperimentConfig(source=str(path), **values)
