"""Chance-constrained sizing of a single microgrid battery bank."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal

import numpy as np
from scipy.optimize import brentq

from .stochastic import first_passage_prob_lower, first_passage_prob_upper

__all__ = [
    "SystemParams",
    "SizingOutcome",
    "RateDiagnostic",
    "round_units",
    "chernoff_bound_f",
    "closed_form_n0",
    "solve_single_mg",
    "n_of_alpha",
    "exact_violation_prob",
    "rate_constant_diagnostic",
]

Rounding = Literal["ceil", "nearest", "floor"]
ROUNDING_MODES = ("ceil", "nearest", "floor")


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of one microgrid.

    Attributes
    ----------
    sigma : float
        Volatility of the net surplus energy, kWh per sqrt(hour). Nonzero.
    b_max : float
        Capacity of one battery unit, kWh.
    delta : float
        Tolerated probability of a full-charge or depletion event, in (0, 1).
    t_f : float
        Planning horizon, hours.
    alpha : float
        Initial charge ratio in [0, 1].
    """

    sigma: float
    b_max: float
    delta: float
    t_f: float
    alpha: float = 0.5

    def __post_init__(self) -> None:
        checks = {
            "sigma": math.isfinite(self.sigma) and self.sigma != 0,
            "b_max": math.isfinite(self.b_max) and self.b_max > 0,
            "delta": 0 < self.delta < 1,
            "t_f": math.isfinite(self.t_f) and self.t_f > 0,
            "alpha": 0 <= self.alpha <= 1,
        }
        for name, ok in checks.items():
            if not ok:
                raise ValueError(f"invalid {name}: {getattr(self, name)!r}")

    def with_alpha(self, alpha: float) -> "SystemParams":
        return replace(self, alpha=alpha)


@dataclass(frozen=True)
class SizingOutcome:
    n_continuous: float
    n_units: int
    total_capacity: float
    initial_energy: float
    alpha: float
    rounding_mode: str


def round_units(n: float, mode: str) -> int:
    if mode == "ceil":
        return int(math.ceil(n - 1e-12))
    if mode == "floor":
        return int(math.floor(n + 1e-12))
    if mode == "nearest":
        return int(math.floor(n + 0.5))
    raise ValueError(f"rounding must be one of {ROUNDING_MODES}, got {mode!r}")


def make_outcome(n: float, b_max: float, alpha: float, rounding: str) -> SizingOutcome:
    units = round_units(n, rounding)
    capacity = units * b_max
    return SizingOutcome(
        n_continuous=float(n),
        n_units=units,
        total_capacity=capacity,
        initial_energy=alpha * capacity,
        alpha=alpha,
        rounding_mode=rounding,
    )


def chernoff_bound_f(params: SystemParams, n: float) -> float:
    """Two-exponential upper bound on the summed barrier-hitting probabilities."""
    if not n >= 0:
        raise ValueError(f"n must be >= 0, got {n}")
    scale = (n * params.b_max) ** 2 / (2.0 * params.sigma**2 * params.t_f)
    a = params.alpha
    return math.exp(-scale * (1.0 - a) ** 2) + math.exp(-scale * a**2)


def closed_form_n0(params: SystemParams) -> float:
    return math.sqrt(8.0 * params.sigma**2 * params.t_f * math.log(2.0 / params.delta)) / params.b_max


def solve_single_mg(params: SystemParams, rounding: Rounding = "ceil") -> SizingOutcome:
    """Minimal battery count with the half-charged start.

    ``params.alpha`` is ignored: the optimal initial charge ratio is 1/2.
    """
    return make_outcome(closed_form_n0(params), params.b_max, 0.5, rounding)


def n_of_alpha(params: SystemParams, rtol: float = 1e-12) -> float:
    """Smallest n with ``chernoff_bound_f(n) <= delta`` at the given alpha."""
    a = params.alpha
    if not 0 < a < 1:
        raise ValueError("alpha must lie strictly inside (0, 1); at 0 or 1 the bound exceeds 1")
    hi = 10.0 * closed_form_n0(params) / min(a, 1.0 - a)
    return brentq(lambda n: chernoff_bound_f(params, n) - params.delta, 0.0, hi, xtol=1e-300, rtol=rtol)


def exact_violation_prob(params: SystemParams, n: float) -> float:
    """Sum of the exact upper- and lower-barrier first-passage probabilities."""
    return first_passage_prob_upper(params, n) + first_passage_prob_lower(params, n)


@dataclass(frozen=True)
class RateDiagnostic:
    c_tilde: float
    t_f: np.ndarray
    n_exact: np.ndarray
    n_chernoff: np.ndarray

    @property
    def c_hat(self) -> np.ndarray:
        return self.n_exact / np.sqrt(self.t_f)

    @property
    def ratio(self) -> np.ndarray:
        return self.n_exact / self.n_chernoff


def _exact_size(params: SystemParams) -> float:
    hi = 2.0 * closed_form_n0(params)
    return brentq(
        lambda n: exact_violation_prob(params, n) - params.delta, 1e-12 * hi, hi, xtol=1e-300, rtol=1e-14
    )


def rate_constant_diagnostic(params: SystemParams, t_f_grid: Iterable[float]) -> RateDiagnostic:
    """Exact-CDF and Chernoff sizes over a grid of horizons, both at alpha = 1/2.

    Both scale as ``sigma * sqrt(t_f)``; ``c_tilde`` is the Chernoff constant
    ``sqrt(8 ln(2/delta)) / b_max``.
    """
    grid = np.asarray(list(t_f_grid), dtype=float)
    half = params.with_alpha(0.5)
    exact = np.array([_exact_size(replace(half, t_f=t)) for t in grid])
    chern = np.array([closed_form_n0(replace(half, t_f=t)) for t in grid])
    c_tilde = math.sqrt(8.0 * math.log(2.0 / params.delta)) / params.b_max
    return RateDiagnostic(c_tilde=c_tilde, t_f=grid, n_exact=exact, n_chernoff=chern)
