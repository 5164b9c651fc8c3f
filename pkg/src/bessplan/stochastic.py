"""Seeded Wiener paths, Gaussian numerics and Brownian first-passage probabilities.

Every path is driven by its own counter-based Philox stream keyed on
``(master_seed, stream)`` with the path index placed in the high counter
word, so a path is a pure function of its seed triple and never depends on
batching, chunk size or thread scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import special

if TYPE_CHECKING:
    from .single_mg import SystemParams

__all__ = [
    "Seed",
    "WienerPath",
    "generate_path",
    "normal_increments",
    "uniform_draws",
    "std_normal_cdf",
    "std_normal_pdf",
    "first_passage_prob_upper",
    "first_passage_prob_lower",
    "bridge_crossing_prob",
]

_U64 = 2**64

# stream tags; uniforms for the bridge correction live on separate streams so
# that switching the correction on never perturbs the Gaussian draws
STREAM_MG1 = 0
STREAM_MG2 = 1
STREAM_BRIDGE_MG1 = 2
STREAM_BRIDGE_MG2 = 3


@dataclass(frozen=True)
class Seed:
    """Identifies one reproducible noise stream."""

    master_seed: int
    path_index: int
    stream: int = 0

    def __post_init__(self) -> None:
        for name in ("master_seed", "path_index", "stream"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")


@dataclass(frozen=True)
class WienerPath:
    dt: float
    values: np.ndarray

    @property
    def k_steps(self) -> int:
        return len(self.values) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.values))


def _generator(master_seed: int, path_index: int, stream: int) -> np.random.Generator:
    bitgen = np.random.Philox(counter=[0, 0, int(path_index), 0], key=[int(master_seed), int(stream)])
    return np.random.Generator(bitgen)


def _check_grid(k_steps: int, dt: float) -> None:
    if int(k_steps) < 1:
        raise ValueError(f"k_steps must be >= 1, got {k_steps}")
    if not dt > 0 or not math.isfinite(dt):
        raise ValueError(f"dt must be positive and finite, got {dt}")


def normal_increments(
    master_seed: int,
    path_indices: Sequence[int] | np.ndarray,
    k_steps: int,
    dt: float,
    stream: int = STREAM_MG1,
) -> np.ndarray:
    """Wiener increments of shape ``(len(path_indices), k_steps)``, variance ``dt`` each."""
    _check_grid(k_steps, dt)
    out = np.empty((len(path_indices), int(k_steps)))
    for row, idx in enumerate(path_indices):
        _generator(master_seed, idx, stream).standard_normal(out=out[row])
    out *= math.sqrt(dt)
    return out


def uniform_draws(
    master_seed: int, path_indices: Sequence[int] | np.ndarray, k_steps: int, stream: int
) -> np.ndarray:
    out = np.empty((len(path_indices), int(k_steps)))
    for row, idx in enumerate(path_indices):
        _generator(master_seed, idx, stream).random(out=out[row])
    return out


def generate_path(seed: Seed, k_steps: int, dt: float) -> WienerPath:
    """Cumulative Wiener values ``W(t_0), ..., W(t_K)`` with ``W(t_0) = 0``."""
    inc = normal_increments(seed.master_seed, [seed.path_index], k_steps, dt, seed.stream)[0]
    values = np.concatenate(([0.0], np.cumsum(inc)))
    return WienerPath(dt=float(dt), values=values)


def std_normal_cdf(z):
    """Standard normal CDF.

    Backed by the Cephes ``ndtr`` routine (erf/erfc expansions), accurate to a
    few ulps across the real line, including the far lower tail.
    """
    return special.ndtr(z)


def std_normal_pdf(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


def _barrier_scale(params: "SystemParams", n: float) -> float:
    if not n > 0:
        raise ValueError(f"n must be positive, got {n}")
    if params.sigma == 0:
        raise ValueError("sigma must be nonzero")
    if not params.t_f > 0:
        raise ValueError("t_f must be positive")
    return n * params.b_max / (abs(params.sigma) * math.sqrt(params.t_f))


def first_passage_prob_upper(params: "SystemParams", n: float) -> float:
    """P[X hits n*b_max before t_f], X started at alpha*n*b_max (reflection principle)."""
    z = _barrier_scale(params, n) * (1.0 - params.alpha)
    return float(2.0 * std_normal_cdf(-z))


def first_passage_prob_lower(params: "SystemParams", n: float) -> float:
    """P[X hits 0 before t_f], X started at alpha*n*b_max."""
    z = _barrier_scale(params, n) * params.alpha
    return float(2.0 * std_normal_cdf(-z))


def bridge_crossing_prob(a, b, lower, upper, var):
    """Probability that a Brownian bridge from ``a`` to ``b`` leaves ``(lower, upper)``.

    ``var`` is the increment variance over the step. The two one-sided bridge
    crossing probabilities are combined as independent events, which ignores
    paths that touch both barriers inside one step. Steps with an endpoint
    outside the interval get probability 0; grid monitoring already counts them.
    Returns ``(p_either, p_upper)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    inside = (a > lower) & (a < upper) & (b > lower) & (b < upper)
    du = np.where(inside, (upper - a) * (upper - b), 0.0)
    dl = np.where(inside, (a - lower) * (b - lower), 0.0)
    p_up = np.exp(-2.0 * du / var)
    p_lo = np.exp(-2.0 * dl / var)
    p = 1.0 - (1.0 - p_up) * (1.0 - p_lo)
    return np.where(inside, p, 0.0), np.where(inside, p_up, 0.0)
