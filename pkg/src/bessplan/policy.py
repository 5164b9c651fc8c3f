"""Power-transfer laws between two microgrids and their one-step KKT analysis.

Sign convention: ``p12 > 0`` moves energy from MG-1 to MG-2, so over one step
of length ``dt`` the mean of MG-1 shifts by ``-p12*dt`` and MG-2 by ``+p12*dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .stochastic import std_normal_cdf, std_normal_pdf

__all__ = [
    "PolicyKind",
    "TransferPolicy",
    "JointState",
    "bang_bang_transfer",
    "kkt_transfer",
    "check_step_condition",
    "step_transition_prob",
    "survival_gradient",
    "kkt_stationarity_check",
]


class PolicyKind(str, Enum):
    DISCONNECTED = "disconnected"
    BANG_BANG = "bang-bang"
    DISCRETE_KKT = "discrete-kkt"


@dataclass(frozen=True)
class JointState:
    x1: float
    x2: float
    n_b: float

    def __post_init__(self) -> None:
        if not self.n_b > 0:
            raise ValueError(f"n_b must be positive, got {self.n_b}")
        for name in ("x1", "x2"):
            v = getattr(self, name)
            if not 0 <= v <= self.n_b:
                raise ValueError(f"{name}={v} outside [0, {self.n_b}]")


def bang_bang_transfer(x1, x2, p_line: float):
    """Full line capacity toward the microgrid holding less energy; 0 on exact ties."""
    return p_line * np.sign(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float))


def check_step_condition(n_b: float, p_line: float, dt: float) -> None:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not n_b - p_line * dt > 0:
        raise ValueError(
            f"time step too coarse: n_b - p_line*dt = {n_b - p_line * dt:.6g} must be > 0"
        )


def kkt_transfer(x1, x2, p_line: float, dt: float, n_b: float | None = None):
    """Discrete-time law: equalise the next-step means when the line allows it, else saturate.

    Passing ``n_b`` also enforces the step condition ``n_b - p_line*dt > 0``.
    """
    if n_b is not None:
        check_step_condition(n_b, p_line, dt)
    elif not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    diff = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    return np.clip(diff / (2.0 * dt), -p_line, p_line)


@dataclass(frozen=True)
class TransferPolicy:
    kind: PolicyKind
    p_line: float = 0.0
    dt: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not self.p_line >= 0:
            raise ValueError(f"p_line must be >= 0, got {self.p_line}")
        if (self.kind is PolicyKind.DISCONNECTED) != (self.p_line == 0):
            raise ValueError("a disconnected policy must have p_line = 0 and vice versa")
        if self.kind is PolicyKind.DISCRETE_KKT and not (self.dt is not None and self.dt > 0):
            raise ValueError("discrete-kkt policy needs a positive dt")

    @classmethod
    def disconnected(cls) -> "TransferPolicy":
        return cls(PolicyKind.DISCONNECTED, 0.0)

    @classmethod
    def bang_bang(cls, p_line: float) -> "TransferPolicy":
        if p_line == 0:
            return cls.disconnected()
        return cls(PolicyKind.BANG_BANG, p_line)

    @classmethod
    def discrete_kkt(cls, p_line: float, dt: float) -> "TransferPolicy":
        if p_line == 0:
            return cls.disconnected()
        return cls(PolicyKind.DISCRETE_KKT, p_line, dt)

    def __call__(self, x1, x2):
        if self.kind is PolicyKind.DISCONNECTED:
            return np.zeros(np.broadcast(np.asarray(x1), np.asarray(x2)).shape)
        if self.kind is PolicyKind.BANG_BANG:
            return bang_bang_transfer(x1, x2, self.p_line)
        return kkt_transfer(x1, x2, self.p_line, self.dt)


def _g_terms(x1, x2, p12, dt, sigma, n_b):
    scale = abs(sigma) * math.sqrt(dt)
    m1 = np.asarray(x1, dtype=float) - np.asarray(p12, dtype=float) * dt
    m2 = np.asarray(x2, dtype=float) + np.asarray(p12, dtype=float) * dt
    g1 = (n_b - m1) / scale
    g2 = -m1 / scale
    g3 = (n_b - m2) / scale
    g4 = -m2 / scale
    return g1, g2, g3, g4


def step_transition_prob(state: JointState, p12, dt: float, sigma: float):
    """Probability that both microgrids are inside ``[0, n_b]`` after one step."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g1, g2, g3, g4 = _g_terms(state.x1, state.x2, p12, dt, sigma, state.n_b)
    return (std_normal_cdf(g1) - std_normal_cdf(g2)) * (std_normal_cdf(g3) - std_normal_cdf(g4))


def survival_gradient(state: JointState, p12, dt: float, sigma: float):
    """Derivative of ``step_transition_prob`` with respect to ``p12``."""
    g1, g2, g3, g4 = _g_terms(state.x1, state.x2, p12, dt, sigma, state.n_b)
    c = math.sqrt(dt) / abs(sigma)
    mass1 = std_normal_cdf(g1) - std_normal_cdf(g2)
    mass2 = std_normal_cdf(g3) - std_normal_cdf(g4)
    return c * (std_normal_pdf(g1) - std_normal_pdf(g2)) * mass2 + c * mass1 * (
        std_normal_pdf(g4) - std_normal_pdf(g3)
    )


def kkt_stationarity_check(state: JointState, p12: float, dt: float, sigma: float, p_line: float) -> float:
    """KKT residual of the last-step problem at ``p12``.

    Interior points return ``|dV/dp12|`` (both multipliers zero). At ``+p_line``
    the multiplier equals the gradient and must be nonnegative, so the residual
    is the negative part of the gradient; symmetrically at ``-p_line``.
    """
    if abs(p12) > p_line * (1 + 1e-12):
        raise ValueError(f"|p12|={abs(p12)} exceeds line capacity {p_line}")
    grad = float(survival_gradient(state, p12, dt, sigma))
    if p_line > 0 and p12 >= p_line:
        return max(0.0, -grad)
    if p_line > 0 and p12 <= -p_line:
        return max(0.0, grad)
    return abs(grad)
