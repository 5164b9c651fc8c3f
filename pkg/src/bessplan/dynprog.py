"""Backward dynamic programming for the joint survival probability of two microgrids.

``V_k(x)`` is the probability that both microgrids stay in ``[0, n_b]`` at all
of the remaining grid times ``t_{k+1}, ..., t_K`` when starting from ``x`` at
``t_k``. Between grid nodes ``V_{k+1}`` is the bilinear interpolant of its
nodal values. The one-step expectation of a bilinear interpolant against the
product Gaussian kernel separates into ``a(m1)^T V a(m2)``, where ``a_i(m)``
is the Gaussian mass of the i-th hat basis function; the moments are
evaluated in closed form, so no quadrature error enters the default path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .policy import TransferPolicy, check_step_condition
from .stochastic import std_normal_cdf, std_normal_pdf

__all__ = [
    "ValueGrid",
    "NonConvergenceError",
    "ConcavityReport",
    "hat_masses",
    "one_step_expectation",
    "dp_value_iteration",
    "concavity_check",
    "write_value_grid_csv",
]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

PolicyFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


class NonConvergenceError(RuntimeError):
    pass


@dataclass
class ValueGrid:
    n_b: float
    grid_points_per_axis: int
    dt: float
    k_steps: int
    values: np.ndarray
    controls: np.ndarray = field(repr=False)
    p_line: float = 0.0
    sigma: float = 1.0

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, self.n_b, self.grid_points_per_axis)


def hat_masses(means: np.ndarray, nodes: np.ndarray, scale: float) -> np.ndarray:
    """Gaussian mass of each hat basis function on ``nodes``.

    Returns an array of shape ``means.shape + (len(nodes),)`` with
    ``out[..., i] = E[hat_i(Y) 1{nodes[0] <= Y <= nodes[-1]}]`` for
    ``Y ~ N(mean, scale^2)``. Rows sum to the probability of landing in the box.
    """
    m = np.asarray(means, dtype=float)[..., None]
    h = np.diff(nodes)
    z = (nodes - m) / scale
    cdf = std_normal_cdf(z)
    sf = std_normal_cdf(-z)
    pdf = std_normal_pdf(z)
    # upper-tail differences are formed with the survival function where the
    # interval lies above the mean, which keeps tiny masses accurate
    upper = z[..., :-1] > 0
    mass0 = np.where(upper, sf[..., :-1] - sf[..., 1:], cdf[..., 1:] - cdf[..., :-1])
    mass1 = m * mass0 + scale * (pdf[..., :-1] - pdf[..., 1:])
    right = (nodes[1:] * mass0 - mass1) / h  # weight of the left node of each cell
    left = (mass1 - nodes[:-1] * mass0) / h  # weight of the right node of each cell
    out = np.zeros(m.shape[:-1] + (len(nodes),))
    out[..., :-1] += right
    out[..., 1:] += left
    return out


def _gauss_legendre_masses(means: np.ndarray, nodes: np.ndarray, scale: float, order: int) -> np.ndarray:
    # quadrature alternative to ``hat_masses``; the integrand is split at every
    # grid cell so the kinks of the interpolant fall on panel boundaries
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = nodes[:-1, None], nodes[1:, None]
    pts = 0.5 * (b - a) * x + 0.5 * (b + a)
    wts = 0.5 * (b - a) * w
    m = np.asarray(means, dtype=float)[..., None, None]
    dens = std_normal_pdf((pts - m) / scale) / scale * wts
    h = (b - a)
    right = (dens * (b - pts) / h).sum(axis=-1)
    left = (dens * (pts - a) / h).sum(axis=-1)
    out = np.zeros(np.shape(means) + (len(nodes),))
    out[..., :-1] += right
    out[..., 1:] += left
    return out


def one_step_expectation(
    values: np.ndarray,
    nodes: np.ndarray,
    x1: np.ndarray,
    x2: np.ndarray,
    p12: np.ndarray,
    dt: float,
    sigma: float,
    quadrature: str = "exact",
    order: int = 32,
) -> np.ndarray:
    """``E[1_B(Y) V(Y)]`` for ``Y ~ N((x1 - p12 dt, x2 + p12 dt), sigma^2 dt I)``."""
    scale = abs(sigma) * math.sqrt(dt)
    m1 = x1 - p12 * dt
    m2 = x2 + p12 * dt
    if quadrature == "exact":
        a1 = hat_masses(m1, nodes, scale)
        a2 = hat_masses(m2, nodes, scale)
    elif quadrature == "gauss-legendre":
        a1 = _gauss_legendre_masses(m1, nodes, scale, order)
        a2 = _gauss_legendre_masses(m2, nodes, scale, order)
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    return np.sum((a1 @ values) * a2, axis=-1)


def _maximise(objective, lo: float, hi: float, shape, n_scan: int, tol: float, max_iter: int = 200):
    """Vectorised scan-then-golden-section maximisation over ``[lo, hi]``."""
    grid = np.linspace(lo, hi, n_scan)
    scan = np.stack([objective(np.full(shape, p)) for p in grid])
    best = np.argmax(scan, axis=0)
    a = grid[np.clip(best - 1, 0, n_scan - 1)]
    b = grid[np.clip(best + 1, 0, n_scan - 1)]
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(max_iter):
        if np.max(b - a) <= tol:
            break
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - GOLDEN * (b - a)
        new_d = a + GOLDEN * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        fc_next = np.where(left, objective(new_c), fd)
        fd_next = np.where(left, fc, objective(new_d))
        c, d, fc, fd = c_next, d_next, fc_next, fd_next
    else:
        raise NonConvergenceError(f"inner maximisation bracket still {np.max(b - a):.3g} wide")
    p = 0.5 * (a + b)
    value = objective(p)
    # the scan maximum protects against a non-unimodal objective
    scan_best = np.take_along_axis(scan, best[None], axis=0)[0]
    take_scan = scan_best > value
    p = np.where(take_scan, grid[best], p)
    value = np.where(take_scan, scan_best, value)
    return p, value


def dp_value_iteration(
    n_b: float,
    p_line: float,
    sigma: float,
    t_f: float,
    k_steps: int,
    grid_points: int,
    policy: TransferPolicy | PolicyFn | None = None,
    *,
    quadrature: Literal["exact", "gauss-legendre"] = "exact",
    order: int = 32,
    n_scan: int = 33,
    tol: float = 1e-10,
) -> ValueGrid:
    """Survival value function on a ``grid_points x grid_points`` lattice over the box.

    Without ``policy`` the transfer is optimised at every node and step over
    ``[-p_line, p_line]``. A ``TransferPolicy`` or a callable
    ``policy(k, x1, x2) -> p12`` is evaluated instead when supplied; callables
    must stay within the line capacity.
    """
    if grid_points < 3:
        raise ValueError("grid_points must be >= 3")
    if k_steps < 0:
        raise ValueError("k_steps must be >= 0")
    if not t_f > 0 or not n_b > 0:
        raise ValueError("t_f and n_b must be positive")
    nodes = np.linspace(0.0, n_b, grid_points)
    shape = (grid_points, grid_points)
    values = np.ones((k_steps + 1,) + shape)
    controls = np.zeros((k_steps,) + shape)
    if k_steps == 0:
        return ValueGrid(n_b, grid_points, 0.0, 0, values, controls, p_line, sigma)

    dt = t_f / k_steps
    check_step_condition(n_b, p_line, dt)
    x1, x2 = np.meshgrid(nodes, nodes, indexing="ij")

    for k in range(k_steps - 1, -1, -1):
        nxt = values[k + 1]

        def objective(p, nxt=nxt):
            return one_step_expectation(nxt, nodes, x1, x2, p, dt, sigma, quadrature, order)

        if policy is None:
            if p_line == 0:
                p = np.zeros(shape)
                v = objective(p)
            else:
                p, v = _maximise(objective, -p_line, p_line, shape, n_scan, tol)
        else:
            if isinstance(policy, TransferPolicy):
                p = np.broadcast_to(policy(x1, x2), shape).astype(float)
            else:
                p = np.broadcast_to(np.asarray(policy(k, x1, x2), dtype=float), shape)
            if np.any(np.abs(p) > p_line * (1 + 1e-12)):
                raise ValueError("policy emits transfers beyond the line capacity")
            v = objective(p)
        values[k] = np.clip(v, 0.0, 1.0)
        controls[k] = p
    return ValueGrid(n_b, grid_points, dt, k_steps, values, controls, p_line, sigma)


@dataclass(frozen=True)
class ConcavityReport:
    violations: int
    worst_margin: float
    n_checked: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _line_margins(line: np.ndarray) -> np.ndarray:
    # midpoint margins V(mid) - (V(a) + V(b))/2 for every pair with a grid midpoint
    n = len(line)
    out = []
    for span in range(2, n, 2):
        a = line[: n - span]
        b = line[span:]
        mid = line[span // 2 : n - span // 2]
        out.append(mid - 0.5 * (a + b))
    return np.concatenate(out) if out else np.empty(0)


def concavity_check(grid: ValueGrid | np.ndarray, k: int = 0, tol: float = 1e-9) -> ConcavityReport:
    """Midpoint concavity of ``V_k`` along rows, columns and both diagonal directions."""
    v = grid.values[k] if isinstance(grid, ValueGrid) else np.asarray(grid, dtype=float)
    lines = list(v) + list(v.T)
    n = v.shape[0]
    flipped = np.fliplr(v)
    for off in range(-(n - 1), n):
        lines.append(np.diagonal(v, off))
        lines.append(np.diagonal(flipped, off))
    margins = np.concatenate([_line_margins(line) for line in lines if len(line) >= 3])
    if margins.size == 0:
        return ConcavityReport(0, math.inf, 0)
    return ConcavityReport(
        violations=int(np.sum(margins < -tol)),
        worst_margin=float(margins.min()),
        n_checked=int(margins.size),
    )


def write_value_grid_csv(grid: ValueGrid, path, header_lines: list[str] | None = None) -> None:
    """One row per node and step: ``k, x1, x2, V, p12`` (``p12`` blank at the terminal step)."""
    axis = grid.axis
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "x1", "x2", "V", "p12"])
        for k in range(grid.k_steps + 1):
            for i, a in enumerate(axis):
                for j, b in enumerate(axis):
                    p = "" if k == grid.k_steps else repr(float(grid.controls[k, i, j]))
                    w.writerow([k, repr(float(a)), repr(float(b)), repr(float(grid.values[k, i, j])), p])
