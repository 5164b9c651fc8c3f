"""Bound, oracle and structural checks shared by the ``verify`` command and the test suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynprog import concavity_check, dp_value_iteration
from .montecarlo import SimConfig
from .policy import JointState, TransferPolicy, kkt_stationarity_check, kkt_transfer, survival_gradient
from .single_mg import SystemParams, chernoff_bound_f, exact_violation_prob, n_of_alpha
from .two_mg import TwoMgParams, proposition1_empirical_check

__all__ = [
    "CheckResult",
    "DpInstance",
    "SMALL_DP",
    "dominance_grid",
    "alpha_sweep",
    "dp_policy_oracle",
    "kkt_certification",
    "inclusion_check",
    "concavity_at_last_step",
    "run_battery",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    observed: float
    required: str
    detail: str = ""


@dataclass(frozen=True)
class DpInstance:
    n_b: float = 2.0
    sigma: float = 1.0
    t_f: float = 0.5
    k_steps: int = 6
    grid_points: int = 41
    # 3 kW gives both a linear band and saturated regions on this box
    p_line: float = 3.0


SMALL_DP = DpInstance()


def random_sizing_grid(n_points: int, seed: int) -> list[tuple[SystemParams, float]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_points):
        params = SystemParams(
            sigma=float(rng.uniform(0.1, 5.0)),
            b_max=float(rng.uniform(0.1, 5.0)),
            delta=float(10 ** rng.uniform(-6, -0.05)),
            t_f=float(rng.uniform(0.1, 48.0)),
            alpha=float(rng.uniform(0.01, 0.99)),
        )
        n = float(rng.uniform(0.05, 3.0) * math.sqrt(params.t_f) * params.sigma / params.b_max * 4)
        out.append((params, n))
    return out


def dominance_grid(n_points: int = 200, seed: int = 0) -> CheckResult:
    """Exact two-barrier passage sum never exceeds the Chernoff expression."""
    worst = math.inf
    bad = 0
    for params, n in random_sizing_grid(n_points, seed):
        margin = chernoff_bound_f(params, n) - exact_violation_prob(params, n)
        worst = min(worst, margin)
        bad += margin < 0
    return CheckResult("bound dominance", bad == 0, worst, ">= 0 on every point", f"{bad}/{n_points} violations")


def alpha_sweep(params: SystemParams | None = None) -> CheckResult:
    """``N(alpha) >= N(1/2)`` with equality only at 1/2, and ``N(alpha) = N(1 - alpha)``."""
    params = params or SystemParams(1.0, 1.0, 0.02, 5.0)
    half = n_of_alpha(params.with_alpha(0.5))
    alphas = np.round(np.arange(1, 100) / 100.0, 2)
    sizes = np.array([n_of_alpha(params.with_alpha(float(a))) for a in alphas])
    gaps = sizes - half
    off = alphas != 0.5
    mirror = np.abs(sizes - sizes[::-1]).max()
    ok = bool(np.all(gaps[off] > 0) and abs(gaps[~off][0]) <= 1e-9 and mirror <= 1e-9)
    return CheckResult(
        "alpha optimality",
        ok,
        float(gaps[off].min()),
        "> 0 off alpha=1/2; symmetry <= 1e-9",
        f"symmetry error {mirror:.2e}",
    )


def _comparison_policies(inst: DpInstance, seed: int):
    rng = np.random.default_rng(seed)
    draws = rng.uniform(-inst.p_line, inst.p_line, size=(inst.k_steps, inst.grid_points, inst.grid_points))
    return {
        "zero": lambda k, a, b: np.zeros_like(a),
        "constant": lambda k, a, b: np.full_like(a, 0.5 * inst.p_line),
        "proportional": lambda k, a, b: np.clip((a - b) * inst.p_line / inst.n_b, -inst.p_line, inst.p_line),
        "random": lambda k, a, b: draws[k],
    }


def dp_policy_oracle(
    inst: DpInstance = SMALL_DP, flip_sign: bool = False, seed: int = 0, tol: float = 1e-3
) -> tuple[CheckResult, np.ndarray]:
    """Compare the discrete KKT law against the optimised value function.

    Returns the check and ``V*_0`` for reuse. ``flip_sign`` runs the law with
    its sign reversed, which must fail.
    """
    dt = inst.t_f / inst.k_steps
    common = (inst.n_b, inst.p_line, inst.sigma, inst.t_f, inst.k_steps, inst.grid_points)
    opt = dp_value_iteration(*common)
    sign = -1.0 if flip_sign else 1.0
    law = dp_value_iteration(*common, policy=lambda k, a, b: sign * kkt_transfer(a, b, inst.p_line, dt))
    gap = float(np.abs(law.values[0] - opt.values[0]).max())
    margins = {
        name: float((law.values[0] - dp_value_iteration(*common, policy=fn).values[0]).min())
        for name, fn in _comparison_policies(inst, seed).items()
    }
    worst = min(margins.values())
    ok = gap <= tol and worst >= -1e-12
    detail = "; ".join(f"margin vs {k} {v:.3g}" for k, v in margins.items())
    return CheckResult("DP oracle vs transfer law", ok, gap, f"sup|V_law - V*| <= {tol:g}", detail), opt.values[0]


def kkt_certification(
    n_states: int = 10_000,
    n_b: float = 10.0,
    p_line: float = 15.0,
    dt: float = 30.0 / 3600.0,
    sigma: float = 1.0,
    seed: int = 0,
    tol: float = 1e-8,
) -> CheckResult:
    """Stationarity at interior points and multiplier sign at saturated points of the discrete law."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, n_b, size=(n_states, 2))
    # half the states close to the diagonal so the interior branch is well populated
    near = rng.uniform(-1.5, 1.5, size=n_states // 2) * p_line * dt
    x[: n_states // 2, 1] = np.clip(x[: n_states // 2, 0] + near, 0.0, n_b)
    worst_interior, worst_sat = 0.0, 0.0
    n_int = n_sat = 0
    for x1, x2 in x:
        state = JointState(float(x1), float(x2), n_b)
        p = float(kkt_transfer(x1, x2, p_line, dt))
        r = kkt_stationarity_check(state, p, dt, sigma, p_line)
        if abs(p) < p_line:
            n_int += 1
            worst_interior = max(worst_interior, r)
        else:
            n_sat += 1
            grad = float(survival_gradient(state, p, dt, sigma))
            # the scale of the gradient sets what counts as a sign error
            if grad * np.sign(p) < -tol:
                worst_sat = max(worst_sat, -grad * np.sign(p))
    ok = worst_interior <= tol and worst_sat == 0.0
    return CheckResult(
        "KKT certification",
        ok,
        worst_interior,
        f"interior residual <= {tol:g}; no wrong-sign gradient",
        f"{n_int} interior, {n_sat} saturated, worst sign error {worst_sat:.3g}",
    )


def inclusion_check(
    params: TwoMgParams, n: float, n_paths: int = 5000, k_steps: int = 600, seed: int = 0
) -> CheckResult:
    rep = proposition1_empirical_check(params, n, SimConfig(n_paths, k_steps, seed))
    ok = rep.counterexamples == 0 and rep.ok and rep.matches_simulation
    return CheckResult(
        "per-path inclusion",
        ok,
        float(rep.counterexamples),
        "0 counterexamples",
        f"{rep.n_paths} paths, union rate {rep.lhs_rate:.4g}, bound rate {rep.rhs_rate:.4g}",
    )


def concavity_at_last_step(
    n_b: float, p_line: float, sigma: float, dt: float, grid_points: int = 41, tol: float = 1e-9
) -> CheckResult:
    """Midpoint concavity of the optimised one-step-to-go value on the deployed box."""
    grid = dp_value_iteration(n_b, p_line, sigma, dt, 1, grid_points)
    rep = concavity_check(grid, 0, tol=tol)
    return CheckResult(
        "value concavity",
        rep.ok,
        rep.worst_margin,
        f"midpoint margin >= -{tol:g}",
        f"{rep.violations}/{rep.n_checked} midpoint violations",
    )


def run_battery(
    params: TwoMgParams,
    capacity_kwh: float,
    *,
    quick: bool = False,
    fault: str | None = None,
    seed: int = 0,
    k_steps: int = 600,
) -> list[CheckResult]:
    """All checks; ``quick`` shrinks the DP grid, the state sample and the path count."""
    base = params.base
    inst = DpInstance(grid_points=21) if quick else SMALL_DP
    results = [dominance_grid(200, seed), alpha_sweep(base)]
    dp, _ = dp_policy_oracle(inst, flip_sign=(fault == "flip-policy-sign"), seed=seed)
    results.append(dp)
    dt = base.t_f / k_steps
    results.append(
        kkt_certification(1_000 if quick else 10_000, capacity_kwh, params.p_line, dt, base.sigma, seed)
    )
    n = capacity_kwh / base.b_max
    results.append(inclusion_check(params, n, 1_000 if quick else 5_000, k_steps, seed))
    results.append(concavity_at_last_step(capacity_kwh, params.p_line, base.sigma, dt, 21 if quick else 41))
    return results
