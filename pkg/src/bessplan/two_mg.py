"""Planning-stage sizing of two microgrids joined by a capacity-limited line."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .montecarlo import SimConfig, _run_chunks, _two_core, _two_noise, simulate_two_mg, wilson_interval
from .policy import TransferPolicy
from .single_mg import SizingOutcome, SystemParams, closed_form_n0, make_outcome

__all__ = [
    "TwoMgParams",
    "SumDiffDecomposition",
    "BetaCalibration",
    "BetaCalibrationError",
    "LimitingSizes",
    "Proposition1Report",
    "sum_diff",
    "calibrate_beta",
    "solve_two_mg",
    "limiting_sizes",
    "proposition1_empirical_check",
]


@dataclass(frozen=True)
class TwoMgParams:
    """Common parameters of both microgrids plus the line capacity (kW) and slack beta (kWh)."""

    base: SystemParams
    p_line: float
    beta: float = 0.0

    def __post_init__(self) -> None:
        if not self.p_line >= 0:
            raise ValueError(f"invalid p_line: {self.p_line!r}")
        if not self.beta >= 0:
            raise ValueError(f"invalid beta: {self.beta!r}")

    @property
    def delta_prime(self) -> float:
        return self.base.delta / 2.0

    @property
    def sigma_c(self) -> float:
        return math.sqrt(2.0) * abs(self.base.sigma)


@dataclass(frozen=True)
class SumDiffDecomposition:
    x_c: np.ndarray
    x_d: np.ndarray
    sigma_c: float


def sum_diff(x1, x2, sigma: float) -> SumDiffDecomposition:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return SumDiffDecomposition(x_c=x1 + x2, x_d=x2 - x1, sigma_c=math.sqrt(2.0) * abs(sigma))


class BetaCalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BetaCalibration:
    beta: float
    rate: float
    wilson_ci: tuple[float, float]
    n_paths: int
    target: float
    sup_abs_xd_quantiles: dict[float, float]


def disconnected_capacity(base: SystemParams) -> float:
    """Per-MG capacity (kWh) of the isolated limit, each MG sized at tolerance delta/2."""
    return closed_form_n0(SystemParams(base.sigma, base.b_max, base.delta / 2.0, base.t_f)) * base.b_max


def sup_abs_difference(
    params: TwoMgParams, policy: TransferPolicy, cfg: SimConfig
) -> np.ndarray:
    """Per-path grid maximum of ``|X2 - X1|`` under ``policy``, without barriers."""
    base = params.base
    dt = cfg.dt(base.t_f)

    def run(idx):
        dw1, dw2, _, _ = _two_noise(cfg.master_seed, idx, cfg.k_steps, dt, False)
        out = _two_core(0.0, math.inf, base.sigma, dt, policy, dw1, dw2)
        return {"m": out["sup_abs_xd"]}

    return _run_chunks(run, cfg)["m"]


def calibrate_beta(
    params: TwoMgParams,
    cfg: SimConfig,
    *,
    policy: TransferPolicy | None = None,
    resolution: float = 0.1,
    z_margin: float = 3.0,
    beta_max: float | None = None,
) -> BetaCalibration:
    """Smallest ``beta`` on a ``resolution`` lattice with ``P[sup|X_d| >= beta]`` safely below delta/2.

    The probability is estimated from ``cfg.n_paths`` simulated difference
    processes; a lattice value is accepted when the estimate plus ``z_margin``
    99% Wilson half-widths is below the target. The estimate is monotone in
    ``beta``, so the first accepted lattice value is the one bisection would
    return. ``policy`` defaults to the continuous-time bang-bang law at
    ``params.p_line``. ``beta_max`` defaults to twice the disconnected-limit
    capacity.
    """
    if cfg.n_paths < 10_000:
        raise ValueError("calibrate_beta needs at least 10^4 paths")
    policy = policy or TransferPolicy.bang_bang(params.p_line)
    if beta_max is None:
        beta_max = 2.0 * disconnected_capacity(params.base)
    target = params.delta_prime
    m = np.sort(sup_abs_difference(params, policy, cfg))
    n = len(m)
    grid = resolution * np.arange(1, int(math.floor(beta_max / resolution + 1e-9)) + 1)
    counts = n - np.searchsorted(m, grid, side="left")  # paths with sup|X_d| >= beta
    quantiles = {q: float(np.quantile(m, q)) for q in (0.5, 0.99, 0.999)}
    for beta, count in zip(grid, counts):
        lo, hi = wilson_interval(int(count), n)
        rate = count / n
        if rate + z_margin * 0.5 * (hi - lo) < target:
            return BetaCalibration(float(round(beta, 10)), float(rate), (lo, hi), n, target, quantiles)
    raise BetaCalibrationError(
        f"no beta <= {beta_max:.3g} kWh meets P[sup|X_d| >= beta] < {target:g} "
        f"(median sup|X_d| = {quantiles[0.5]:.3g} kWh); line capacity {params.p_line} kW too small"
    )


def solve_two_mg(params: TwoMgParams, rounding: str = "ceil") -> SizingOutcome:
    """Per-MG battery count from the summed-process bound plus the slack ``beta / b_max``.

    The sum ``X1 + X2`` is a single Brownian reservoir with volatility
    ``sqrt(2) sigma`` and capacity ``2 n b_max``; the single-MG closed form at
    tolerance delta/2 sizes it, then half goes to each microgrid.
    """
    base = params.base
    summed = SystemParams(params.sigma_c, 2.0 * base.b_max, params.delta_prime, base.t_f)
    n = closed_form_n0(summed) + params.beta / base.b_max
    return make_outcome(n, base.b_max, 0.5, rounding)


@dataclass(frozen=True)
class LimitingSizes:
    n_disconnected: float
    n_infinite: float
    ratio: float

    def __iter__(self):
        return iter((self.n_disconnected, self.n_infinite, self.ratio))


def limiting_sizes(params: TwoMgParams | SystemParams) -> LimitingSizes:
    """Per-MG counts for a zero-capacity and an unlimited line."""
    base = params.base if isinstance(params, TwoMgParams) else params
    root_t = abs(base.sigma) * math.sqrt(base.t_f) / base.b_max
    n0 = 2.0 * math.sqrt(2.0) * math.sqrt(math.log(4.0 / base.delta)) * root_t
    n_inf = 2.0 * math.sqrt(math.log(2.0 / base.delta)) * root_t
    return LimitingSizes(n0, n_inf, n0 / n_inf)


@dataclass
class Proposition1Report:
    n_paths: int
    lhs_count: int
    a_c: int
    a_c_tilde: int
    a_d_prime: int
    counterexamples: int
    lhs_rate: float
    rhs_rate: float
    joint_se: float
    matches_simulation: bool

    @property
    def ok(self) -> bool:
        return self.counterexamples == 0 and self.lhs_rate <= self.rhs_rate + 3.0 * self.joint_se


def proposition1_empirical_check(
    params: TwoMgParams,
    n: float,
    cfg: SimConfig,
    policy: TransferPolicy | None = None,
) -> Proposition1Report:
    """Path-by-path check that a barrier hit implies one of the sum/difference events.

    With ``N_B = n b_max`` the per-MG events are ``sup X_i >= N_B`` and
    ``inf X_i <= 0``; the dominating events are ``sup X_c >= 2 N_B - beta``,
    ``inf X_c <= beta`` and ``sup |X_d| >= beta``. All extremes are taken
    over the simulation grid.
    """
    policy = policy or TransferPolicy.bang_bang(params.p_line)
    res = simulate_two_mg(params, n, policy, cfg)
    ext = res.extremes
    n_b = n * params.base.b_max
    beta = params.beta
    union = (ext["sup_x1"] >= n_b) | (ext["inf_x1"] <= 0) | (ext["sup_x2"] >= n_b) | (ext["inf_x2"] <= 0)
    a_c = ext["sup_xc"] >= 2.0 * n_b - beta
    a_ct = ext["inf_xc"] <= beta
    a_d = ext["sup_abs_xd"] >= beta
    rhs = a_c.astype(int) + a_ct.astype(int) + a_d.astype(int)
    gap = rhs - union.astype(int)
    m = res.n_paths
    return Proposition1Report(
        n_paths=m,
        lhs_count=int(union.sum()),
        a_c=int(a_c.sum()),
        a_c_tilde=int(a_ct.sum()),
        a_d_prime=int(a_d.sum()),
        counterexamples=int((gap < 0).sum()),
        lhs_rate=float(union.mean()),
        rhs_rate=float(rhs.mean()),
        joint_se=float(gap.std(ddof=1) / math.sqrt(m)) if m > 1 else math.inf,
        matches_simulation=bool(np.array_equal(union, res.violated)),
    )
