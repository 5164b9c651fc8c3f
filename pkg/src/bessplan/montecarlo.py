"""Monte Carlo ensembles for single and coupled microgrids.

Paths are simulated on the grid ``t_k = k * dt`` and a path violates when any
grid state leaves the open interval ``(0, capacity)``, the initial state
included. Paths keep evolving unclamped after a violation. Work is split
into fixed chunks of path indices; chunk results are merged in index order so
totals do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
from scipy import special

from .policy import PolicyKind, TransferPolicy, check_step_condition
from .single_mg import SystemParams, closed_form_n0
from .stochastic import (
    STREAM_BRIDGE_MG1,
    STREAM_BRIDGE_MG2,
    STREAM_MG1,
    STREAM_MG2,
    bridge_crossing_prob,
    normal_increments,
    uniform_draws,
)

if TYPE_CHECKING:
    from .two_mg import TwoMgParams

__all__ = [
    "wilson_interval",
    "SimConfig",
    "EnsembleResult",
    "SweepPoint",
    "worker_count",
    "simulate_single",
    "simulate_two_mg",
    "capacity_sweep",
    "summary_rows",
    "write_summary_csv",
    "write_traces_csv",
]

BARRIERS = ("upper1", "lower1", "upper2", "lower2")
CONFIDENCE = 0.99


def wilson_interval(successes: int, trials: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    z = float(special.ndtri(0.5 + confidence / 2.0))
    p = successes / trials
    z2n = z * z / trials
    denom = 1.0 + z2n
    center = (p + z2n / 2.0) / denom
    half = z / denom * math.sqrt(p * (1.0 - p) / trials + z2n / (4.0 * trials))
    return max(0.0, center - half), min(1.0, center + half)


def worker_count(requested: int | None = None) -> int:
    """Worker threads to use; ``BESS_PLAN_THREADS`` caps the count."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("BESS_PLAN_THREADS")
    if cap:
        n = min(n, int(cap))
    return max(1, n)


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    k_steps: int
    master_seed: int = 0
    record_traces: bool = False
    bridge_correction: bool = False
    n_threads: int | None = None
    chunk_size: int = 2048

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.k_steps < 1:
            raise ValueError("k_steps must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    def dt(self, t_f: float) -> float:
        return t_f / self.k_steps


@dataclass
class EnsembleResult:
    n_paths: int
    violations: int
    violation_rate: float
    wilson_ci: tuple[float, float]
    first_violation_times: np.ndarray | None = field(default=None, repr=False)
    which_barrier: np.ndarray | None = field(default=None, repr=False)
    traces: dict[str, np.ndarray] | None = field(default=None, repr=False)
    extremes: dict[str, np.ndarray] | None = field(default=None, repr=False)
    dt: float = 0.0

    @property
    def half_width(self) -> float:
        return 0.5 * (self.wilson_ci[1] - self.wilson_ci[0])

    @property
    def violated(self) -> np.ndarray:
        return ~np.isnan(self.first_violation_times)


def _result_from_paths(first_idx: np.ndarray, barrier: np.ndarray, dt: float, **extra) -> EnsembleResult:
    violated = first_idx >= 0
    n = len(first_idx)
    count = int(violated.sum())
    times = np.where(violated, first_idx * dt, np.nan)
    tags = np.array(BARRIERS + ("",), dtype=object)[np.where(violated, barrier, len(BARRIERS))]
    return EnsembleResult(
        n_paths=n,
        violations=count,
        violation_rate=count / n,
        wilson_ci=wilson_interval(count, n),
        first_violation_times=times,
        which_barrier=tags,
        dt=dt,
        **extra,
    )


def _chunks(n_paths: int, size: int) -> list[np.ndarray]:
    return [np.arange(s, min(s + size, n_paths)) for s in range(0, n_paths, size)]


def _run_chunks(fn: Callable[[np.ndarray], dict], cfg: SimConfig) -> dict[str, np.ndarray]:
    chunks = _chunks(cfg.n_paths, cfg.chunk_size)
    workers = min(worker_count(cfg.n_threads), len(chunks))
    if workers == 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def _first_exit(x: np.ndarray, capacity: float, offset: int = 0):
    """First column where ``x`` leaves ``(0, capacity)``; -1 if never. Barrier 0 = upper, 1 = lower."""
    hi = x >= capacity
    out = hi | (x <= 0.0)
    has = out.any(axis=1)
    k = np.argmax(out, axis=1)
    rows = np.arange(len(x))
    first = np.where(has, k, -1)
    barrier = np.where(hi[rows, k], 0, 1) + offset
    return first, barrier


def _bridge_exit(x: np.ndarray, capacity: float, var: float, u: np.ndarray, offset: int = 0):
    """First step whose Brownian-bridge interpolation leaves the interval, as flagged by ``u``."""
    p_cross, p_up = bridge_crossing_prob(x[:, :-1], x[:, 1:], 0.0, capacity, var)
    cross = u < p_cross
    has = cross.any(axis=1)
    k = np.argmax(cross, axis=1)
    rows = np.arange(len(x))
    first = np.where(has, k + 1, -1)
    barrier = np.where(u[rows, k] < p_up[rows, k], 0, 1) + offset
    return first, barrier


def _earliest(first_a, barrier_a, first_b, barrier_b):
    # ties keep ``a``
    a_ok = first_a >= 0
    b_ok = first_b >= 0
    take_b = b_ok & (~a_ok | (first_b < first_a))
    return np.where(take_b, first_b, first_a), np.where(take_b, barrier_b, barrier_a)


# ---------------------------------------------------------------- single MG


def _single_core(x0, capacity, sigma, dt, dw, u, record):
    n, k_steps = dw.shape
    x = np.empty((n, k_steps + 1))
    x[:, 0] = 0.0
    np.cumsum(dw, axis=1, out=x[:, 1:])
    x *= sigma
    x += x0
    first, barrier = _first_exit(x, capacity)
    if u is not None:
        first, barrier = _earliest(first, barrier, *_bridge_exit(x, capacity, sigma**2 * dt, u))
    out = {"first_idx": first, "barrier": barrier}
    if record:
        out["x1"] = x
    return out


def simulate_single(params: SystemParams, n: float, cfg: SimConfig) -> EnsembleResult:
    """Ensemble of ``X(t) = alpha*n*b_max + sigma*W(t)`` checked against ``0`` and ``n*b_max``."""
    if not n > 0:
        raise ValueError("n must be positive")
    dt = cfg.dt(params.t_f)
    capacity = n * params.b_max
    x0 = params.alpha * capacity

    def run(idx):
        dw = normal_increments(cfg.master_seed, idx, cfg.k_steps, dt, STREAM_MG1)
        u = None
        if cfg.bridge_correction:
            u = uniform_draws(cfg.master_seed, idx, cfg.k_steps, STREAM_BRIDGE_MG1)
        return _single_core(x0, capacity, params.sigma, dt, dw, u, cfg.record_traces)

    merged = _run_chunks(run, cfg)
    traces = {"x1": merged["x1"]} if cfg.record_traces else None
    return _result_from_paths(merged["first_idx"], merged["barrier"], dt, traces=traces)


# ---------------------------------------------------------------- two MGs


def _two_core(x0, n_b, sigma, dt, policy, dw1, dw2, u1=None, u2=None, record=False):
    n, k_steps = dw1.shape
    p_line = policy.p_line
    x1 = np.full(n, float(x0))
    x2 = np.full(n, float(x0))
    first = np.full(n, -1)
    barrier = np.zeros(n, dtype=int)

    def check(a, b, k):
        _mark(first, barrier, a >= n_b, 0, k)
        _mark(first, barrier, a <= 0.0, 1, k)
        _mark(first, barrier, b >= n_b, 2, k)
        _mark(first, barrier, b <= 0.0, 3, k)

    check(x1, x2, 0)
    ext = {
        "sup_x1": x1.copy(), "inf_x1": x1.copy(),
        "sup_x2": x2.copy(), "inf_x2": x2.copy(),
        "sup_xc": x1 + x2, "inf_xc": x1 + x2,
        "sup_abs_xd": np.abs(x2 - x1),
    }
    if record:
        tr1 = np.empty((n, k_steps + 1))
        tr2 = np.empty((n, k_steps + 1))
        trp = np.empty((n, k_steps))
        tr1[:, 0] = x1
        tr2[:, 0] = x2
    var = sigma**2 * dt
    for k in range(k_steps):
        p = policy(x1, x2)
        if np.any(np.abs(p) > p_line * (1.0 + 1e-12)):
            raise RuntimeError(f"policy emitted |p12| > {p_line} kW at step {k}")
        n1 = x1 - p * dt + sigma * dw1[:, k]
        n2 = x2 + p * dt + sigma * dw2[:, k]
        if u1 is not None:
            for a, b, u, up, lo in ((x1, n1, u1, 0, 1), (x2, n2, u2, 2, 3)):
                p_cross, p_up = bridge_crossing_prob(a, b, 0.0, n_b, var)
                hit = u[:, k] < p_cross
                _mark(first, barrier, hit & (u[:, k] < p_up), up, k + 1)
                _mark(first, barrier, hit, lo, k + 1)
        check(n1, n2, k + 1)
        np.maximum(ext["sup_x1"], n1, out=ext["sup_x1"])
        np.minimum(ext["inf_x1"], n1, out=ext["inf_x1"])
        np.maximum(ext["sup_x2"], n2, out=ext["sup_x2"])
        np.minimum(ext["inf_x2"], n2, out=ext["inf_x2"])
        xc = n1 + n2
        np.maximum(ext["sup_xc"], xc, out=ext["sup_xc"])
        np.minimum(ext["inf_xc"], xc, out=ext["inf_xc"])
        np.maximum(ext["sup_abs_xd"], np.abs(n2 - n1), out=ext["sup_abs_xd"])
        if record:
            tr1[:, k + 1] = n1
            tr2[:, k + 1] = n2
            trp[:, k] = p
        x1, x2 = n1, n2
    out = {"first_idx": first, "barrier": barrier, **ext}
    if record:
        out.update(x1=tr1, x2=tr2, p12=trp)
    return out


def _mark(first, barrier, hit, tag, k):
    new = hit & (first < 0)
    first[new] = k
    barrier[new] = tag


def _check_policy(policy: TransferPolicy, n_b: float, dt: float) -> None:
    if policy.kind is PolicyKind.DISCONNECTED:
        return
    check_step_condition(n_b, policy.p_line, dt)
    if policy.kind is PolicyKind.DISCRETE_KKT and not math.isclose(policy.dt, dt, rel_tol=1e-9):
        raise ValueError(f"discrete-kkt policy built for dt={policy.dt}, simulation uses dt={dt}")


def _two_noise(seed: int, idx: np.ndarray, k_steps: int, dt: float, bridge: bool):
    dw1 = normal_increments(seed, idx, k_steps, dt, STREAM_MG1)
    dw2 = normal_increments(seed, idx, k_steps, dt, STREAM_MG2)
    if not bridge:
        return dw1, dw2, None, None
    u1 = uniform_draws(seed, idx, k_steps, STREAM_BRIDGE_MG1)
    u2 = uniform_draws(seed, idx, k_steps, STREAM_BRIDGE_MG2)
    return dw1, dw2, u1, u2


_EXTREME_KEYS = ("sup_x1", "inf_x1", "sup_x2", "inf_x2", "sup_xc", "inf_xc", "sup_abs_xd")


def simulate_two_mg(params: "TwoMgParams", n: float, policy: TransferPolicy, cfg: SimConfig) -> EnsembleResult:
    """Euler ensemble of the coupled pair, each holding ``n`` battery units.

    The transfer is evaluated at the current grid state and held over the
    step. A path violates when either microgrid leaves ``(0, n*b_max)``.
    Per-path grid extremes of both states, their sum and the absolute
    difference are returned in ``EnsembleResult.extremes``.
    """
    if not n > 0:
        raise ValueError("n must be positive")
    base = params.base
    dt = cfg.dt(base.t_f)
    n_b = n * base.b_max
    _check_policy(policy, n_b, dt)
    x0 = base.alpha * n_b

    def run(idx):
        noise = _two_noise(cfg.master_seed, idx, cfg.k_steps, dt, cfg.bridge_correction)
        return _two_core(x0, n_b, base.sigma, dt, policy, *noise, record=cfg.record_traces)

    merged = _run_chunks(run, cfg)
    traces = None
    if cfg.record_traces:
        traces = {key: merged[key] for key in ("x1", "x2", "p12")}
    extremes = {key: merged[key] for key in _EXTREME_KEYS}
    return _result_from_paths(merged["first_idx"], merged["barrier"], dt, traces=traces, extremes=extremes)


# ---------------------------------------------------------------- sweep


@dataclass
class SweepPoint:
    p_line: float
    capacity_kwh: float
    rate: float
    ci_lo: float
    ci_hi: float
    violations: int
    n_paths: int
    capacities: list[float] = field(default_factory=list)
    failed: bool = False


def replicate_seed(master_seed: int, replicate: int) -> int:
    if replicate == 0:
        return master_seed
    return int(np.random.SeedSequence([master_seed, replicate]).generate_state(1, np.uint64)[0])


def _min_capacity(evaluate, delta: float, j_lo: int, j_hi: int, resolution: float, z_margin: float):
    """Smallest grid capacity whose rate plus ``z_margin`` Wilson half-widths stays within ``delta``."""
    def ok(j):
        res = evaluate(j * resolution)
        return res.violation_rate + z_margin * res.half_width <= delta, res

    passed, res = ok(j_hi)
    if not passed:
        return None, res
    best = (j_hi, res)
    lo, hi = j_lo - 1, j_hi  # ok(lo) treated as False, ok(hi) True
    while hi - lo > 1:
        mid = (lo + hi) // 2
        passed, res = ok(mid)
        if passed:
            hi, best = mid, (mid, res)
        else:
            lo = mid
    return best[0] * resolution, best[1]


def capacity_sweep(
    params: "TwoMgParams",
    p_line_grid: Sequence[float],
    cfg: SimConfig,
    *,
    resolution: float = 0.25,
    z_margin: float = 2.0,
    n_replicates: int = 1,
) -> list[SweepPoint]:
    """Minimal per-MG capacity meeting the chance constraint for each line capacity.

    Each grid point runs the discrete KKT transfer law (no transfer at
    ``p_line = 0``) and bisects the capacity on a ``resolution`` kWh lattice,
    reusing the same noise for every candidate. The search ceiling is the
    disconnected-limit size; a point whose ceiling already fails is flagged
    ``failed``. Capacities are averaged over ``n_replicates`` seeds.
    """
    if len(p_line_grid) == 0:
        raise ValueError("p_line_grid must be nonempty")
    base = params.base
    dt = cfg.dt(base.t_f)
    half_delta = SystemParams(base.sigma, base.b_max, base.delta / 2.0, base.t_f)
    ceiling = closed_form_n0(half_delta) * base.b_max
    j_hi = int(math.ceil(ceiling / resolution - 1e-9))
    points = []
    for p_line in p_line_grid:
        policy = TransferPolicy.discrete_kkt(float(p_line), dt)
        j_lo = max(1, int(math.floor(p_line * dt / resolution)) + 1)
        caps, results, failed = [], [], False
        for r in range(n_replicates):
            seed = replicate_seed(cfg.master_seed, r)
            noise = _run_chunks(
                lambda idx, s=seed: dict(zip(("dw1", "dw2", "u1", "u2"), _noise_or_empty(s, idx, cfg, dt))),
                cfg,
            )
            dw1, dw2 = noise["dw1"], noise["dw2"]
            u1 = noise["u1"] if cfg.bridge_correction else None
            u2 = noise["u2"] if cfg.bridge_correction else None

            def evaluate(capacity):
                out = _two_core(
                    base.alpha * capacity, capacity, base.sigma, dt, policy, dw1, dw2, u1, u2
                )
                return _result_from_paths(out["first_idx"], out["barrier"], dt)

            cap, res = _min_capacity(evaluate, base.delta, j_lo, j_hi, resolution, z_margin)
            if cap is None:
                failed = True
                caps.append(math.nan)
            else:
                caps.append(cap)
            results.append(res)
        viol = sum(r.violations for r in results)
        total = sum(r.n_paths for r in results)
        lo, hi = wilson_interval(viol, total)
        points.append(
            SweepPoint(
                p_line=float(p_line),
                capacity_kwh=float(np.mean(caps)),
                rate=viol / total,
                ci_lo=lo,
                ci_hi=hi,
                violations=viol,
                n_paths=total,
                capacities=caps,
                failed=failed,
            )
        )
    return points


def _noise_or_empty(seed, idx, cfg, dt):
    dw1, dw2, u1, u2 = _two_noise(seed, idx, cfg.k_steps, dt, cfg.bridge_correction)
    if u1 is None:
        u1 = u2 = np.empty((len(idx), 0))
    return dw1, dw2, u1, u2


# ---------------------------------------------------------------- CSV output


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def summary_rows(experiment: str, result: EnsembleResult) -> list[str]:
    return [
        experiment,
        str(result.n_paths),
        str(result.violations),
        _fmt(result.violation_rate),
        _fmt(result.wilson_ci[0]),
        _fmt(result.wilson_ci[1]),
    ]


def _write_header(fh, header_lines):
    for line in header_lines or []:
        fh.write(f"# {line}\n")


def write_summary_csv(path, rows: list[tuple[str, EnsembleResult]], header_lines: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _write_header(fh, header_lines)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "n_paths", "violations", "rate", "ci_lo", "ci_hi"])
        for name, result in rows:
            w.writerow(summary_rows(name, result))


def write_traces_csv(path, result: EnsembleResult, header_lines: list[str] | None = None) -> None:
    """Columns ``path, t_hours, x1_kwh, x2_kwh, p12_kw``; blank cells where a series does not apply."""
    if result.traces is None:
        raise ValueError("result carries no traces; simulate with record_traces=True")
    x1 = result.traces["x1"]
    x2 = result.traces.get("x2")
    p12 = result.traces.get("p12")
    n, cols = x1.shape
    with open(path, "w", newline="") as fh:
        _write_header(fh, header_lines)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t_hours", "x1_kwh", "x2_kwh", "p12_kw"])
        for i in range(n):
            for k in range(cols):
                w.writerow([
                    i,
                    _fmt(k * result.dt),
                    _fmt(x1[i, k]),
                    "" if x2 is None else _fmt(x2[i, k]),
                    "" if p12 is None or k == cols - 1 else _fmt(p12[i, k]),
                ])
