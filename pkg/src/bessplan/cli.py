"""Command-line front end: ``bess-plan {size-single,size-two,simulate,sweep,verify}``.

Exit status is 0 on success, 1 for invalid input (the message names the
field) and 2 when a check or calibration fails.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .checks import CheckResult, run_battery
from .config import ConfigError, ExperimentConfig, load_config
from .montecarlo import SimConfig, capacity_sweep, simulate_single, simulate_two_mg, write_summary_csv, write_traces_csv
from .policy import PolicyKind, TransferPolicy
from .single_mg import ROUNDING_MODES, SizingOutcome, solve_single_mg
from .two_mg import BetaCalibrationError, calibrate_beta, limiting_sizes, solve_two_mg

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2
QUICK_PATHS = 1_000
CALIBRATION_PATHS = 10_000


class CheckFailure(RuntimeError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.4f}".rstrip("0").rstrip(".")


def _write_csv(path: Path, header: list[str], columns: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _header(cfg: ExperimentConfig, command: str, extra: list[str] | None = None) -> list[str]:
    return [f"bess-plan {command}"] + cfg.echo() + (extra or [])


def _sizing_row(out: SizingOutcome, b_max: float) -> list:
    return [out.n_continuous, out.n_continuous * b_max, out.n_units, float(out.total_capacity),
            float(out.initial_energy), out.alpha, out.rounding_mode]


SIZING_COLUMNS = ["n_continuous", "capacity_continuous_kwh", "n_units", "capacity_kwh", "initial_kwh", "alpha", "rounding"]


# ---------------------------------------------------------------- commands


def cmd_size_single(cfg: ExperimentConfig, args) -> int:
    params = cfg.system_params()
    out = solve_single_mg(params, args.rounding)
    b = params.b_max
    print(
        f"N0 = {out.n_continuous * b:.4f} kWh ({out.n_continuous:.4f} units), "
        f"deploy {_fmt(out.total_capacity)} kWh ({out.rounding_mode}), "
        f"initial {_fmt(out.initial_energy)} kWh, alpha = {out.alpha}"
    )
    _write_csv(args.out / "sizing_single.csv", _header(cfg, "size-single"), SIZING_COLUMNS, [_sizing_row(out, b)])
    return EXIT_OK


def _resolve_beta(cfg: ExperimentConfig, args) -> tuple[float, str]:
    if cfg.beta is not None:
        return cfg.beta, "supplied"
    paths = max(CALIBRATION_PATHS, QUICK_PATHS if args.quick else cfg.n_paths)
    sim = SimConfig(paths, cfg.k_steps, cfg.seed)
    cal = calibrate_beta(cfg.two_mg_params(0.0), sim)
    print(
        f"beta calibrated on {cal.n_paths} paths: {cal.beta:g} kWh "
        f"(P[sup|X2-X1| >= beta] = {cal.rate:.4g}, 99% CI [{cal.wilson_ci[0]:.4g}, {cal.wilson_ci[1]:.4g}], "
        f"target < {cal.target:g})"
    )
    return cal.beta, "calibrated"


def cmd_size_two(cfg: ExperimentConfig, args) -> int:
    beta, source = _resolve_beta(cfg, args)
    params = cfg.two_mg_params(beta)
    out = solve_two_mg(params, args.rounding)
    lim = limiting_sizes(params)
    b = params.base.b_max
    print(f"beta = {beta:g} kWh ({source})")
    print(
        f"per-MG capacity = {out.n_continuous * b:.4f} kWh, deploy {_fmt(out.total_capacity)} kWh "
        f"({out.rounding_mode}), initial {_fmt(out.initial_energy)} kWh, alpha = {out.alpha}"
    )
    print(
        f"limits: disconnected {lim.n_disconnected * b:.4f} kWh, unlimited line {lim.n_infinite * b:.4f} kWh, "
        f"ratio {lim.ratio:.4f}"
    )
    _write_csv(
        args.out / "sizing_two.csv",
        _header(cfg, "size-two"),
        ["beta_kwh", "beta_source"] + SIZING_COLUMNS + ["n_disconnected", "n_infinite", "ratio"],
        [[float(beta), source] + _sizing_row(out, b) + [lim.n_disconnected, lim.n_infinite, lim.ratio]],
    )
    return EXIT_OK


def _policy(cfg: ExperimentConfig) -> TransferPolicy:
    kind = PolicyKind(cfg.policy)
    if kind is PolicyKind.DISCONNECTED or cfg.p_line == 0:
        return TransferPolicy.disconnected()
    if kind is PolicyKind.BANG_BANG:
        return TransferPolicy.bang_bang(cfg.p_line)
    return TransferPolicy.discrete_kkt(cfg.p_line, cfg.t_f / cfg.k_steps)


def _capacity(cfg: ExperimentConfig) -> float:
    """Per-MG capacity in kWh; sized from the closed forms when the config leaves it open."""
    if cfg.capacity_kwh is not None:
        return cfg.capacity_kwh
    if cfg.scenario == "single":
        return solve_single_mg(cfg.system_params()).n_continuous * cfg.b_max
    return solve_two_mg(cfg.two_mg_params()).n_continuous * cfg.b_max


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    sim = SimConfig(cfg.n_paths, cfg.k_steps, cfg.seed, args.record_traces, cfg.bridge_correction)
    capacity = _capacity(cfg)
    n = capacity / cfg.b_max
    if cfg.scenario == "single":
        name = "single"
        res = simulate_single(cfg.system_params(), n, sim)
    else:
        policy = _policy(cfg)
        name = f"two-mg:{policy.kind.value}"
        res = simulate_two_mg(cfg.two_mg_params(), n, policy, sim)
    lo, hi = res.wilson_ci
    print(
        f"{name}: capacity {capacity:.4f} kWh, {res.violations}/{res.n_paths} paths violate, "
        f"rate {res.violation_rate:.4g}, 99% CI [{lo:.4g}, {hi:.4g}]"
    )
    header = _header(cfg, "simulate", [f"capacity_used_kwh = {capacity!r}"])
    write_summary_csv(args.out / "summary.csv", [(name, res)], header)
    if args.record_traces:
        write_traces_csv(args.out / "traces.csv", res, header)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    sim = SimConfig(cfg.n_paths, cfg.k_steps, cfg.seed, False, cfg.bridge_correction)
    points = capacity_sweep(cfg.two_mg_params(), list(cfg.p_line_grid), sim)
    rows = []
    for p in points:
        flag = "  FAILED at disconnected size" if p.failed else ""
        print(f"p_line {p.p_line:g} kW: {p.capacity_kwh:.2f} kWh, rate {p.rate:.4g}{flag}")
        rows.append([p.p_line, p.capacity_kwh, p.rate, p.ci_lo, p.ci_hi, p.violations, p.n_paths, int(p.failed)])
    _write_csv(
        args.out / "sweep.csv",
        _header(cfg, "sweep"),
        ["p_line_kw", "capacity_kwh", "rate_at_capacity", "ci_lo", "ci_hi", "violations", "n_paths", "failed"],
        rows,
    )
    return EXIT_OK


def _print_table(results: list[CheckResult]) -> None:
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  observed {r.observed:.4g}  required {r.required}  ({r.detail})")


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    beta, _ = _resolve_beta(cfg, args)
    params = cfg.two_mg_params(beta)
    capacity = _capacity(cfg)
    if args.quick:
        print("quick mode: 21x21 DP grid, 1000 KKT states, 1000 inclusion paths")
    results = run_battery(params, capacity, quick=args.quick, fault=args.fault, seed=cfg.seed, k_steps=cfg.k_steps)
    _print_table(results)
    _write_csv(
        args.out / "verify.csv",
        _header(cfg, "verify", [f"fault = {args.fault or ''}", f"quick = {str(args.quick).lower()}"]),
        ["check", "passed", "observed", "required", "detail"],
        [[r.name, int(r.passed), float(r.observed), r.required, r.detail] for r in results],
    )
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure("failed checks: " + ", ".join(failed))
    print("all checks passed")
    return EXIT_OK


COMMANDS = {
    "size-single": cmd_size_single,
    "size-two": cmd_size_two,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file; built-in defaults otherwise")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--paths", type=int, help="Monte Carlo paths")
    common.add_argument("--dt-seconds", type=float, help="simulation step in seconds")
    common.add_argument("--rounding", choices=ROUNDING_MODES, default="ceil")
    common.add_argument("--beta", type=float, help="slack in kWh; skips calibration")
    common.add_argument("--record-traces", action="store_true")
    common.add_argument("--quick", action="store_true", help="reduced path counts and grids")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--scenario", choices=("single", "two-mg"))
    common.add_argument("--fault", choices=("flip-policy-sign",), help="inject a known fault (verify)")

    parser = argparse.ArgumentParser(prog="bess-plan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    paths = args.paths
    if args.quick and paths is None and args.command in ("simulate", "sweep"):
        paths = min(cfg.n_paths, QUICK_PATHS)
    return cfg.override(
        seed=args.seed,
        n_paths=paths,
        dt_seconds=args.dt_seconds,
        beta=args.beta,
        scenario=args.scenario,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: invalid {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CheckFailure, BetaCalibrationError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
