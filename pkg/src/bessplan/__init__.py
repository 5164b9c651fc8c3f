"""Chance-constrained battery sizing and power transfer for one or two microgrids."""

from .montecarlo import EnsembleResult, SimConfig, capacity_sweep, simulate_single, simulate_two_mg, wilson_interval
from .policy import JointState, PolicyKind, TransferPolicy, bang_bang_transfer, kkt_transfer
from .single_mg import (
    SizingOutcome,
    SystemParams,
    chernoff_bound_f,
    closed_form_n0,
    exact_violation_prob,
    n_of_alpha,
    solve_single_mg,
)
from .two_mg import TwoMgParams, calibrate_beta, limiting_sizes, proposition1_empirical_check, solve_two_mg

__version__ = "0.1.0"

__all__ = [
    "EnsembleResult",
    "SimConfig",
    "capacity_sweep",
    "simulate_single",
    "simulate_two_mg",
    "wilson_interval",
    "JointState",
    "PolicyKind",
    "TransferPolicy",
    "bang_bang_transfer",
    "kkt_transfer",
    "SizingOutcome",
    "SystemParams",
    "chernoff_bound_f",
    "closed_form_n0",
    "exact_violation_prob",
    "n_of_alpha",
    "solve_single_mg",
    "TwoMgParams",
    "calibrate_beta",
    "limiting_sizes",
    "proposition1_empirical_check",
    "solve_two_mg",
]
