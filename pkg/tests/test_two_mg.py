import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import ndtr

from bessplan.montecarlo import SimConfig
from bessplan.policy import TransferPolicy
from bessplan.single_mg import SystemParams, closed_form_n0, n_of_alpha
from bessplan.two_mg import (
    BetaCalibrationError,
    TwoMgParams,
    calibrate_beta,
    limiting_sizes,
    proposition1_empirical_check,
    solve_two_mg,
    sum_diff,
    sup_abs_difference,
)

BASE = SystemParams(sigma=1.0, b_max=1.0, delta=0.02, t_f=5.0)
DT = 5.0 / 600


def test_params_validation():
    with pytest.raises(ValueError, match="p_line"):
        TwoMgParams(BASE, -1.0)
    with pytest.raises(ValueError, match="beta"):
        TwoMgParams(BASE, 1.0, -0.1)
    p = TwoMgParams(BASE, 15.0)
    assert p.delta_prime == 0.01
    assert p.sigma_c == pytest.approx(math.sqrt(2))


def test_sum_diff():
    d = sum_diff([1.0, 2.0], [3.0, 1.0], -2.0)
    assert np.array_equal(d.x_c, [4.0, 3.0])
    assert np.array_equal(d.x_d, [2.0, -1.0])
    assert d.sigma_c == pytest.approx(2 * math.sqrt(2))


def test_solve_two_mg_values():
    # sqrt(80 ln 200) / 2 with mpmath
    out = solve_two_mg(TwoMgParams(BASE, 15.0))
    assert out.n_continuous == pytest.approx(10.29399569316797089309, rel=1e-14)
    assert out.alpha == 0.5
    assert out.n_units == 11 and out.initial_energy == 5.5
    assert solve_two_mg(TwoMgParams(BASE, 15.0), "floor").total_capacity == 10
    plus = solve_two_mg(TwoMgParams(BASE, 15.0, beta=1.0))
    assert plus.n_continuous - out.n_continuous == pytest.approx(1.0, abs=1e-12)
    wide = solve_two_mg(TwoMgParams(SystemParams(1.0, 2.0, 0.02, 5.0), 15.0, beta=1.0))
    assert wide.n_continuous == pytest.approx(out.n_continuous / 2 + 0.5, rel=1e-14)


def test_solve_two_mg_is_single_sizing_of_the_sum():
    # the sum process sized by the one-microgrid machinery, split in half
    summed = SystemParams(math.sqrt(2), 2.0, 0.01, 5.0)
    assert solve_two_mg(TwoMgParams(BASE, 15.0)).n_continuous == pytest.approx(n_of_alpha(summed), rel=1e-9)
    for a in (0.2, 0.4, 0.6):
        assert n_of_alpha(summed.with_alpha(a)) > n_of_alpha(summed)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.01, 4.0), st.floats(1e-4, 0.5), st.floats(1e-3, 0.3))
def test_size_monotone_in_beta_and_delta(beta, dbeta, delta, ddelta):
    base = SystemParams(1.0, 1.0, delta, 5.0)
    loose = SystemParams(1.0, 1.0, min(delta + ddelta, 0.99), 5.0)
    n = solve_two_mg(TwoMgParams(base, 1.0, beta)).n_continuous
    assert solve_two_mg(TwoMgParams(base, 1.0, beta + dbeta)).n_continuous > n
    assert solve_two_mg(TwoMgParams(loose, 1.0, beta)).n_continuous < n


def test_limiting_sizes_values():
    lim = limiting_sizes(TwoMgParams(BASE, 15.0))
    assert lim.n_disconnected == pytest.approx(14.55790832028837400654, rel=1e-14)
    assert lim.n_infinite == pytest.approx(9.597051824376162415135, rel=1e-14)
    assert lim.ratio == pytest.approx(1.516914630315094955315, rel=1e-14)
    n0, ninf, ratio = lim
    assert ninf < solve_two_mg(TwoMgParams(BASE, 15.0)).n_continuous < n0
    # the disconnected limit is the single-MG size at delta/2
    assert n0 == pytest.approx(closed_form_n0(SystemParams(1.0, 1.0, 0.01, 5.0)), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(1e-9, 0.99), st.floats(0.01, 100))
def test_ratio_formula_and_invariance(sigma, b_max, delta, t_f):
    lim = limiting_sizes(SystemParams(sigma, b_max, delta, t_f))
    assert lim.ratio == pytest.approx(math.sqrt(2 * math.log(4 / delta) / math.log(2 / delta)), rel=1e-12)
    assert lim.ratio == pytest.approx(limiting_sizes(SystemParams(1, 1, delta, 1)).ratio, rel=1e-12)


def test_calibrate_beta_requires_paths():
    with pytest.raises(ValueError, match="10\\^4"):
        calibrate_beta(TwoMgParams(BASE, 15.0), SimConfig(5000, 600))


@pytest.fixture(scope="module")
def beta_15():
    return calibrate_beta(TwoMgParams(BASE, 15.0), SimConfig(10_000, 600))


def test_calibrate_beta_meets_target(beta_15):
    cal = beta_15
    assert cal.beta == pytest.approx(round(cal.beta, 1))
    half = 0.5 * (cal.wilson_ci[1] - cal.wilson_ci[0])
    assert cal.rate + 3 * half < 0.01
    # one grid step lower must fail the same test
    m = sup_abs_difference(TwoMgParams(BASE, 15.0), TransferPolicy.bang_bang(15.0), SimConfig(10_000, 600))
    lower = np.mean(m >= cal.beta - 0.1)
    assert lower > cal.rate


def test_calibrate_beta_stable_under_more_paths(beta_15):
    bigger = calibrate_beta(TwoMgParams(BASE, 15.0), SimConfig(20_000, 600))
    assert abs(bigger.beta - beta_15.beta) <= 0.1 + 1e-12


def test_calibrate_beta_pinned_difference():
    # with p_line far above the step limit the discrete law re-equalises every
    # step, so each grid value of X2 - X1 is an independent N(0, 2 dt) draw
    params = TwoMgParams(BASE, 1000.0)
    cal = calibrate_beta(params, SimConfig(10_000, 600), policy=TransferPolicy.discrete_kkt(1000.0, DT))
    s = math.sqrt(2 * DT)
    oracle = brentq(lambda b: 1 - (2 * ndtr(b / s) - 1) ** 600 - 0.01, 0.01, 3.0)
    assert oracle == pytest.approx(0.5556845063854477, rel=1e-9)
    # the lattice value sits at or above the oracle, within the margin's reach
    assert oracle - 0.1 <= cal.beta <= oracle + 0.2


def test_calibrate_beta_zero_line_reports_measured_value():
    cal = calibrate_beta(TwoMgParams(BASE, 0.0), SimConfig(10_000, 600))
    # a free Brownian difference with variance 2 sigma^2 t: 4 Phi(-b / sqrt(10)) = 0.01 gives b = 8.88
    assert 8.0 <= cal.beta <= 11.0
    with pytest.raises(BetaCalibrationError, match="too small"):
        calibrate_beta(TwoMgParams(BASE, 0.0), SimConfig(10_000, 600), beta_max=4.0)


def test_inclusion_holds_on_every_path():
    rep = proposition1_empirical_check(TwoMgParams(BASE, 15.0, beta=0.8), 10.0, SimConfig(5000, 600))
    assert rep.counterexamples == 0
    assert rep.matches_simulation
    assert rep.ok
    assert 0.001 <= rep.lhs_rate <= 0.015


def test_inclusion_with_small_capacity_and_zero_beta():
    # many violations and beta = 0 (A_d' holds on every path) still give no counterexample
    rep = proposition1_empirical_check(TwoMgParams(BASE, 15.0, beta=0.0), 3.0, SimConfig(2000, 600, 7))
    assert rep.lhs_count > 100
    assert rep.a_d_prime == rep.n_paths
    assert rep.counterexamples == 0


def test_inclusion_with_beta_at_twice_capacity():
    n = 6.0
    rep = proposition1_empirical_check(TwoMgParams(BASE, 15.0, beta=2 * n), n, SimConfig(2000, 600, 8))
    # |X2 - X1| >= 2 N_B needs a state outside the box, so A_d' only occurs on violating paths
    assert rep.counterexamples == 0
    assert rep.a_d_prime <= rep.lhs_count
    assert rep.a_c_tilde == rep.n_paths  # inf X_c <= 2 N_B always
