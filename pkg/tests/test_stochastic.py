import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bessplan.single_mg import SystemParams
from bessplan.stochastic import (
    Seed,
    bridge_crossing_prob,
    first_passage_prob_lower,
    first_passage_prob_upper,
    generate_path,
    normal_increments,
    std_normal_cdf,
    uniform_draws,
)

BASE = SystemParams(sigma=1.0, b_max=1.0, delta=0.02, t_f=5.0)


def test_seed_rejects_out_of_range():
    with pytest.raises(ValueError, match="master_seed"):
        Seed(-1, 0)
    with pytest.raises(ValueError, match="path_index"):
        Seed(0, 2**64)
    Seed(2**64 - 1, 2**64 - 1, 3)


def test_path_is_pure_function_of_seed():
    a = generate_path(Seed(7, 11), 600, 1 / 120)
    b = generate_path(Seed(7, 11), 600, 1 / 120)
    assert a.values[0] == 0.0
    assert a.k_steps == 600
    assert np.array_equal(a.values, b.values)
    assert a.times[-1] == pytest.approx(5.0)


def test_batching_does_not_change_paths():
    whole = normal_increments(3, np.arange(10), 50, 0.1)
    parts = np.vstack([normal_increments(3, [i], 50, 0.1) for i in range(10)])
    assert np.array_equal(whole, parts)
    assert np.array_equal(np.cumsum(whole[4]), generate_path(Seed(3, 4), 50, 0.1).values[1:])


def test_streams_are_distinct():
    a = normal_increments(0, [0], 100, 1.0, stream=0)
    b = normal_increments(0, [0], 100, 1.0, stream=1)
    c = normal_increments(1, [0], 100, 1.0, stream=0)
    d = normal_increments(0, [1], 100, 1.0, stream=0)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_increment_moments():
    dw = normal_increments(5, np.arange(2000), 100, 0.25)
    assert abs(dw.mean()) < 4 * 0.5 / math.sqrt(dw.size)
    assert dw.var() == pytest.approx(0.25, rel=0.01)
    # independent streams are uncorrelated
    other = normal_increments(5, np.arange(2000), 100, 0.25, stream=1)
    assert abs(np.corrcoef(dw.ravel(), other.ravel())[0, 1]) < 0.01


def test_uniform_draws_range():
    u = uniform_draws(0, np.arange(10), 100, 2)
    assert u.min() >= 0 and u.max() < 1


def test_grid_validation():
    with pytest.raises(ValueError):
        normal_increments(0, [0], 0, 0.1)
    with pytest.raises(ValueError):
        normal_increments(0, [0], 10, -0.1)


@pytest.mark.parametrize(
    "z, expected",
    [
        (-1.0, 0.1586552539314570514147674543679620775221),
        (-5.0, 2.866515718791939116737523328746453538544e-7),
        (-10.0, 7.619853024160526065973343251599308363504e-24),
        (-20.0, 2.753624118606233695075622780857465332807e-89),
        (-37.0, 5.725571222524576822683192548273201656433e-300),
    ],
)
def test_normal_cdf_tail_accuracy(z, expected):
    assert std_normal_cdf(z) == pytest.approx(expected, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-30.0, max_value=8.0))
def test_normal_cdf_against_mpmath(z):
    mpmath.mp.dps = 30
    assert std_normal_cdf(z) == pytest.approx(float(mpmath.ncdf(z)), rel=1e-12, abs=1e-300)


def test_first_passage_values():
    # X starts at n/2 and each barrier sits n/2 away: 2 Phi(-n / (2 sqrt(5)))
    n = 13.57228084883022359576618028571251278752
    up = first_passage_prob_upper(BASE, n)
    lo = first_passage_prob_lower(BASE, n)
    assert up == lo
    assert up + lo == pytest.approx(0.004813038917645517586536277439858539185874, rel=1e-12)


def test_first_passage_validation():
    with pytest.raises(ValueError):
        first_passage_prob_upper(BASE, 0.0)


def test_first_passage_alpha_asymmetry():
    p = BASE.with_alpha(0.2)
    assert first_passage_prob_lower(p, 10.0) > first_passage_prob_upper(p, 10.0)


def test_bridge_probability_formula():
    p, up = bridge_crossing_prob(1.0, 2.0, 0.0, 3.0, 0.5)
    assert float(p) == pytest.approx(6.708127206303044185282644763826619114297e-4, rel=1e-12)
    assert float(up) == pytest.approx(3.354626279025118388213891257808610193109e-4, rel=1e-12)


def test_bridge_probability_outside_is_zero():
    p, up = bridge_crossing_prob(np.array([-0.1, 1.0, 3.0]), np.array([1.0, 3.5, 1.0]), 0.0, 3.0, 0.5)
    assert np.all(p == 0) and np.all(up == 0)


def test_bridge_probability_matches_fine_simulation():
    # a coarse step of variance 1 from 0.5 to 0.5 inside (0, 10): lower barrier only matters
    rng = np.random.default_rng(1)
    m, n_sub = 20000, 2000
    dw = rng.standard_normal((m, n_sub)) * math.sqrt(1.0 / n_sub)
    w = np.cumsum(dw, axis=1)
    t = np.arange(1, n_sub + 1) / n_sub
    bridge = 0.5 + w - t[None, :] * w[:, -1:]
    hit = (bridge.min(axis=1) <= 0).mean()
    p, _ = bridge_crossing_prob(0.5, 0.5, 0.0, 10.0, 1.0)
    # the discrete bridge misses some crossings, so the estimate sits slightly low
    assert float(p) == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert hit < float(p) and hit > float(p) - 0.03
