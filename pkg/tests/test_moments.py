import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from lpadapt.moments import (
    MomentTable,
    even_floor,
    fhat_even,
    fhat_p,
    fhat_split_product,
    gaussian_abs_moment,
    infimum_statistic,
    level_statistic,
    level_statistics_array,
    real_binomial,
)
from lpadapt.sequence_model import BesovBall, CoeffField, ball_distance


def normal_expectation(fn, mean=0.0, sd=1.0):
    val, _ = integrate.quad(lambda z: fn(mean + sd * z) * math.exp(-z * z / 2) / math.sqrt(2 * math.pi),
                            -15, 15, epsabs=1e-12, epsrel=1e-10, limit=400, points=[-mean / sd])
    return val


# --- Gaussian moments ---------------------------------------------------------

def test_moment_special_values():
    assert gaussian_abs_moment(0) == 1.0
    assert gaussian_abs_moment(2) == 1.0
    assert gaussian_abs_moment(4) == 3.0
    assert gaussian_abs_moment(6) == 15.0


def test_first_absolute_moment_against_quadrature():
    q = normal_expectation(abs)
    assert_allclose(q, 0.7978845608, atol=1e-10)
    assert_allclose(gaussian_abs_moment(1), q, rtol=1e-10)


@pytest.mark.parametrize("u", [0.5, 1.7, 2.5, 3.0, 5.3])
def test_moment_closed_form_vs_quadrature(u):
    assert_allclose(gaussian_abs_moment(u), normal_expectation(lambda x: abs(x) ** u), rtol=1e-10)


def test_negative_moment_rejected():
    with pytest.raises(ValueError):
        gaussian_abs_moment(-1)


def test_moment_table_built_and_checked():
    tab = MomentTable.build(3.7)
    assert tab.moments[0] == 1.0 and tab.moments[2] == 1.0
    assert all(v > 0 for v in tab.moments.values())
    assert_allclose(tab.binomials[2], 3.7 * 2.7 / 2)


def test_real_binomial_matches_integer_binomial():
    for p in range(8):
        for u in range(p + 1):
            assert real_binomial(p, u) == math.comb(p, u)
    assert_allclose(real_binomial(2.5, 3), 2.5 * 1.5 * 0.5 / 6)


@pytest.mark.parametrize("p,expected", [(2, 2), (3, 2), (2.5, 2), (4, 4), (5, 4), (5.9, 4), (6, 6), (7.5, 6)])
def test_even_floor_convention(p, expected):
    assert even_floor(p) == expected


# --- F-hat estimators -----------------------------------------------------------

def test_fhat_even_examples():
    assert_allclose(fhat_even(2, 0.5, 100), 0.24, rtol=1e-14)
    assert fhat_even(2, 0.0, 1) == -1.0
    assert_allclose(fhat_even(4, 1.0, 1), -2.0, rtol=1e-12)
    assert fhat_even(0, 3.0, 7) == 1.0


def hand_unrolled_f4(a, n):
    f2 = a * a - 1 / n
    return a**4 - 3 / n**2 - 6 * f2 / n


def hand_unrolled_f6(a, n):
    f2 = a * a - 1 / n
    f4 = hand_unrolled_f4(a, n)
    return a**6 - 15 / n**3 - 15 * 3 * f2 / n**2 - 15 * f4 / n


@settings(max_examples=80, deadline=None)
@given(a=st.floats(-5, 5), n=st.floats(0.5, 1e4))
def test_fhat_even_matches_hand_recursion(a, n):
    assert_allclose(fhat_even(4, a, n), hand_unrolled_f4(a, n), rtol=1e-9, atol=1e-9 * (1 + a**4))
    assert_allclose(fhat_even(6, a, n), hand_unrolled_f6(a, n), rtol=1e-9, atol=1e-9 * (1 + a**6))


@pytest.mark.parametrize("u", [2, 4, 6, 8])
@pytest.mark.parametrize("a,n", [(0.0, 1.0), (0.3, 4.0), (1.2, 100.0)])
def test_fhat_even_exactly_unbiased_by_quadrature(u, a, n):
    val = normal_expectation(lambda x: fhat_even(u, x, n), mean=a, sd=1 / math.sqrt(n))
    assert_allclose(val, a**u, atol=1e-8 * max(1.0, n ** (-u / 2)))


def test_fhat_even_rejects_odd():
    with pytest.raises(ValueError):
        fhat_even(3, 1.0, 1.0)


def test_fhat_p_examples():
    assert_allclose(fhat_p(3, 0.0, 1), -1.5957691216, atol=1e-10)
    assert abs(fhat_p(2.5, 1.0, 1e6) - 1) < 1e-3


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), n=st.floats(0.1, 1e5))
def test_fhat_p_even_consistency(a, n):
    assert fhat_p(2, a, n) == fhat_even(2, a, n)
    assert fhat_p(4.0, a, n) == fhat_even(4, a, n)


def test_fhat_p_noneven_correction_structure():
    # p = 5: floor is 4, so corrections at u = 0 and u = 2
    a, n, p = 0.7, 3.0, 5.0
    m = gaussian_abs_moment
    expected = abs(a) ** p - m(5) / n**2.5 - real_binomial(p, 2) * m(3) / n**1.5 * fhat_even(2, a, n)
    assert_allclose(fhat_p(p, a, n), expected, rtol=1e-12)


def test_fhat_p_array_input():
    x = np.array([0.0, 0.5, -1.0])
    assert_allclose(fhat_p(3, x, 10), [fhat_p(3, v, 10) for v in x])


@pytest.mark.parametrize("p", [2.5, 3.0, 5.0])
def test_fhat_p_mean_below_plugin(p):
    # the correction only removes noise mass, so the mean sits below E|a_hat|^p
    a, n = 0.4, 9.0
    mean = normal_expectation(lambda x: fhat_p(p, x, n), mean=a, sd=1 / 3)
    plug = normal_expectation(lambda x: abs(x) ** p, mean=a, sd=1 / 3)
    assert mean < plug


def test_fhat_p_bad_p():
    with pytest.raises(ValueError):
        fhat_p(1.5, 0.0, 1.0)


# --- split sample -------------------------------------------------------------------

def test_split_product_examples():
    assert fhat_split_product(2, (0.5, 0.5)) == 0.25
    assert fhat_split_product(3, (1, -1, 2)) == -2.0
    with pytest.raises(ValueError):
        fhat_split_product(3, (1, 2))


def test_split_product_unbiased_even_p():
    rng = np.random.default_rng(11)
    a, n, R = 0.6, 4.0, 200_000
    draws = a + rng.standard_normal((R, 4)) / math.sqrt(n)
    vals = fhat_split_product(4, draws)
    se = vals.std(ddof=1) / math.sqrt(R)
    assert abs(vals.mean() - a**4) < 3 * se


# --- level statistics --------------------------------------------------------------

def test_level_statistic_example():
    obs = CoeffField.from_levels([[0.0], [0.1, 0.2]])
    st_ = level_statistic(obs, 1, 2.0, 100)
    assert_allclose(st_.value, 0.03, atol=1e-15)
    assert_allclose(st_.contributions.sum(), st_.value)


@pytest.mark.parametrize("p", [2, 4, 6])
def test_level_statistic_all_zero(p):
    l, n = 3, 50.0
    obs = CoeffField.zeros(4)
    expected = 2 ** (l * p * (0.5 - 1 / p)) * 2**l * fhat_even(p, 0.0, n)
    val = level_statistic(obs, l, p, n).value
    assert_allclose(val, expected, rtol=1e-12)
    if p == 2:
        assert val < 0


def test_level_statistic_batch_matches_single():
    rng = np.random.default_rng(12)
    arr = rng.normal(size=(5, 31))
    batch = level_statistics_array(arr, [1, 2, 4], 3.0, 20.0)
    for i in range(5):
        c = CoeffField(arr[i])
        assert_allclose(batch[i], [level_statistic(c, l, 3.0, 20.0).value for l in (1, 2, 4)], rtol=1e-12)


def test_level_statistic_unbiased_p4():
    rng = np.random.default_rng(13)
    l, n, p, R = 2, 30.0, 4, 40_000
    truth = np.array([0.3, -0.5, 0.0, 0.8])
    draws = truth + rng.standard_normal((R, 4)) / math.sqrt(n)
    vals = 2 ** (l * p * (0.5 - 1 / p)) * fhat_even(4, draws, n).sum(axis=1)
    target = 2**l * np.sum(truth**4)
    assert abs(vals.mean() - target) < 3 * vals.std(ddof=1) / math.sqrt(R)


def test_infimum_statistic():
    ball = BesovBall(2.0, 3.0, 1.0)
    inside = CoeffField.from_levels([[0.1], [0.05, -0.05], [0.01] * 4])
    assert infimum_statistic(inside, ball, 2) == 0.0
    data = np.zeros(7)
    data[1:3] = 3.0
    c = CoeffField(data)
    R1 = ball.level_radii(1)[1]
    expected = 2 ** (0.5 - 1 / 3) * (2 ** (1 / 3) * 3.0 - R1)
    assert_allclose(infimum_statistic(c, ball, 2), expected, rtol=1e-12)
    assert infimum_statistic(c, ball, 2, "0p2") == ball_distance(c, ball, 2, 2.0)


def test_level_variance_bound_shape():
    # Var T_n(l) under the null grows like 2^l n^{-p} times the level weight squared
    rng = np.random.default_rng(14)
    p, n, R = 3.0, 100.0, 20_000
    sds = []
    for l in (2, 4, 6):
        draws = rng.standard_normal((R, 2**l)) / math.sqrt(n)
        sds.append((2 ** (l * p * (0.5 - 1 / p)) * fhat_p(p, draws, n).sum(axis=1)).std())
    ratios = np.log2(np.array(sds[1:]) / np.array(sds[:-1])) / 2
    # per extra level: weight doubles by 2^{p/2 - 1} and the sum of 2^l terms adds 2^{1/2}
    assert_allclose(ratios, p / 2 - 1 + 0.5, atol=0.05)
