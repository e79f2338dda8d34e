import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaoslab.hermite import (
    MAX_ORDER,
    hermite_coeffs,
    hermite_eval,
    hermite_gen_eval,
    hermite_poly,
    hermite_table,
    normal_density,
    normal_density_derivative,
)


@pytest.mark.parametrize("x", [-2.0, 0.0, 3.0])
def test_h2_is_x_squared_minus_one(x):
    assert hermite_eval(2, x) == pytest.approx(x * x - 1, abs=1e-15)


def test_h3_at_two():
    assert float(hermite_eval(3, 2.0)) == 2.0


def test_h10_constant_term():
    # brute-force expansion of the recursion with integer polynomials
    polys = [[1], [0, 1]]
    for j in range(1, 10):
        nxt = [0] + polys[j]
        prev = polys[j - 1] + [0] * (len(nxt) - len(polys[j - 1]))
        polys.append([a - j * b for a, b in zip(nxt, prev)])
    assert polys[10][0] == -945
    assert hermite_coeffs(10).coeffs[-1] == -945
    assert float(hermite_eval(10, 0.0)) == -945.0


def test_coeffs_monic_and_match_numpy():
    for k in range(MAX_ORDER + 1):
        c = hermite_coeffs(k)
        assert c.coeffs[0] == 1
        ref = np.polynomial.hermite_e.herme2poly([0] * k + [1])
        mine = np.zeros(k + 1)
        for i, v in enumerate(c.coeffs):
            mine[k - 2 * i] = v
        np.testing.assert_array_equal(mine, ref)


@pytest.mark.parametrize("k", range(9))
@pytest.mark.parametrize("x", [-1.0, 0.0, 2.0])
def test_generalized_reduces_at_lambda_one(k, x):
    assert hermite_gen_eval(k, 1.0, x) == pytest.approx(float(hermite_eval(k, x)), rel=1e-14, abs=1e-14)


def test_generalized_examples():
    assert float(hermite_gen_eval(2, 0.25, 1.0)) == pytest.approx(0.75)
    assert float(hermite_gen_eval(3, 2.0, 1.0)) == pytest.approx(-5.0)


def test_generalized_scaling_and_zero_limit():
    x = np.linspace(-3, 3, 13)
    for k in range(9):
        for lam in (0.5, 2.0):
            ref = lam ** (k / 2) * hermite_eval(k, x / math.sqrt(lam))
            np.testing.assert_allclose(hermite_gen_eval(k, lam, x), ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(hermite_gen_eval(k, 0.0, x), x**k, rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(hermite_gen_eval(k, 1e-9, x), x**k, rtol=1e-6, atol=1e-6)


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        hermite_gen_eval(2, -1.0, 0.5)


def test_order_cap():
    with pytest.raises(ValueError):
        hermite_eval(MAX_ORDER + 1, 0.0)
    with pytest.raises(ValueError):
        hermite_eval(-1, 0.0)


def test_unrestricted_poly_accepts_negative_lambda():
    # H_2(lam, x) = x^2 - lam holds for any real lam
    assert hermite_poly(2, -0.5, 1.0) == pytest.approx(1.5)


@settings(max_examples=200, deadline=None)
@given(
    k=st.integers(0, 12),
    lam=st.floats(0.0, 4.0),
    x=st.floats(-4.0, 4.0),
)
def test_coefficient_form_matches_recursion(k, lam, x):
    rec = float(hermite_gen_eval(k, lam, x))
    coef = float(hermite_coeffs(k)(x, lam))
    scale = sum(abs(c) * abs(x) ** (k - 2 * i) * lam**i for i, c in enumerate(hermite_coeffs(k).coeffs))
    assert abs(rec - coef) <= 1e-12 * max(scale, 1.0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_recurrence_and_derivative_identity(lam):
    x = np.linspace(-3, 3, 25)
    h = 1e-5
    for k in range(1, 9):
        nxt = hermite_gen_eval(k + 1, lam, x)
        rec = x * hermite_gen_eval(k, lam, x) - k * lam * hermite_gen_eval(k - 1, lam, x)
        np.testing.assert_allclose(nxt, rec, rtol=1e-12, atol=1e-12 * np.max(np.abs(nxt)))
        fd = (hermite_gen_eval(k, lam, x + h) - hermite_gen_eval(k, lam, x - h)) / (2 * h)
        np.testing.assert_allclose(fd, k * hermite_gen_eval(k - 1, lam, x), rtol=1e-6, atol=1e-6)


def test_orthogonality_gauss_hermite():
    nodes, weights = np.polynomial.hermite_e.hermegauss(40)
    weights = weights / math.sqrt(2 * math.pi)
    for j in range(9):
        for k in range(9):
            val = np.sum(weights * hermite_eval(j, nodes) * hermite_eval(k, nodes))
            ref = math.factorial(k) if j == k else 0.0
            assert abs(val - ref) <= 1e-9 * max(1.0, ref)


def test_normal_density_values():
    assert float(normal_density_derivative(0, 1.0, 0.0)) == pytest.approx(0.3989422804014327, rel=1e-12)
    s, x = 2.0, 1.0
    assert float(normal_density_derivative(1, s, x)) == pytest.approx(-(x / s**2) * float(normal_density(x, s)))
    with pytest.raises(ValueError):
        normal_density_derivative(1, 0.0, 1.0)


def test_normal_density_derivatives_by_finite_differences():
    x = np.linspace(-4, 4, 17)
    h = 1e-4
    for sigma in (0.7, 1.0, 2.0):
        for k in range(1, 5):
            fd = (normal_density_derivative(k - 1, sigma, x + h) - normal_density_derivative(k - 1, sigma, x - h)) / (2 * h)
            np.testing.assert_allclose(normal_density_derivative(k, sigma, x), fd, rtol=1e-6, atol=1e-8)


def test_normal_density_derivative_monte_carlo(rng):
    # phi^(k)(x) = (-1)^k E[1{N > x} H_{k+1}(N)]
    N = rng.standard_normal(2_000_000)
    for k in range(5):
        for x in (-1.0, 0.3, 1.5):
            vals = np.where(N > x, hermite_eval(k + 1, N), 0.0) * (-1) ** k
            se = vals.std(ddof=1) / math.sqrt(N.size)
            assert abs(vals.mean() - float(normal_density_derivative(k, 1.0, x))) <= 3 * se


def test_table_rows():
    rows = hermite_table(2, 0.5, [0.0, 1.0])
    assert len(rows) == 6
    assert rows[-1] == (2, 0.5, 1.0, 0.5)
