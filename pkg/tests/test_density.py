import math

import numpy as np
from scipy.integrate import trapezoid
import pytest

from chaoslab.chaos2 import Spectrum, collect, sample, weights_at
from chaoslab.density import (
    DensityEstimate,
    RejectionError,
    compare_to_kde,
    default_grid,
    derivative_densities,
    derivative_density,
    finite_difference_check,
    first_chaos_sample,
    fmla3_weights,
    fourth_moment_report,
    g_beta,
    general_bound_report,
    h_beta,
    kde_density,
    malliavin_density,
    malliavin_density_general,
    multivariate_density,
    normal_target,
    parse_grid,
    uniform_distance,
)
from chaoslab.engine import ChaosExpansion, chaos_decompose, linear, second_chaos
from chaoslab.hermite import normal_density, normal_density_derivative


def _naive(F, weights, grid):
    return np.array([np.mean(np.where(F > x, weights, 0.0)) for x in grid])


def test_bucketing_matches_naive(rng):
    s = Spectrum([1.0, 0.5, 0.3])
    ws = weights_at(s, rng.standard_normal((5000, 3)))
    grid = np.concatenate([np.linspace(-3, 5, 40), [ws.F[0]]])
    grid.sort()
    est = malliavin_density(ws, grid)
    np.testing.assert_allclose(est.values, _naive(ws.F, ws.delta_u, grid), rtol=1e-10, atol=1e-14)


def test_grid_parsing():
    np.testing.assert_allclose(parse_grid("-1:1:3"), [-1, 0, 1])
    with pytest.raises(ValueError):
        parse_grid("1:0:3")
    with pytest.raises(ValueError):
        parse_grid("1:2")
    g = default_grid(2.0)
    assert g.size == 241 and g[0] == -12.0 and g[-1] == 12.0


def test_empty_indicator_is_zero():
    ws = collect(first_chaos_sample(1.0, 10_000, seed=1))
    est = malliavin_density(ws, np.array([0.0, ws.F.max() + 0.1, 50.0]))
    assert est.values[1] == 0.0 and est.values[2] == 0.0
    assert est.se[2] == 0.0


def test_too_few_samples():
    ws = collect(first_chaos_sample(1.0, 50, seed=1))
    with pytest.raises(ValueError):
        malliavin_density(ws, default_grid())


def test_first_chaos_density():
    sigma = 1.5
    grid = default_grid(sigma)
    est = malliavin_density(first_chaos_sample(sigma, 1_000_000, seed=4), grid)
    phi = normal_density(grid, sigma)
    inside = est.se > 0
    assert np.mean(est.within(phi)[inside]) >= 0.95
    d = uniform_distance(est, normal_target(sigma))
    assert d["sup_gap"] <= 4 * est.se.max()
    assert 0.98 <= est.integral() <= 1.02


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_first_chaos_derivatives(k):
    grid = np.linspace(-3, 3, 25)
    est = derivative_density(first_chaos_sample(1.0, 1_000_000, seed=10 + k, max_gk_order=k + 1), k, grid)
    assert est.tag == f"derivative-{k}"
    assert np.mean(est.within(normal_density_derivative(k, 1.0, grid))) >= 0.9


def test_k0_equals_fmla1():
    ws = collect(sample(Spectrum(1 / np.arange(1, 6)), 20_000, seed=3, max_gk_order=2))
    grid = np.linspace(-3, 5, 33)
    a = malliavin_density(ws, grid)
    b = derivative_densities(ws, [0, 1], grid)
    np.testing.assert_array_equal(a.values, b[0].values)
    with pytest.raises(ValueError, match="G_4"):
        derivative_density(ws, 3, grid)


def test_second_chaos_against_kde():
    s = Spectrum(1 / np.arange(1, 51))
    ws = collect(sample(s, 400_000, seed=8))
    grid = np.linspace(-4, 6, 81)
    est = malliavin_density(ws, grid)
    kde = kde_density(ws.F, grid)
    assert kde.extras["bias_allowance"] > 0
    assert compare_to_kde(est, kde)["all_within"]


def test_finite_difference_consistency():
    s = Spectrum(1 / np.arange(1, 51))
    ws = collect(sample(s, 300_000, seed=12, max_gk_order=3))
    grid = np.linspace(-3, 5, 81)
    for k in (1, 2):
        r = finite_difference_check(ws, k, grid)
        assert r["fraction_within"] >= 0.95


def test_derivative_integrates_to_differences():
    s = Spectrum(1 / np.arange(1, 21))
    ws = collect(sample(s, 300_000, seed=6, max_gk_order=2))
    grid = np.linspace(-3, 5, 161)
    f0, f1 = derivative_densities(ws, [0, 1], grid)
    integral = trapezoid(f1.values, grid)
    diff = f0.values[-1] - f0.values[0]
    tol = 3 * (math.hypot(f0.se[0], f0.se[-1]) + trapezoid(f1.se, grid)) + 1e-3
    assert abs(integral - diff) <= tol


def test_boundedness_diagnostic():
    grid = np.linspace(-8, 10, 181)
    for lam in ([1.0, 0.5, 0.5, 0.25], list(1 / np.arange(1, 21))):
        s = Spectrum(lam)
        sigma = math.sqrt(2 * s.power_sum(2))
        est = malliavin_density(collect(sample(s, 200_000, seed=2)), grid)
        tail = np.abs(grid) >= 3 * sigma
        assert np.max(np.abs(est.values[tail]) * grid[tail] ** 2) < 2.0


def test_fmla3_pure_chaos_matches_fmla1(rng):
    lam = np.array([1.0, 0.5, 0.25, 0.125])
    x = rng.standard_normal((2000, 4))
    F = chaos_decompose(second_chaos(lam))
    Fv, wbar, delta, ok = fmla3_weights(F, x)
    ws = weights_at(Spectrum(lam), x)
    assert ok.all()
    np.testing.assert_allclose(Fv, ws.F, atol=1e-12)
    np.testing.assert_allclose(wbar, ws.w / 2, rtol=1e-12)
    np.testing.assert_allclose(delta, ws.delta_u, rtol=1e-10, atol=1e-10)


def test_fmla3_first_chaos_normal():
    F = chaos_decompose(linear([0.6, 0.8]))
    grid = np.linspace(-3, 3, 13)
    est = malliavin_density_general(F, grid, 200_000, seed=1)
    assert np.all(est.within(normal_density(grid, 1.0)))


def test_fmla3_mixed_chaos():
    F = ChaosExpansion(2, {(2, 0): 1.0, (0, 1): 1.0})
    grid = np.linspace(-5, 9, 141)
    est = malliavin_density_general(F, grid, 300_000, seed=2)
    assert est.rejected == 0
    assert abs(est.integral() - 1) <= 0.02
    Fv = F(np.random.default_rng(0).standard_normal((300_000, 2)))
    kde = kde_density(Fv, grid)
    assert compare_to_kde(est, kde)["fraction_within"] >= 0.95


def test_fmla3_rejection():
    # F = X_1 X_2 has wbar = (x1^2 + x2^2)/2, tiny near the origin
    F = ChaosExpansion(2, {(1, 1): 1.0})
    with pytest.raises(RejectionError):
        malliavin_density_general(F, np.linspace(-1, 1, 5), 20_000, seed=1, guard=1e-2)
    with pytest.raises(ValueError, match="centered"):
        malliavin_density_general(ChaosExpansion(1, {(0,): 1.0, (1,): 1.0}), [0.0], 10, seed=1)


@pytest.mark.parametrize("beta", [(), (1,), (2,), (1, 1), (1, 2), (2, 2, 1)])
def test_h_beta_standard_pair(beta, rng):
    Fs = [ChaosExpansion(2, {(1, 0): 1.0}), ChaosExpansion(2, {(0, 1): 1.0})]
    x = rng.standard_normal((200, 2))
    full = (1, 2) + beta
    H, Fv, ok = h_beta(Fs, full, x)
    assert ok.all()
    np.testing.assert_allclose(H, g_beta(full, 2, x), rtol=1e-10, atol=1e-10)


def test_h_beta_index_check():
    Fs = [ChaosExpansion(1, {(1,): 1.0})]
    with pytest.raises(ValueError):
        h_beta(Fs, (2,), [[0.0]])


def test_multivariate_standard_pair():
    Fs = [ChaosExpansion(2, {(1, 0): 1.0}), ChaosExpansion(2, {(0, 1): 1.0})]
    pts = np.array([[a, b] for a in (-1.0, 0.0, 1.0) for b in (-1.0, 0.0, 1.0)])
    est = multivariate_density(Fs, (), pts, 300_000, seed=3)
    target = normal_density(pts[:, 0]) * normal_density(pts[:, 1])
    assert np.all(est.within(target))


def test_multivariate_first_derivative():
    Fs = [ChaosExpansion(2, {(1, 0): 1.0}), ChaosExpansion(2, {(0, 1): 1.0})]
    pts = np.array([[-1.0, 0.0], [0.5, 0.5], [1.0, -0.5]])
    est = multivariate_density(Fs, (1,), pts, 300_000, seed=4)
    target = normal_density_derivative(1, 1.0, pts[:, 0]) * normal_density(pts[:, 1])
    assert np.all(est.within(target))


def test_multivariate_product_grid_matches_points():
    Fs = [ChaosExpansion(2, {(1, 0): 1.0}), ChaosExpansion(2, {(0, 1): 1.0})]
    axes = (np.array([-1.0, 0.0, 1.0]), np.array([-0.5, 0.5]))
    a = multivariate_density(Fs, (), axes, 20_000, seed=5)
    pts = a.grid.reshape(-1, 2)
    b = multivariate_density(Fs, (), pts, 20_000, seed=5)
    np.testing.assert_allclose(a.values.ravel(), b.values, rtol=1e-12)


def _chaos_pair(n):
    # (I_1, I_2) on a shared basis: X_1 and an equal-eigenvalue second chaos over all n coordinates.
    # The Malliavin determinant is 4 lam^2 sum_{i>=2} x_i^2 ~ chi-square(n - 1); the weight grows
    # like det^(-3/2) near zero, so its variance needs n - 1 >= 7 and the tail settles further out.
    lam = 1 / math.sqrt(2 * n)
    F1 = ChaosExpansion(n, {(1,) + (0,) * (n - 1): 1.0})
    F2 = ChaosExpansion(n, {tuple(2 if j == i else 0 for j in range(n)): lam for i in range(n)})
    return [F1, F2], lam


def test_multivariate_chaos_pair_pointwise():
    from scipy import stats

    n = 8
    Fs, lam = _chaos_pair(n)
    pts = np.array([[a, b] for a in (-1.0, 1.0) for b in (-0.5, 0.8)])
    est = multivariate_density(Fs, (), pts, 40_000, seed=1)
    # X_1 is standard normal and F_2 - lam (X_1^2 - 1) is a shifted, scaled chi-square(n - 1)
    cond = stats.chi2(n - 1, scale=lam).pdf(pts[:, 1] - lam * (pts[:, 0] ** 2 - 1) + (n - 1) * lam)
    assert np.all(est.within(normal_density(pts[:, 0]) * cond))


@pytest.mark.slow
def test_multivariate_chaos_pair_normalization():
    n = 10
    Fs, lam = _chaos_pair(n)
    # F_2 >= -n lam; both axes cover all but ~1e-5 of the mass
    axes = (np.linspace(-5, 5, 41), np.linspace(-n * lam, 6, 49))
    est = multivariate_density(Fs, (), axes, 1_000_000, seed=6)
    assert est.rejected == 0
    mass = trapezoid(trapezoid(est.values, axes[1], axis=1), axes[0])
    assert abs(mass - 1) <= 0.03


def test_uniform_distance():
    grid = default_grid()
    phi = normal_density(grid)
    exact = DensityEstimate(grid, phi, np.zeros_like(grid), 1, "exact")
    assert uniform_distance(exact, phi)["sup_gap"] == 0.0
    shifted = DensityEstimate(grid, normal_density(grid - 0.01), np.zeros_like(grid), 1, "shift")
    d = uniform_distance(shifted, normal_target(1.0))
    # max |phi'| = phi(1)
    assert d["sup_gap"] == pytest.approx(0.01 * normal_density(1.0), rel=0.02)
    assert abs(abs(d["argmax"]) - 1.0) <= 0.06
    assert d["L1"] > 0 and d["L2"] > 0


def test_kde_recovers_normal(rng):
    v = rng.standard_normal(200_000)
    grid = np.linspace(-3, 3, 31)
    kde = kde_density(v, grid)
    assert np.max(np.abs(kde.values - normal_density(grid))) <= 0.01


def test_fourth_moment_report_family():
    ns = [10, 20, 40, 80]
    rep = fourth_moment_report([Spectrum(np.full(n, 1 / math.sqrt(n))) for n in ns])
    np.testing.assert_allclose(rep.quantities["fourth_cumulant"], [48 / n for n in ns])
    np.testing.assert_allclose(rep.quantities["var_dfnorm"], [32 / n for n in ns])
    np.testing.assert_allclose(rep.quantities["contraction_norm"], [1 / math.sqrt(n) for n in ns])
    assert rep.passed


def test_fourth_moment_report_constant_and_matrix():
    rep = fourth_moment_report([Spectrum([1.0, 1.0])] * 3)
    assert not any(rep.verdicts.values())
    assert rep.notes
    lam = np.array([1.0, 0.5])
    m = fourth_moment_report([np.diag(lam), Spectrum(lam)])
    assert m.quantities["fourth_cumulant"][0] == pytest.approx(m.quantities["fourth_cumulant"][1])
    with pytest.raises(ValueError):
        fourth_moment_report([np.ones(3)])


def test_general_bound_second_chaos():
    lam = [1.0, -0.7, 0.3]
    F = chaos_decompose(second_chaos(lam))
    r = general_bound_report(F, 4.0, 8.0, 5000, seed=1)
    assert r.components["hessian_op_min"] == pytest.approx(2.0)
    assert r.components["hessian_op_max"] == pytest.approx(2.0)
    assert r.components["rci_chain_fraction"] == 1.0
    assert r.value == pytest.approx(r.components["F_1s_norm"] ** 2 * r.components["hessian_op_s_norm"])
    with pytest.raises(ValueError, match="2/r"):
        general_bound_report(F, 3.0, 8.0, 100, seed=1)


def test_general_bound_mixed_chaos_chain():
    F = ChaosExpansion(3, {(2, 0, 0): 1.0, (1, 1, 0): 0.5, (0, 0, 3): 0.2, (1, 0, 0): 1.0})
    r = general_bound_report(F, 3.0, 12.0, 1000, seed=2)
    assert r.components["rci_chain_fraction"] == 1.0
    assert r.components["hessian_op_min"] < r.components["hessian_op_max"]
