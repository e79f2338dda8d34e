import math

import numpy as np
import pytest
from scipy import integrate

from chaoslab.ou import (
    OUConfig,
    exact_f_t_moment,
    kernel_matrix,
    kernel_spectrum_nystrom,
    kernel_spectrum_sl,
    least_squares_estimate,
    limit_variance,
    rate_experiment,
    secular,
    simulate_ou,
    spectral_fourth_cumulant,
    truncated_spectrum,
)


def test_config_validation():
    with pytest.raises(ValueError, match="dt"):
        OUConfig(1.0, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError, match="theta"):
        OUConfig(-1.0, 1.0, 10.0, 0.01)
    assert OUConfig(1.0, 1.0, 10.0, 0.01).steps == 1000


def test_stationary_variance():
    theta, gamma = 4.0, 1.5
    cfg = OUConfig(theta, gamma, 200 / theta, 0.001, seed=2)
    paths = simulate_ou(cfg, paths=8)
    burn = int(5 / theta / cfg.dt)
    v = paths[:, burn:].var()
    assert abs(v / (gamma**2 / (2 * theta)) - 1) <= 0.05


def test_paths_deterministic_and_start_at_zero():
    cfg = OUConfig(1.0, 1.0, 10.0, 0.01, seed=5)
    a, b = simulate_ou(cfg, 3), simulate_ou(cfg, 3)
    np.testing.assert_array_equal(a, b)
    assert np.all(a[:, 0] == 0)
    # adding paths leaves earlier ones unchanged
    np.testing.assert_array_equal(simulate_ou(cfg, 5)[:3], a)


def test_transition_moments():
    theta, gamma, dt = 1.0, 1.0, 0.01
    cfg = OUConfig(theta, gamma, 10.0, dt, seed=3)
    X = simulate_ou(cfg, 20)
    a = math.exp(-theta * dt)
    resid = X[:, 1:] - a * X[:, :-1]
    assert abs(resid.var() / (gamma**2 * (1 - a * a) / (2 * theta)) - 1) < 0.02


def test_lse_errors():
    with pytest.raises(ValueError, match="degenerate"):
        least_squares_estimate(np.zeros(500), 0.01)
    with pytest.raises(ValueError, match="100 steps"):
        least_squares_estimate(np.ones(50), 0.01)


def test_lse_sign_and_consistency():
    cfg = OUConfig(1.0, 1.0, 500.0, 0.005, seed=0)
    est = least_squares_estimate(simulate_ou(cfg, 100), cfg.dt)
    se = est.std(ddof=1) / math.sqrt(est.size)
    assert abs(est.mean() - 1.0) <= 3 * se


@pytest.mark.slow
def test_lse_variance():
    cfg = OUConfig(1.0, 1.0, 200.0, 0.002, seed=1)
    est = least_squares_estimate(simulate_ou(cfg, 400), cfg.dt)
    v = np.var(math.sqrt(cfg.T) * (est - 1.0), ddof=1)
    assert abs(v / 2.0 - 1) <= 0.2


def test_secular_roots_match_tangent_form():
    theta, T = 1.0, 10.0
    res = kernel_spectrum_sl(theta, 1.0, T, 30)
    mu = res.mu
    assert np.max(res.residual) <= 1e-10
    mask = np.abs(np.cos(mu * T)) > 1e-6
    np.testing.assert_allclose(np.tan(mu[mask] * T), 2 * mu[mask] * theta / (mu[mask] ** 2 - theta**2), rtol=1e-7)
    assert np.all(np.diff(res.eigenvalues) <= 0)


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("T", [5.0, 20.0, 80.0])
def test_brackets(theta, T):
    res = kernel_spectrum_sl(theta, 1.0, T, 200)
    regular = np.ones(res.count, bool)
    regular[res.extra] = False
    assert np.all(res.inside_brackets()[regular])
    assert np.max(res.residual) <= 1e-10


def test_eigenfunctions_satisfy_integral_equation():
    # phi(t) = mu cos(mu t) + theta sin(mu t) solves Q phi = lambda phi
    theta, gamma, T = 1.0, 1.0, 10.0
    res = kernel_spectrum_sl(theta, gamma, T, 5)
    for mu, lam in zip(res.mu, res.eigenvalues):
        phi = lambda s: mu * math.cos(mu * s) + theta * math.sin(mu * s)
        for t in (0.0, 3.3, 10.0):
            k = lambda s: gamma**2 / (2 * math.sqrt(T)) * math.exp(-theta * abs(t - s)) * phi(s)
            q = integrate.quad(k, 0, t, limit=200)[0] + integrate.quad(k, t, T, limit=200)[0]
            assert q == pytest.approx(lam * phi(t), abs=1e-9)


@pytest.mark.parametrize("theta,gamma,T", [(1.0, 1.0, 10.0), (0.5, 2.0, 5.0), (2.0, 1.0, 80.0), (0.1, 1.0, 5.0)])
def test_spectral_sum_matches_exact_moment(theta, gamma, T):
    for m in (20, 200):
        res = kernel_spectrum_sl(theta, gamma, T, m)
        gap = exact_f_t_moment(theta, gamma, T) - 2 * np.sum(res.eigenvalues**2)
        assert -1e-12 <= gap <= 2 * res.tail_bound


def test_decay_exponent():
    T = 5.0
    res = kernel_spectrum_sl(1.0, 1.0, T, int(100 * T) + 5)
    i = np.arange(1, res.count + 1)
    sel = (i >= 10 * T) & (i <= 100 * T)
    slope = np.polyfit(np.log(i[sel]), np.log(res.eigenvalues[sel]), 1)[0]
    assert abs(slope + 2) <= 0.05


def test_exact_moment():
    assert exact_f_t_moment(1.0, 1.0, 10.0) == pytest.approx(0.5 - (1 - math.exp(-20)) / 40, rel=1e-14)
    # independent oracle: E[F_T^2] = 2 int int f_T^2
    T = 10.0
    f2 = lambda s, t: (1 / (2 * math.sqrt(T)) * math.exp(-abs(t - s))) ** 2
    q = 2 * (integrate.dblquad(f2, 0, T, 0, lambda t: t)[0] * 2)
    assert exact_f_t_moment(1.0, 1.0, T) == pytest.approx(q, rel=1e-8)
    assert exact_f_t_moment(1.0, 1.0, 1e9) == pytest.approx(limit_variance(1.0, 1.0), rel=1e-8)
    assert exact_f_t_moment(0.7, 2.0, 3.0) == pytest.approx(16 * exact_f_t_moment(0.7, 1.0, 3.0), rel=1e-14)


def test_nystrom_trace_and_residual():
    theta, gamma, T = 1.0, 1.0, 10.0
    spec, vals, vecs, A = kernel_spectrum_nystrom(theta, gamma, T, 400, return_vectors=True)
    assert np.sum(vals) == pytest.approx(gamma**2 * math.sqrt(T) / 2, rel=1e-6)
    r = A @ vecs - vecs * vals
    assert np.max(np.linalg.norm(r, axis=0)) <= 1e-8
    np.testing.assert_allclose(A, A.T, rtol=0, atol=0)


def test_nystrom_vs_sl_400_nodes():
    sl = kernel_spectrum_sl(1.0, 1.0, 10.0, 10).eigenvalues
    ny = kernel_spectrum_nystrom(1.0, 1.0, 10.0, 400).eigenvalues[:10]
    assert np.max(np.abs(ny - sl) / sl) <= 1e-4


def test_nystrom_converges_and_row_correction():
    sl = kernel_spectrum_sl(1.0, 1.0, 10.0, 10).eigenvalues
    gaps = [np.max(np.abs(kernel_spectrum_nystrom(1.0, 1.0, 10.0, n).eigenvalues[:10] - sl) / sl) for n in (200, 400, 800)]
    # second-order convergence from the kink on the diagonal
    assert gaps[1] < gaps[0] / 3 and gaps[2] < gaps[1] / 3
    corr = kernel_spectrum_nystrom(1.0, 1.0, 10.0, 400, correction="row").eigenvalues[:10]
    assert np.max(np.abs(corr - sl) / sl) <= 1e-5
    with pytest.raises(ValueError):
        kernel_matrix(1.0, 1.0, 10.0, 8)


def test_truncated_spectrum():
    res, k = truncated_spectrum(1.0, 1.0, 10.0)
    assert 2 * np.sum(res.eigenvalues**2) >= (1 - 1e-6) * exact_f_t_moment(1.0, 1.0, 10.0)
    assert k == res.count


def test_fourth_cumulant_decays():
    Ts = [5.0, 10.0, 20.0, 40.0, 80.0]
    vals = [spectral_fourth_cumulant(truncated_spectrum(1.0, 1.0, T)[0].eigenvalues) for T in Ts]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_secular_sign_change_at_bracket_ends():
    theta, T = 1.0, 10.0
    for i in range(5, 20):
        lo, hi = (i * math.pi - math.pi / 2) / T, (i * math.pi + math.pi / 2) / T
        assert np.sign(secular(lo, theta, T)) != np.sign(secular(hi, theta, T))


def test_rate_experiment_small():
    r = rate_experiment(1.0, 1.0, [5, 10, 20, 40], 100_000, seed=3)
    assert len(r.sup_distance) == 4 and r.slope < 0
    assert r.cumulant_slope < 0
    with pytest.raises(ValueError):
        rate_experiment(1.0, 1.0, [5, 10, 20], 1000, seed=1)
