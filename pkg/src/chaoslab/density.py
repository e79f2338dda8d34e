"""Monte Carlo density estimators built on Malliavin integration by parts.

All estimators have the form ``E[1{F > x} W]`` for a per-sample weight ``W``
(``delta_u``, ``G_{k+1}``, ``delta(ubar)`` or a multivariate ``H`` weight).
Samples are bucketed against the sorted grid once, so a pass over ``n``
samples costs ``O(n log |grid|)`` whatever the grid size; per-bucket sums of
weights and weight products give means, standard errors and the covariances
needed for finite-difference consistency checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import chaos2
from .chaos2 import Spectrum, WeightedSample
from .engine import ChaosExpansion, Jet, SingularEvaluationError, apply_L_inverse, contract, jet_algebra
from .engine.malliavin import jet_divergence, jet_gradient
from .hermite import hermite_poly, normal_density, normal_density_derivative
from .reports import BoundReport, ConditionReport
from .rng import map_chunks, substream

REJECTION_LIMIT = 1e-3
WBAR_GUARD = 1e-12
DET_GUARD = 1e-12
JET_BUDGET = 1_000_000  # coefficient slots per chunk; intermediates multiply this


class RejectionError(ArithmeticError):
    """Too many samples hit a degeneracy guard."""


@dataclass
class DensityEstimate:
    grid: np.ndarray
    values: np.ndarray
    se: np.ndarray
    n: int
    tag: str
    rejected: int = 0
    extras: dict = field(default_factory=dict)

    def integral(self) -> float:
        if self.grid.ndim != 1:
            raise ValueError("integral() is for one-dimensional estimates")
        return float(trapezoid(self.values, self.grid))

    def within(self, target, nse: float = 3.0) -> np.ndarray:
        """Mask of grid points where ``|values - target| <= nse * se``."""
        return np.abs(self.values - target) <= nse * self.se


def default_grid(sigma: float = 1.0, points: int = 241) -> np.ndarray:
    return np.linspace(-6 * sigma, 6 * sigma, points)


def parse_grid(spec: str) -> np.ndarray:
    """``a:b:k`` -> ``k`` uniform points on ``[a, b]``."""
    try:
        a, b, k = spec.split(":")
        grid = np.linspace(float(a), float(b), int(k))
    except ValueError as exc:
        raise ValueError(f"grid must look like a:b:k, got '{spec}'") from exc
    if grid.size < 2 or not np.all(np.diff(grid) > 0):
        raise ValueError(f"grid '{spec}' must be increasing with at least two points")
    return grid


class _Buckets:
    """Per-bucket sums of weights and weight products.

    Bucket ``b`` collects samples with ``grid[b-1] < F <= grid[b]`` so that
    ``1{F > grid[j]}`` selects buckets ``b > j``.
    """

    def __init__(self, grid, nweights: int):
        self.grid = np.asarray(grid, dtype=float)
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be one-dimensional and strictly increasing")
        m = self.grid.size + 1
        self.k = nweights
        self.sums = np.zeros((nweights, m))
        self.prods = np.zeros((nweights, nweights, m))
        self.n = 0

    def add(self, F, weights):
        idx = np.searchsorted(self.grid, F, side="left")
        m = self.grid.size + 1
        for a in range(self.k):
            self.sums[a] += np.bincount(idx, weights=weights[a], minlength=m)
            for b in range(a, self.k):
                p = np.bincount(idx, weights=weights[a] * weights[b], minlength=m)
                self.prods[a, b] += p
                if b != a:
                    self.prods[b, a] += p
        self.n += len(F)

    def upper(self, arr):
        """``out[j] = sum_{b > j} arr[b]`` for each grid index ``j``."""
        rev = np.cumsum(arr[..., ::-1], axis=-1)[..., ::-1]
        return rev[..., 1:]

    def estimate(self, a: int, sign: float = 1.0):
        n = self.n
        mean = sign * self.upper(self.sums[a]) / n
        m2 = self.upper(self.prods[a, a]) / n
        var = np.maximum(m2 - mean * mean, 0.0)
        return mean, np.sqrt(var / max(n - 1, 1))


def _as_stream(samples):
    if isinstance(samples, WeightedSample):
        return [samples]
    return samples


def derivative_densities(samples, ks, grid) -> list[DensityEstimate]:
    """Estimates of ``f^(k)`` for every ``k`` in ``ks`` from a single pass.

    The ``k``-th estimate averages ``(-1)^k 1{F > x} G_{k+1}``; ``k = 0`` is the
    ``delta_u`` estimator.
    """
    ks = list(ks)
    acc = None
    for batch in _as_stream(samples):
        need = max(ks) + 1
        if len(batch.G) <= need:
            raise ValueError(f"samples carry G up to order {len(batch.G) - 1}, need G_{need}")
        if acc is None:
            acc = _Buckets(grid, len(ks))
        acc.add(batch.F, [batch.G[k + 1] for k in ks])
    if acc is None:
        raise ValueError("empty sample stream")
    out = []
    for a, k in enumerate(ks):
        mean, se = acc.estimate(a, (-1.0) ** k)
        tag = "malliavin-Fmla1" if k == 0 else f"derivative-{k}"
        out.append(DensityEstimate(acc.grid, mean, se, acc.n, tag))
    out[0].extras["_buckets"] = acc
    return out


def malliavin_density(samples, grid) -> DensityEstimate:
    """``f(x) = E[1{F > x} delta_u]`` on a sorted grid."""
    acc = None
    for batch in _as_stream(samples):
        if acc is None:
            acc = _Buckets(grid, 1)
        acc.add(batch.F, [batch.delta_u])
    if acc is None:
        raise ValueError("empty sample stream")
    if acc.n < 100:
        raise ValueError(f"need at least 100 samples, got {acc.n}")
    mean, se = acc.estimate(0)
    return DensityEstimate(acc.grid, mean, se, acc.n, "malliavin-Fmla1")


def derivative_density(samples, k: int, grid) -> DensityEstimate:
    """``f^(k)(x) = (-1)^k E[1{F > x} G_{k+1}]``."""
    est = derivative_densities(samples, [k], grid)[0]
    est.extras.pop("_buckets", None)
    return est


def finite_difference_check(samples, k: int, grid, nse: float = 3.0) -> dict:
    """Compare ``f^(k)`` with the central difference of ``f^(k-1)`` on ``grid``.

    Both estimators come from the same samples; the standard error of their
    difference is computed from bucketed cross moments, so the tolerance
    reflects their correlation.  The truncation error of the central
    difference is bounded by ``h^2/6 * max|f^(k+2)|`` estimated from the data.
    """
    if k < 1:
        raise ValueError("finite-difference check needs k >= 1")
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    if not np.allclose(h, h[0], rtol=1e-9):
        raise ValueError("finite-difference check needs a uniform grid")
    h = float(h[0])
    acc = None
    for batch in _as_stream(samples):
        if acc is None:
            acc = _Buckets(grid, 2)
        acc.add(batch.F, [batch.G[k], batch.G[k + 1]])
    n = acc.n
    sk = (-1.0) ** k
    # per-sample: a = sk 1{F>x_j} G_{k+1};  b = sk 1{x_{j-1} < F <= x_{j+1}} G_k / (2h)
    up = acc.upper
    j = np.arange(1, grid.size - 1)
    Sa = up(acc.sums[1])[j]
    Qaa = up(acc.prods[1, 1])[j]
    win = lambda arr: arr[j] + arr[j + 1]
    Sb = win(acc.sums[0]) / (2 * h)
    Qbb = win(acc.prods[0, 0]) / (4 * h * h)
    Qab = acc.prods[0, 1][j + 1] / (2 * h)  # overlap: x_j < F <= x_{j+1}
    mean_a, mean_b = sk * Sa / n, sk * Sb / n
    diff = mean_a - mean_b
    var = (Qaa + Qbb - 2 * Qab) / n - diff**2
    se = np.sqrt(np.maximum(var, 0.0) / max(n - 1, 1))
    curv = np.abs(np.diff(mean_a, 2)) / h**2 if mean_a.size > 2 else np.zeros(1)
    trunc = h * h / 6.0 * float(np.max(curv)) if curv.size else 0.0
    ok = np.abs(diff) <= nse * se + trunc
    return {
        "grid": grid[j],
        "estimate": mean_a,
        "finite_difference": mean_b,
        "diff": diff,
        "se": se,
        "truncation": trunc,
        "fraction_within": float(np.mean(ok)),
        "max_z": float(np.max(np.abs(diff) / np.maximum(se, 1e-300))),
    }


# --- first chaos ---------------------------------------------------------------


def first_chaos_sample(sigma: float, n: int, seed: int, max_gk_order: int = 1, chunk_size: int = chaos2.DEFAULT_CHUNK, threads: int = 1):
    """Stream draws of ``F = I_1(h)`` with ``||h|| = sigma`` and exact weights.

    Here ``u = DF / sigma^2``, ``delta_u = F / sigma^2``, ``D_u delta_u = 1/sigma^2``
    and ``G_k = H_k(1/sigma^2, F/sigma^2)``.
    """
    lam = 1.0 / sigma**2

    def work(k, m):
        F = sigma * substream(seed, k, stream=1).standard_normal(m)
        x = F * lam
        G = [hermite_poly(j, lam, x) for j in range(max_gk_order + 1)]
        return WeightedSample(F=F, w=np.full(m, sigma**2), delta_u=x, du_delta_u=np.full(m, lam), G=G, chunk=k)

    yield from map_chunks(work, n, chunk_size, threads)


# --- general (mixed chaos) formula ------------------------------------------------


def _chunk_for(n_vars: int, order: int, requested: int) -> int:
    size = math.comb(n_vars + order, order)
    return max(1, min(requested, JET_BUDGET // size))


def fmla3_weights(F: ChaosExpansion, points, guard: float = WBAR_GUARD):
    """Per-sample ``(F, wbar, delta(ubar), ok)`` at explicit points.

    ``ubar = -DL^{-1}F / wbar`` with ``wbar = <DF, -DL^{-1}F>``.  Rows where
    ``|wbar| <= guard`` are flagged in ``ok`` and carry NaN weights.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    G = (apply_L_inverse(F) * -1.0).to_functional()
    Ff = F.to_functional()
    alg = jet_algebra(F.n, 2)
    Fj = Ff._jet(points, alg, 2, {})
    Gj = G._jet(points, alg, 2, {})
    dF, dG = jet_gradient(Fj), jet_gradient(Gj)
    wbar = dF[0] * dG[0]
    for a, b in zip(dF[1:], dG[1:]):
        wbar = wbar + a * b
    ok = np.abs(wbar.value) > guard
    delta = np.full(points.shape[0], np.nan)
    if np.any(ok):
        wb = Jet(alg, wbar.order, wbar.coeffs[ok])
        inv = wb.reciprocal()
        ub = [Jet(alg, g.order, g.coeffs[ok]) * inv for g in dG]
        x = [Jet.variable(alg, 1, i, points[ok, i]) for i in range(F.n)]
        delta[ok] = jet_divergence(ub, x).value
    return Fj.value, wbar.value, delta, ok


def malliavin_density_general(
    F: ChaosExpansion,
    grid,
    n: int,
    seed: int,
    chunk_size: int = chaos2.DEFAULT_CHUNK,
    threads: int = 1,
    guard: float = WBAR_GUARD,
    max_rejection: float = REJECTION_LIMIT,
) -> DensityEstimate:
    """``f(x) = E[1{F > x} delta(ubar)]`` for any centered polynomial ``F``.

    Degenerate samples are dropped and counted; the estimate still divides by
    the full ``n`` (a dropped sample contributes weight zero).

    Raises
    ------
    RejectionError
        If more than ``max_rejection`` of the samples were dropped.
    """
    if abs(F.mean) > 1e-12:
        raise ValueError("F must be centered")
    chunk = _chunk_for(F.n, 2, chunk_size)

    def work(k, m):
        x = substream(seed, k, stream=3).standard_normal((m, F.n))
        Fv, _, delta, ok = fmla3_weights(F, x, guard)
        return Fv, np.where(ok, delta, 0.0), int(np.sum(~ok))

    acc = _Buckets(grid, 1)
    rejected = 0
    for Fv, d, bad in map_chunks(work, n, chunk, threads):
        acc.add(Fv, [d])
        rejected += bad
    mean, se = acc.estimate(0)
    if rejected > max_rejection * n:
        raise RejectionError(f"{rejected} of {n} samples rejected by the wbar guard")
    return DensityEstimate(acc.grid, mean, se, acc.n, "malliavin-Fmla3", rejected)


# --- multivariate ---------------------------------------------------------------------


def _det_and_adjugate(g):
    d = len(g)
    if d == 1:
        return g[0][0], [[1.0]]
    if d == 2:
        det = g[0][0] * g[1][1] - g[0][1] * g[1][0]
        return det, [[g[1][1], -g[0][1]], [-g[1][0], g[0][0]]]
    if d == 3:
        cof = [[None] * 3 for _ in range(3)]
        for i in range(3):
            for j in range(3):
                r = [a for a in range(3) if a != i]
                c = [b for b in range(3) if b != j]
                minor = g[r[0]][c[0]] * g[r[1]][c[1]] - g[r[0]][c[1]] * g[r[1]][c[0]]
                cof[i][j] = minor if (i + j) % 2 == 0 else -minor
        det = g[0][0] * cof[0][0] + g[0][1] * cof[0][1] + g[0][2] * cof[0][2]
        adj = [[cof[j][i] for j in range(3)] for i in range(3)]
        return det, adj
    raise ValueError(f"multivariate weights support d <= 3, got {d}")


def h_beta(Fs, beta, points, guard: float = DET_GUARD):
    """``H_beta(F)`` at explicit points, with ``H_() = 1`` and

        H_(alpha, i) = sum_j delta(H_alpha (gamma^{-1})_{ij} DF_j),

    ``gamma`` the Malliavin matrix.  Indices in ``beta`` are 1-based.

    Returns ``(values, F_values, ok)``; rows with ``|det gamma| <= guard`` are
    flagged and carry NaN.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = len(Fs)
    n_vars = points.shape[1]
    beta = tuple(int(b) for b in beta)
    if any(not 1 <= b <= d for b in beta):
        raise ValueError(f"multi-index {beta} has entries outside 1..{d}")
    L = len(beta)
    order = L + 1
    alg = jet_algebra(n_vars, order)
    Fj = [F.to_functional()._jet(points, alg, order, {}) for F in Fs]
    dF = [jet_gradient(f) for f in Fj]
    gam = [[None] * d for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            s = dF[i][0] * dF[j][0]
            for m in range(1, n_vars):
                s = s + dF[i][m] * dF[j][m]
            gam[i][j] = gam[j][i] = s
    det, adj = _det_and_adjugate(gam)
    det_v = det.value if isinstance(det, Jet) else np.full(points.shape[0], float(det))
    ok = np.abs(det_v) > guard
    Fv = np.stack([f.value for f in Fj], axis=-1)
    out = np.full(points.shape[0], np.nan)
    if not np.any(ok):
        return out, Fv, ok

    def sub(j):
        return Jet(alg, j.order, j.coeffs[ok]) if isinstance(j, Jet) else j

    inv_det = sub(det).reciprocal() if isinstance(det, Jet) else 1.0 / det
    # v_i = sum_j (gamma^{-1})_{ij} DF_j, a vector field per index i
    dFs = [[sub(c) for c in row] for row in dF]
    V = []
    for i in range(d):
        comp = []
        for m in range(n_vars):
            s = None
            for j in range(d):
                a = sub(adj[i][j]) if isinstance(adj[i][j], Jet) else adj[i][j]
                t = dFs[j][m] * a
                s = t if s is None else s + t
            comp.append(s * inv_det)
        V.append(comp)
    x = [Jet.variable(alg, order, m, points[ok, m]) for m in range(n_vars)]
    H = Jet.constant(alg, L, 1.0, (int(ok.sum()),))
    for b in beta:
        H = jet_divergence([H * v for v in V[b - 1]], x)
    out[ok] = H.value
    return out, Fv, ok


def g_beta(beta, d: int, points):
    """``prod_i H_{k_i}(x_i)`` with ``k_i`` the multiplicity of ``i`` in ``beta``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.ones(points.shape[0])
    for i in range(1, d + 1):
        k = sum(1 for b in beta if b == i)
        out = out * hermite_poly(k, 1.0, points[:, i - 1])
    return out


def multivariate_density(
    Fs,
    beta,
    grid,
    n: int,
    seed: int,
    chunk_size: int = 50_000,
    threads: int = 1,
    guard: float = DET_GUARD,
    max_rejection: float = REJECTION_LIMIT,
) -> DensityEstimate:
    """``d_beta f(x) = (-1)^{|beta|} E[1{F > x} H_(1..d, beta)(F)]``.

    ``grid`` is either an ``(m, d)`` array of points or a tuple of ``d``
    increasing axes (product grid, bucketed per axis).
    """
    d = len(Fs)
    if d > 3:
        raise ValueError("multivariate estimates support d <= 3")
    n_vars = max(F.n for F in Fs)
    Fs = [ChaosExpansion(n_vars, F.coeffs) if F.n != n_vars else F for F in Fs]
    full = tuple(range(1, d + 1)) + tuple(beta)
    sign = (-1.0) ** len(beta)
    product = isinstance(grid, tuple)
    if product:
        axes = [np.asarray(a, dtype=float) for a in grid]
        shape = tuple(a.size + 1 for a in axes)
        s1 = np.zeros(shape)
        s2 = np.zeros(shape)
    else:
        pts = np.atleast_2d(np.asarray(grid, dtype=float))
        s1 = np.zeros(pts.shape[0])
        s2 = np.zeros(pts.shape[0])
    chunk = _chunk_for(n_vars, len(full) + 1, chunk_size)

    def work(k, m):
        x = substream(seed, k, stream=5).standard_normal((m, n_vars))
        H, Fv, ok = h_beta(Fs, full, x, guard)
        return np.where(ok, H, 0.0), Fv, int(np.sum(~ok))

    rejected = 0
    total = 0
    for H, Fv, bad in map_chunks(work, n, chunk, threads):
        rejected += bad
        total += H.size
        if product:
            idx = [np.searchsorted(a, Fv[:, i], side="left") for i, a in enumerate(axes)]
            flat = np.ravel_multi_index(idx, shape)
            s1 += np.bincount(flat, weights=H, minlength=s1.size).reshape(shape)
            s2 += np.bincount(flat, weights=H * H, minlength=s1.size).reshape(shape)
        else:
            for g, xg in enumerate(pts):
                sel = np.all(Fv > xg, axis=1)
                s1[g] += H[sel].sum()
                s2[g] += (H[sel] ** 2).sum()
    if rejected > max_rejection * n:
        raise RejectionError(f"{rejected} of {n} samples rejected by the determinant guard")
    if product:
        for ax in range(d):
            s1 = np.flip(np.cumsum(np.flip(s1, ax), axis=ax), ax)
            s2 = np.flip(np.cumsum(np.flip(s2, ax), axis=ax), ax)
        sl = tuple(slice(1, None) for _ in range(d))
        s1, s2 = s1[sl], s2[sl]
        grid_out = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    else:
        grid_out = pts
    mean = s1 / total
    se = np.sqrt(np.maximum(s2 / total - mean**2, 0.0) / max(total - 1, 1))
    tag = "multivariate-" + ("".join(map(str, beta)) if beta else "0")
    return DensityEstimate(grid_out, sign * mean, se, total, tag, rejected)


# --- KDE baseline -------------------------------------------------------------------


def silverman_bandwidth(values) -> float:
    values = np.asarray(values, dtype=float)
    sd = np.std(values, ddof=1)
    iqr = np.subtract(*np.percentile(values, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * values.size ** (-0.2)


def kde_density(values, grid, bandwidth: float | None = None, block: int = 200_000) -> DensityEstimate:
    """Gaussian-kernel density estimate with Silverman's bandwidth.

    ``extras['bias_allowance'] = 0.5 bw^2 max|f''|`` with ``f''`` taken by
    central differences of the estimate itself.
    """
    values = np.asarray(values, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    bw = silverman_bandwidth(values) if bandwidth is None else float(bandwidth)
    s1 = np.zeros(grid.size)
    s2 = np.zeros(grid.size)
    for start in range(0, values.size, block):
        v = values[start : start + block]
        k = normal_density((grid[:, None] - v[None, :]) / bw) / bw
        s1 += k.sum(axis=1)
        s2 += (k * k).sum(axis=1)
    n = values.size
    mean = s1 / n
    se = np.sqrt(np.maximum(s2 / n - mean**2, 0.0) / max(n - 1, 1))
    est = DensityEstimate(grid, mean, se, n, "kde")
    if grid.size > 2:
        h = np.diff(grid)
        curv = np.abs(np.diff(mean, 2)) / (h[:-1] * h[1:])
        bias = 0.5 * bw * bw * float(np.max(curv))
    else:
        bias = 0.0
    est.extras.update(bandwidth=bw, bias_allowance=bias)
    return est


def compare_to_kde(est: DensityEstimate, kde: DensityEstimate, nse: float = 3.0) -> dict:
    gap = np.abs(est.values - kde.values)
    tol = nse * np.sqrt(est.se**2 + kde.se**2) + kde.extras.get("bias_allowance", 0.0)
    return {
        "sup_gap": float(gap.max()),
        "fraction_within": float(np.mean(gap <= tol)),
        "all_within": bool(np.all(gap <= tol)),
    }


# --- distances and reports --------------------------------------------------------------


def uniform_distance(est: DensityEstimate, target) -> dict:
    """Grid-sup and trapezoid ``L^1``/``L^2`` gaps between an estimate and a target.

    ``target`` is an array of values on ``est.grid`` or a callable.
    """
    grid = est.grid
    tv = target(grid) if callable(target) else np.asarray(target, dtype=float)
    gap = np.abs(est.values - tv)
    j = int(np.argmax(gap))
    out = {"sup_gap": float(gap[j]), "argmax": float(grid[j]), "grid_points": int(grid.size)}
    if grid.ndim == 1:
        out["L1"] = float(trapezoid(gap, grid))
        out["L2"] = float(math.sqrt(trapezoid(gap**2, grid)))
        out["grid_step"] = float(np.max(np.diff(grid)))
    return out


def normal_target(sigma: float, k: int = 0):
    """Callable ``phi_sigma^(k)``."""
    if k == 0:
        return lambda x: normal_density(x, sigma)
    return lambda x: normal_density_derivative(k, sigma, x)


def _kernel_quantities(item):
    """(E F^4 - 3 sigma^4, ||f (x)_1 f||, Var ||DF||^2, sigma^2) for a spectrum or a matrix kernel."""
    if isinstance(item, Spectrum):
        p2, p4 = item.power_sum(2), item.power_sum(4)
        return 48.0 * p4, math.sqrt(p4), 32.0 * p4, 2.0 * p2
    K = np.asarray(item, dtype=float)
    if K.ndim != 2:
        raise ValueError("fourth-moment report supports chaos order 2 only (spectra or symmetric matrices)")
    c = contract(K, K, 1)
    c_norm2 = float(np.sum(c * c))
    return 48.0 * c_norm2, math.sqrt(c_norm2), 32.0 * c_norm2, 2.0 * float(np.sum(K * K))


def fourth_moment_report(items, labels=None) -> ConditionReport:
    """Conditions (i)-(iii) of the fourth-moment theorem along a sequence.

    Each item is a :class:`Spectrum` or a symmetric matrix kernel ``K`` (with
    quadrature weights already folded in) of a second-chaos variable.
    """
    items = list(items)
    if not items:
        raise ValueError("empty sequence")
    rows = [_kernel_quantities(it) for it in items]
    q = {
        "fourth_cumulant": [r[0] for r in rows],
        "contraction_norm": [r[1] for r in rows],
        "var_dfnorm": [r[2] for r in rows],
        "sigma2": [r[3] for r in rows],
    }
    if labels is not None:
        q["label"] = list(labels)

    def decreasing(v):
        return len(v) > 1 and all(b < a for a, b in zip(v, v[1:]))

    verdicts = {k: decreasing(q[k]) for k in ("fourth_cumulant", "contraction_norm", "var_dfnorm")}
    notes = []
    if not any(verdicts.values()):
        notes.append("no decay detected along the sequence")
    return ConditionReport("fourth-moment", q, verdicts, notes=notes)


def general_bound_report(
    F: ChaosExpansion,
    r: float,
    s: float,
    n: int,
    seed: int,
    C: float = 1.0,
    observed: float | None = None,
    chunk_size: int = 20_000,
    guard: float = WBAR_GUARD,
) -> BoundReport:
    """Monte Carlo components of the general-rate bound for a polynomial ``F``.

    Components: ``||F||_{1,s}``, ``|| ||D^2F||_op ||_s``, ``M = (E|wbar|^{-r})^{1/r}``
    and the per-sample random contraction chain
    ``||D^2F||_op^4 <= ||D^2F (x)_1 D^2F||^2 <= ||D^2F||_HS^4``.
    The assembled value is ``C ||F||_{1,s}^2 || ||D^2F||_op ||_s`` with ``C`` a
    user constant.
    """
    if not (r > 2 and s >= 8 and abs(2.0 / r + 4.0 / s - 1.0) < 1e-12):
        raise ValueError(f"exponents must satisfy 2/r + 4/s = 1 with s >= 8, r > 2 (got r={r}, s={s})")
    Ff = F.to_functional()
    Gf = (apply_L_inverse(F) * -1.0).to_functional()
    chunk = _chunk_for(F.n, 2, chunk_size)
    alg = jet_algebra(F.n, 2)
    acc = np.zeros(6)
    chain_ok = 0
    rejected = 0

    def work(k, m):
        x = substream(seed, k, stream=9).standard_normal((m, F.n))
        Fj = Ff._jet(x, alg, 2, {})
        Gj = Gf._jet(x, alg, 1, {})
        dF = Fj.gradient()
        wbar = np.sum(dF * Gj.gradient(), axis=-1)
        Hs = Fj.hessian()
        ev = np.linalg.eigvalsh(Hs)
        op = np.max(np.abs(ev), axis=-1)
        hs2 = np.sum(ev * ev, axis=-1)
        c2 = np.sum(ev**4, axis=-1)
        tol = 1e-12 * (1 + hs2**2)
        chain = (op**4 <= c2 + tol) & (c2 <= hs2**2 + tol)
        good = np.abs(wbar) > guard
        return np.array([
            np.sum(np.abs(Fj.value) ** s),
            np.sum(np.sum(dF * dF, axis=-1) ** (s / 2)),
            np.sum(op**s),
            np.sum(np.abs(wbar[good]) ** (-r)),
            np.sum(chain),
            np.sum(~good),
        ]), op

    ops = []
    for part, op in map_chunks(work, n, chunk, 1):
        acc += part
        ops.append(op)
    chain_ok = int(acc[4])
    rejected = int(acc[5])
    F_1s = (acc[0] / n) ** (1 / s) + (acc[1] / n) ** (1 / s)
    d2_s = (acc[2] / n) ** (1 / s)
    M = (acc[3] / max(n - rejected, 1)) ** (1 / r)
    comps = {
        "F_1s_norm": F_1s,
        "hessian_op_s_norm": d2_s,
        "M": M,
        "sigma2": F.variance,
        "rci_chain_fraction": chain_ok / n,
        "rejected": rejected,
        "hessian_op_min": float(min(o.min() for o in ops)),
        "hessian_op_max": float(max(o.max() for o in ops)),
    }
    value = C * F_1s**2 * d2_s
    notes = [f"exponents r={r}, s={s}"]
    return BoundReport("general-rate", comps, {"C": C}, value, observed, notes)
