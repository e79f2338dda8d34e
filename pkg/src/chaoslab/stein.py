"""Solutions of the one-dimensional Stein equation

    f'(x) - x f(x) / sigma^2 = h(x) - E[h(N)],   N ~ N(0, sigma^2),

and a Monte Carlo check of the Malliavin-Stein identity
``E[F f(F)] = E[f'(F) <DF, -DL^{-1}F>]``.

The bounded solution is ``f(x) = exp(x^2/2s^2) int_{-inf}^x (h - Eh) exp(-y^2/2s^2) dy``.
Evaluating it directly overflows, so we always work with exponentially scaled
tail integrals: the left tail for ``x <= 0`` and the (equivalent, sign-flipped)
right tail for ``x > 0``.  For polynomial and indicator-times-polynomial test
functions those tails reduce to the envelope functions

    s_k(x) = exp(x^2/2s^2) int_{|x|}^inf y^k exp(-y^2/2s^2) dy,

which obey ``s_{k+1} = s^2 (|x|^k + k s_{k-1})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .engine import ChaosExpansion, apply_L_inverse
from .engine.malliavin import jet_gradient
from .engine.jet import jet_algebra
from .rng import map_chunks, substream

SQRT_2PI = math.sqrt(2.0 * math.pi)
GH_NODES = 64


def envelope_sk(k: int, sigma: float, x) -> np.ndarray:
    """``s_k(x)`` via the upward recursion seeded by ``s_0`` (scaled erfc) and ``s_1 = sigma^2``."""
    if k < 0:
        raise ValueError("envelope order must be nonnegative")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return _envelopes(k, sigma, np.abs(np.asarray(x, dtype=float)))[k]


def _envelopes(kmax: int, sigma: float, a: np.ndarray) -> list[np.ndarray]:
    s2 = sigma * sigma
    out = [sigma * math.sqrt(math.pi / 2.0) * special.erfcx(a / (sigma * math.sqrt(2.0)))]
    if kmax >= 1:
        out.append(np.full_like(a, s2))
    for k in range(1, kmax):
        out.append(s2 * (a**k + k * out[k - 1]))
    return out


def _normal_moment(k: int, sigma: float) -> float:
    if k % 2:
        return 0.0
    return sigma**k * float(special.factorial2(k - 1)) if k else 1.0


@dataclass(frozen=True)
class TestFunction:
    """``h(x) = p0(x) + sum_j 1{x > z_j} p_j(x) + g(x)``.

    ``p0`` and ``p_j`` are ascending coefficient tuples; ``g`` is an optional
    callable handled by quadrature.  ``growth = (a, k, b)`` declares
    ``|h(x)| <= a |x|^k + b``.
    """

    poly: tuple[float, ...] = ()
    indicators: tuple[tuple[float, tuple[float, ...]], ...] = ()
    tabulated: tuple = ()
    growth: tuple[float, int, float] | None = None

    @property
    def tag(self) -> str:
        kinds = []
        if self.poly:
            kinds.append("polynomial")
        if self.indicators:
            kinds.append("indicator-polynomial")
        if self.tabulated:
            kinds.append("tabulated")
        return "+".join(kinds) or "zero"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.polynomial.polynomial.polyval(x, self.poly) if self.poly else np.zeros_like(x)
        for z, c in self.indicators:
            out = out + np.where(x > z, np.polynomial.polynomial.polyval(x, c), 0.0)
        for g in self.tabulated:
            out = out + np.vectorize(g, otypes=[float])(x)
        return out

    def __add__(self, other):
        poly = np.polynomial.polynomial.polyadd(self.poly or (0.0,), other.poly or (0.0,))
        return TestFunction(
            tuple(poly) if (self.poly or other.poly) else (),
            self.indicators + other.indicators,
            self.tabulated + other.tabulated,
        )

    def __mul__(self, c: float):
        c = float(c)
        return TestFunction(
            tuple(c * v for v in self.poly),
            tuple((z, tuple(c * v for v in p)) for z, p in self.indicators),
            tuple(_Scaled(g, c) for g in self.tabulated),
        )

    __rmul__ = __mul__

    def growth_bound(self):
        if self.growth is not None:
            return self.growth
        degs = [len(self.poly) - 1] + [len(p) - 1 for _, p in self.indicators]
        coeffs = [abs(v) for v in self.poly] + [abs(v) for _, p in self.indicators for v in p]
        k = max(max(degs), 0)
        a = sum(coeffs) or 1.0
        return (a, k, a)


@dataclass(frozen=True)
class _Scaled:
    g: object
    c: float

    def __call__(self, x):
        return self.c * self.g(x)


def polynomial(*coeffs) -> TestFunction:
    return TestFunction(poly=tuple(float(c) for c in coeffs))


def indicator_polynomial(z: float, *coeffs) -> TestFunction:
    """``1{x > z} * sum_i coeffs[i] x^i``."""
    return TestFunction(indicators=((float(z), tuple(float(c) for c in coeffs)),))


def indicator_hermite(z: float, k: int) -> TestFunction:
    """``1{x > z} H_k(x)``."""
    herm = np.polynomial.hermite_e.herme2poly([0] * k + [1])
    return indicator_polynomial(z, *herm)


def tabulated(fn, growth) -> TestFunction:
    return TestFunction(tabulated=(fn,), growth=tuple(growth))


def parse_test_function(spec: str) -> TestFunction:
    """Parse ``poly:c0,c1,..``, ``ind:z:c0,c1,..`` or ``hermite-ind:z:k`` (joined by ``+``)."""
    total = None
    for part in spec.split("+"):
        kind, _, rest = part.strip().partition(":")
        if kind == "poly":
            term = polynomial(*map(float, rest.split(",")))
        elif kind == "ind":
            z, _, cs = rest.partition(":")
            term = indicator_polynomial(float(z), *map(float, cs.split(",")))
        elif kind == "hermite-ind":
            z, _, k = rest.partition(":")
            term = indicator_hermite(float(z), int(k))
        else:
            raise ValueError(f"unknown test-function kind '{kind}' in '{spec}'")
        total = term if total is None else total + term
    if total is None:
        raise ValueError("empty test-function specification")
    return total


# --- expectations and scaled tails ---------------------------------------------------


def _upper_poly(coeffs, sigma, a):
    """``exp(a^2/2s^2) int_a^inf p(y) exp(-y^2/2s^2) dy`` for ``a >= 0``."""
    env = _envelopes(max(len(coeffs) - 1, 0), sigma, a)
    return sum(c * env[k] for k, c in enumerate(coeffs))


def _lower_poly(coeffs, sigma, a):
    """``exp(a^2/2s^2) int_{-inf}^a p(y) exp(-y^2/2s^2) dy`` for ``a <= 0``."""
    env = _envelopes(max(len(coeffs) - 1, 0), sigma, -a)
    return sum(c * (-1) ** k * env[k] for k, c in enumerate(coeffs))


def expectation(h: TestFunction, sigma: float) -> float:
    """``E[h(N)]``, closed form except for callable parts (64-node Gauss-Hermite)."""
    total = sum(c * _normal_moment(k, sigma) for k, c in enumerate(h.poly))
    for z, coeffs in h.indicators:
        za = np.array(z, dtype=float)
        if z >= 0:
            part = math.exp(-0.5 * (z / sigma) ** 2) * float(_upper_poly(coeffs, sigma, za))
        else:
            full = sum(c * _normal_moment(k, sigma) for k, c in enumerate(coeffs)) * sigma * SQRT_2PI
            part = full - math.exp(-0.5 * (z / sigma) ** 2) * float(_lower_poly(coeffs, sigma, za))
        total += part / (sigma * SQRT_2PI)
    if h.tabulated:
        nodes, weights = np.polynomial.hermite_e.hermegauss(GH_NODES)
        weights = weights / math.sqrt(2.0 * math.pi)
        for g in h.tabulated:
            total += float(np.sum(weights * np.vectorize(g, otypes=[float])(sigma * nodes)))
    return float(total)


def _tabulated_tail(g, sigma, x, upper):
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        f = lambda y, xi=xi: g(y) * math.exp((xi * xi - y * y) / (2 * sigma * sigma))
        if upper:
            out[i] = integrate.quad(f, xi, np.inf, limit=200)[0]
        else:
            out[i] = integrate.quad(f, -np.inf, xi, limit=200)[0]
    return out


def _scaled_tails(h: TestFunction, sigma: float, x: np.ndarray):
    """Left scaled tail on ``x <= 0`` and right scaled tail on ``x > 0`` of ``h``."""
    left = x <= 0
    xl, xr = x[left], x[~left]
    L = _lower_poly(h.poly, sigma, xl) if h.poly else np.zeros_like(xl)
    U = _upper_poly(h.poly, sigma, xr) if h.poly else np.zeros_like(xr)
    s2 = 2 * sigma * sigma
    for z, coeffs in h.indicators:
        za = np.array(z, dtype=float)
        act = xl > z
        if np.any(act):
            lz = _lower_poly(coeffs, sigma, za) if z <= 0 else 0.0
            term = _lower_poly(coeffs, sigma, xl[act]) - np.exp((xl[act] ** 2 - z * z) / s2) * lz
            L[act] += term
        above = xr >= z
        Ux = np.zeros_like(xr)
        if np.any(above):
            Ux[above] = _upper_poly(coeffs, sigma, xr[above])
        if np.any(~above):
            Ux[~above] = np.exp((xr[~above] ** 2 - z * z) / s2) * _upper_poly(coeffs, sigma, za)
        U = U + Ux
    for g in h.tabulated:
        L = L + _tabulated_tail(g, sigma, xl, upper=False)
        U = U + _tabulated_tail(g, sigma, xr, upper=True)
    return left, L, U


@dataclass
class SteinSolution:
    """``f_h`` and ``f_h'`` tabulated on ``grid``."""

    h: TestFunction
    sigma: float
    grid: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    mean_h: float
    notes: list[str] = field(default_factory=list)

    @property
    def tag(self) -> str:
        return self.h.tag

    def ode_residual(self, step: float = 1e-5) -> np.ndarray:
        """``f'(x) - x f(x)/s^2 - h(x) + Eh`` with ``f'`` from central differences of ``f``."""
        fp = (evaluate_stein(self.h, self.sigma, self.grid + step, self.mean_h)[0]
              - evaluate_stein(self.h, self.sigma, self.grid - step, self.mean_h)[0]) / (2 * step)
        return fp - self.grid * self.f / self.sigma**2 - self.h(self.grid) + self.mean_h

    def decay(self) -> np.ndarray:
        return np.exp(-0.5 * (self.grid / self.sigma) ** 2) * self.f


def evaluate_stein(h: TestFunction, sigma: float, x, mean_h: float | None = None):
    """``(f_h(x), f_h'(x))`` at arbitrary points."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.ravel()
    Eh = expectation(h, sigma) if mean_h is None else mean_h
    left, L, U = _scaled_tails(h, sigma, x)
    env0 = _envelopes(0, sigma, np.abs(x))[0]
    f = np.empty_like(x)
    f[left] = L - Eh * env0[left]
    f[~left] = -(U - Eh * env0[~left])
    fp = x * f / sigma**2 + h(x) - Eh
    return f.reshape(shape), fp.reshape(shape)


def solve_stein(h: TestFunction, sigma: float, grid) -> SteinSolution:
    """Bounded solution of the Stein equation on ``grid``.

    Raises
    ------
    ValueError
        If ``h`` breaks its declared growth bound on the grid.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    grid = np.asarray(grid, dtype=float)
    a, k, b = h.growth_bound()
    hv = h(grid)
    if np.any(~np.isfinite(hv)) or np.any(np.abs(hv) > a * np.abs(grid) ** k + b + 1e-9 * (1 + np.abs(hv))):
        raise ValueError("test function violates its declared polynomial growth bound on the grid")
    Eh = expectation(h, sigma)
    f, fp = evaluate_stein(h, sigma, grid, Eh)
    return SteinSolution(h, sigma, grid, f, fp, Eh)


# --- Malliavin-Stein identity ------------------------------------------------------


@dataclass
class MSReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    diff: float
    diff_se: float
    z: float
    n: int
    sigma2: float
    max_wbar_gap: float | None = None

    def to_dict(self):
        return dict(self.__dict__)


def _wbar_samples(F: ChaosExpansion, x: np.ndarray):
    """``F``, ``||DF||^2`` and ``<DF, -DL^{-1}F>`` at rows of ``x``."""
    G = (apply_L_inverse(F) * -1.0).to_functional()
    Ff = F.to_functional()
    alg = jet_algebra(F.n, 1)
    Fj = Ff._jet(x, alg, 1, {})
    Gj = G._jet(x, alg, 1, {})
    dF, dG = Fj.gradient(), Gj.gradient()
    return Fj.value, np.sum(dF * dF, axis=-1), np.sum(dF * dG, axis=-1)


def ms_identity_check(
    F: ChaosExpansion,
    h: TestFunction,
    n: int,
    seed: int,
    chunk_size: int = 50_000,
    threads: int = 1,
) -> MSReport:
    """Monte Carlo of both sides of ``E[s^2 f'(F) - F f(F)] = E[f'(F)(s^2 - wbar)]``."""
    if abs(F.mean) > 1e-12:
        raise ValueError("F must be centered")
    sigma2 = F.variance
    sigma = math.sqrt(sigma2)
    Eh = expectation(h, sigma)
    max_q = max(F.orders)

    def work(k, m):
        x = substream(seed, k, stream=7).standard_normal((m, F.n))
        Fv, w, wbar = _wbar_samples(F, x)
        f, fp = evaluate_stein(h, sigma, Fv, Eh)
        lhs = sigma2 * fp - Fv * f
        rhs = fp * (sigma2 - wbar)
        gap = np.max(np.abs(wbar - w / max_q)) if len(F.orders) == 1 else np.nan
        return np.array([lhs.sum(), (lhs**2).sum(), rhs.sum(), (rhs**2).sum(),
                         (lhs - rhs).sum(), ((lhs - rhs) ** 2).sum(), gap])

    tot = np.zeros(7)
    gaps = []
    for part in map_chunks(work, n, chunk_size, threads):
        tot[:6] += part[:6]
        gaps.append(part[6])

    def mse(s, s2):
        m = s / n
        return m, math.sqrt(max(s2 / n - m * m, 0.0) / (n - 1)) if n > 1 else math.inf

    lhs, lhs_se = mse(tot[0], tot[1])
    rhs, rhs_se = mse(tot[2], tot[3])
    diff, diff_se = mse(tot[4], tot[5])
    z = diff / diff_se if diff_se > 0 else 0.0
    return MSReport(lhs, lhs_se, rhs, rhs_se, diff, diff_se, z, n, sigma2,
                    None if len(F.orders) != 1 else float(np.max(gaps)))
