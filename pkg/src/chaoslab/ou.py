"""Ornstein-Uhlenbeck drift estimation as a second-chaos problem.

The model is ``dX = -theta X dt + gamma dB`` with ``X_0 = 0``.  The rescaled
estimation error of the least-squares estimator is (up to a negligible term)
the second-chaos variable ``F_T = I_2(f_T)`` with kernel

    f_T(t, s) = gamma^2 / (2 sqrt(T)) * exp(-theta |t - s|)   on [0, T]^2.

The eigenvalues of the integral operator with kernel ``f_T`` are
``lambda = gamma^2 theta / (sqrt(T) (theta^2 + mu^2))`` where ``mu > 0`` solves

    (mu^2 - theta^2) sin(mu T) = 2 mu theta cos(mu T),

the secular equation of ``phi'' = -mu^2 phi`` with Robin conditions
``phi'(0) = theta phi(0)`` and ``phi'(T) = -theta phi(T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.integrate import trapezoid

from . import chaos2
from .chaos2 import Spectrum
from .density import default_grid, malliavin_density, normal_target, uniform_distance
from .rng import substream

BISECT_ITERS = 200


@dataclass(frozen=True)
class OUConfig:
    theta: float
    gamma: float
    T: float
    dt: float
    seed: int = 0

    def __post_init__(self):
        for name in ("theta", "gamma", "T", "dt"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.dt > self.T / 100 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds T/100={self.T / 100}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


def simulate_ou(cfg: OUConfig, paths: int = 1, stream: int = 0) -> np.ndarray:
    """Exact-transition paths of shape ``(paths, steps + 1)`` with ``X_0 = 0``.

    Path ``p`` uses the substream ``(cfg.seed, p)`` so adding paths never
    changes earlier ones.
    """
    a = math.exp(-cfg.theta * cfg.dt)
    b = cfg.gamma * math.sqrt(-math.expm1(-2 * cfg.theta * cfg.dt) / (2 * cfg.theta))
    m = cfg.steps
    out = np.zeros((paths, m + 1))
    for p in range(paths):
        xi = substream(cfg.seed, p, stream=11 + stream).standard_normal(m)
        out[p, 1:] = signal.lfilter([b], [1.0, -a], xi)
    return out


def least_squares_estimate(path, dt: float):
    """``-(sum X dX) / (int X^2 dt)``: left-point Ito sums, trapezoid denominator.

    Works row-wise on a 2-D array of paths.
    """
    path = np.asarray(path, dtype=float)
    if path.shape[-1] < 101:
        raise ValueError("path needs at least 100 steps")
    x = path[..., :-1]
    dx = np.diff(path, axis=-1)
    num = np.sum(x * dx, axis=-1)
    den = trapezoid(path * path, dx=dt, axis=-1)
    if np.any(~(np.abs(den) > 0)):
        raise ValueError("degenerate path: the quadratic functional vanished")
    return -num / den


# --- spectrum of f_T -----------------------------------------------------------------


def _lam(mu, theta, gamma, T):
    return gamma**2 * theta / (math.sqrt(T) * (theta**2 + mu**2))


def secular(mu, theta, T):
    """Pole-free secular function ``(mu^2 - theta^2) sin(mu T) - 2 mu theta cos(mu T)``."""
    return (mu * mu - theta * theta) * np.sin(mu * T) - 2 * mu * theta * np.cos(mu * T)


def secular_residual(mu, theta, T):
    """Secular function divided by ``mu^2 + theta^2``; equals ``|sin|`` of the phase error."""
    return np.abs(secular(mu, theta, T)) / (mu * mu + theta * theta)


def _bisect(f, lo, hi, iters=BISECT_ITERS):
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise RuntimeError(f"no sign change on [{lo!r}, {hi!r}]: f = {flo!r}, {fhi!r}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class EigenSolveResult:
    """Leading eigenvalues of the ``f_T`` operator with their bracket ledger.

    ``bracket_index[j]`` is the ``i`` with ``mu_j in ((i pi - pi/2)/T, (i pi + pi/2)/T)``
    and ``(lo[j], hi[j])`` the matching eigenvalue interval.  Roots beyond the
    first one in a bracket, and roots in the ``i = 0`` bracket, are listed in
    ``extra``.
    """

    theta: float
    gamma: float
    T: float
    mu: np.ndarray
    eigenvalues: np.ndarray
    bracket_index: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    residual: np.ndarray
    extra: list[int]
    tail_bound: float
    notes: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    def inside_brackets(self) -> np.ndarray:
        return (self.lo < self.eigenvalues) & (self.eigenvalues < self.hi)

    def spectrum(self) -> Spectrum:
        # the tail has infinitely many terms; its mass is carried by tail_bound here
        return Spectrum(self.eigenvalues)


def _roots_in_bracket(i, theta, T):
    lo = max((i * math.pi - math.pi / 2) / T, 0.0)
    hi = (i * math.pi + math.pi / 2) / T
    f = lambda mu: secular(mu, theta, T)
    if i == 0:
        # mu = 0 is a spurious zero; a root exists only when theta < pi/(2T)
        if theta < hi and f(hi) > 0:
            return [_bisect(f, theta, hi)] if f(theta) != 0 else [theta]
        return []
    if lo < theta < hi:
        if f(theta) == 0 or abs(math.cos(theta * T)) < 1e-15:
            return [theta]
        return [_bisect(f, lo, theta), _bisect(f, theta, hi)]
    if theta == lo or theta == hi:
        return [_bisect(f, lo, hi)] if np.sign(f(lo)) != np.sign(f(hi)) else []
    return [_bisect(f, lo, hi)]


def _tail_bound(i0, theta, gamma, T, terms=100_000):
    """Bound on ``sum lambda^2`` over all roots in brackets ``i >= i0``.

    A root in bracket ``i`` has ``mu > (i - 1/2) pi / T``, so its eigenvalue is
    below the bracket's upper end.  Those upper ends are summed explicitly for
    ``terms`` brackets and the rest is bounded by an integral of ``k^-4``; the
    bracket holding ``theta`` may contribute a second root, bounded by
    ``lambda(theta)``.
    """
    c = math.pi / T
    k = np.arange(i0, i0 + terms, dtype=float) - 0.5
    head = np.sum(1.0 / (theta**2 + (c * k) ** 2) ** 2)
    last = k[-1]
    rest = 1.0 / (3.0 * c**4 * last**3)
    total = (gamma**2 * theta / math.sqrt(T)) ** 2 * (head + rest)
    if theta > (i0 - 0.5) * c:
        total += _lam(theta, theta, gamma, T) ** 2
    return total


def kernel_spectrum_sl(theta: float, gamma: float, T: float, m: int) -> EigenSolveResult:
    """The ``m`` largest eigenvalues of the ``f_T`` operator by bisection.

    Each bracket ``((i pi - pi/2)/T, (i pi + pi/2)/T)`` holds one root except
    the one containing ``theta``, which holds two (split at ``theta``), and the
    ``i = 0`` bracket, which holds one root when ``theta < pi/(2T)``.
    """
    if m < 1:
        raise ValueError("need at least one eigenvalue")
    if not (theta > 0 and gamma > 0 and T > 0):
        raise ValueError("theta, gamma, T must be positive")
    mus, idx, extra = [], [], []
    i = 0
    while len(mus) < m:
        roots = _roots_in_bracket(i, theta, T)
        for j, r in enumerate(roots):
            if i == 0 or j > 0:
                extra.append(len(mus))
            mus.append(r)
            idx.append(i)
            if len(mus) == m:
                break
        i += 1
    mu = np.array(mus)
    idx = np.array(idx)
    lam = _lam(mu, theta, gamma, T)
    mu_lo = np.maximum((idx * math.pi - math.pi / 2) / T, 0.0)
    mu_hi = (idx * math.pi + math.pi / 2) / T
    lo = _lam(mu_hi, theta, gamma, T)
    hi = _lam(mu_lo, theta, gamma, T)
    tail = _tail_bound(int(idx[-1]) + 1, theta, gamma, T)
    # a second root may remain in the last bracket if it straddles theta
    if len(_roots_in_bracket(int(idx[-1]), theta, T)) > np.sum(idx == idx[-1]):
        tail += _lam(mu[-1], theta, gamma, T) ** 2
    res = secular_residual(mu, theta, T)
    notes = []
    if extra:
        notes.append(f"additional roots outside the one-per-bracket ledger at positions {extra}")
    return EigenSolveResult(theta, gamma, T, mu, lam, idx, lo, hi, res, extra, float(tail), notes)


def kernel_matrix(theta, gamma, T, nodes: int):
    """Gauss-Legendre nodes, weights and the symmetric matrix ``sqrt(w_i) f_T(t_i, t_j) sqrt(w_j)``."""
    if nodes < 16:
        raise ValueError("need at least 16 nodes")
    x, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * T * (x + 1.0)
    w = 0.5 * T * w
    K = gamma**2 / (2 * math.sqrt(T)) * np.exp(-theta * np.abs(t[:, None] - t[None, :]))
    sw = np.sqrt(w)
    A = sw[:, None] * K * sw[None, :]
    return t, w, 0.5 * (A + A.T)


def row_integral_correction(theta, gamma, T, t, w, A):
    """Diagonal ``int f_T(t_i, s) ds - sum_j w_j f_T(t_i, t_j)``.

    Adding it to ``A`` is singularity subtraction: the quadrature then only
    sees ``f_T(t, s)(phi(s) - phi(t))``, which is smooth across ``t = s``.
    """
    sw = np.sqrt(w)
    K = A / sw[:, None] / sw[None, :]
    row = gamma**2 / (2 * math.sqrt(T)) * (2.0 - np.exp(-theta * t) - np.exp(-theta * (T - t))) / theta
    return row - K @ w


def kernel_spectrum_nystrom(theta: float, gamma: float, T: float, nodes: int = 400, correction: str = "none", return_vectors=False):
    """Nystrom eigenvalues of the ``f_T`` operator, sorted descending.

    ``correction="row"`` adds the singularity-subtraction diagonal from
    :func:`row_integral_correction`; the default is the plain weighted kernel
    matrix, whose trace equals ``int f_T(t, t) dt`` exactly.
    """
    t, w, A = kernel_matrix(theta, gamma, T, nodes)
    if correction == "row":
        A = A + np.diag(row_integral_correction(theta, gamma, T, t, w, A))
    elif correction != "none":
        raise ValueError(f"unknown correction '{correction}'")
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(vals)[::-1]
    spec = Spectrum(vals[order])
    if return_vectors:
        return spec, vals[order], vecs[:, order], A
    return spec


def exact_f_t_moment(theta: float, gamma: float, T: float) -> float:
    """``E[F_T^2] = 2 ||f_T||^2 = gamma^4/(2 theta) - gamma^4 (1 - e^{-2 theta T}) / (4 theta^2 T)``."""
    if not (theta > 0 and gamma > 0 and T > 0):
        raise ValueError("theta, gamma, T must be positive")
    g4 = gamma**4
    return g4 / (2 * theta) + g4 * math.expm1(-2 * theta * T) / (4 * theta**2 * T)


def limit_variance(theta: float, gamma: float) -> float:
    return gamma**4 / (2 * theta)


def truncated_spectrum(theta, gamma, T, rel_tail: float = 1e-6, start: int = 32) -> tuple[EigenSolveResult, int]:
    """Smallest leading spectrum with ``2 sum lambda^2 >= (1 - rel_tail) E[F_T^2]``."""
    target = (1.0 - rel_tail) * exact_f_t_moment(theta, gamma, T)
    m = start
    while True:
        res = kernel_spectrum_sl(theta, gamma, T, m)
        cum = 2.0 * np.cumsum(res.eigenvalues**2)
        hit = np.nonzero(cum >= target)[0]
        if hit.size:
            k = int(hit[0]) + 1
            return kernel_spectrum_sl(theta, gamma, T, k), k
        m *= 2
        if m > 10**7:
            raise RuntimeError("truncation did not converge")


def spectral_fourth_cumulant(lams) -> float:
    """``E[F^4] - 3 (E F^2)^2 = 48 sum lambda^4``."""
    lams = np.asarray(lams, dtype=float)
    return 48.0 * float(np.sum(lams**4))


def _loglog_slope(x, y):
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


@dataclass
class RateReport:
    T: list
    sup_distance: list
    max_se: list
    spectrum_size: list
    slope: float
    intercept: float
    cumulant_root: list
    cumulant_slope: float
    conclusive: bool
    monotone_inversions: int
    notes: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def rate_experiment(
    theta: float,
    gamma: float,
    T_list,
    n: int,
    seed: int,
    grid=None,
    threads: int = 1,
    chunk_size: int = 20_000,
) -> RateReport:
    """Sup distance between the Malliavin density of ``F_T`` and the limit normal.

    The run is inconclusive when the largest per-point standard error exceeds
    half of the smallest measured distance.
    """
    T_list = [float(t) for t in T_list]
    if len(T_list) < 4 or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be increasing with at least four entries")
    sigma2 = limit_variance(theta, gamma)
    sigma = math.sqrt(sigma2)
    grid = default_grid(sigma) if grid is None else np.asarray(grid, dtype=float)
    target = normal_target(sigma)
    dists, ses, sizes, cum = [], [], [], []
    for j, T in enumerate(T_list):
        res, k = truncated_spectrum(theta, gamma, T)
        spec = res.spectrum()
        chunk = min(chunk_size, max(1000, 4_000_000 // k))
        est = malliavin_density(chaos2.sample(spec, n, seed + j, chunk_size=chunk, threads=threads), grid)
        d = uniform_distance(est, target)
        dists.append(d["sup_gap"])
        ses.append(float(est.se.max()))
        sizes.append(k)
        cum.append(math.sqrt(spectral_fourth_cumulant(res.eigenvalues)))
    slope, intercept = _loglog_slope(T_list, dists)
    cslope, _ = _loglog_slope(T_list, cum)
    conclusive = max(ses) <= 0.5 * min(dists)
    inversions = 0
    for a, b, sa, sb in zip(dists, dists[1:], ses, ses[1:]):
        if b >= a:
            inversions += 1 if b - a <= 3 * math.hypot(sa, sb) else 2
    notes = []
    if not conclusive:
        need = int(n * (2 * max(ses) / min(dists)) ** 2) + 1
        notes.append(f"Monte Carlo noise floor too high; try n >= {need}")
    return RateReport(T_list, dists, ses, sizes, slope, intercept, cum, cslope, conclusive, inversions, notes)
