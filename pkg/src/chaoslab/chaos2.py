"""Second-chaos variables ``F = sum_i lam_i (X_i**2 - 1)`` in spectral form.

With ``a_j = sum_i lam_i**j X_i**2`` the Malliavin quantities of ``F`` are
rational functions of the ``a_j``:

    w       = ||DF||^2 = 4 a_2
    delta_u = 2F/w + 16 a_3 / w^2
    D_u a_j = a_{j+1} / a_2

so every ``D_u^j delta_u`` and every ``G_k`` is a polynomial in ``r = 1/a_2``
and the ``a_j``.  :class:`_SpectralPoly` carries that polynomial algebra and the
derivation ``D_u`` exactly; sampling then costs one matrix product per chunk.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .reports import BoundReport, ConditionReport
from .rng import map_chunks, substream

DEFAULT_CHUNK = 20_000


class SpectrumError(ValueError):
    """Invalid spectral data."""


class DivergentMomentError(ArithmeticError):
    """A requested negative moment is infinite."""


class CertificateUnavailableError(ArithmeticError):
    """A bound certificate's precondition fails."""


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted by decreasing modulus, plus an optional tail descriptor."""

    eigenvalues: np.ndarray
    tail_count: int = 0
    tail_bound: float = 0.0

    def __init__(self, eigenvalues, tail_count: int = 0, tail_bound: float = 0.0):
        lam = np.asarray(eigenvalues, dtype=float).ravel()
        if lam.size == 0 or not np.any(lam != 0):
            raise SpectrumError("spectrum needs at least one nonzero eigenvalue")
        if not np.all(np.isfinite(lam)):
            raise SpectrumError("eigenvalues must be finite")
        if tail_count < 0 or tail_bound < 0:
            raise SpectrumError("tail descriptor must be nonnegative")
        order = np.argsort(-np.abs(lam), kind="stable")
        lam = lam[order]
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "tail_count", int(tail_count))
        object.__setattr__(self, "tail_bound", float(tail_bound))

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.eigenvalues))

    def power_sum(self, p: int) -> float:
        return float(np.sum(self.eigenvalues**p))

    def tail_power_bound(self, p: int) -> float:
        """Upper bound on ``sum |lam|**p`` over the truncated tail."""
        return self.tail_count * self.tail_bound**p

    def scaled(self, c: float) -> Spectrum:
        return Spectrum(c * self.eigenvalues, self.tail_count, abs(c) * self.tail_bound)

    def functional(self):
        from .engine import second_chaos

        return second_chaos(self.eigenvalues)

    # file format ----------------------------------------------------------
    @classmethod
    def from_json(cls, data) -> Spectrum:
        """Accept a bare eigenvalue array or ``{"eigenvalues": [...], "tail_count": .., "tail_bound": ..}``."""
        if isinstance(data, list):
            return cls(_as_reals(data, "eigenvalues"))
        if not isinstance(data, dict):
            raise SpectrumError("spectrum file must hold a JSON array or object")
        if "eigenvalues" not in data:
            raise SpectrumError("missing field 'eigenvalues'")
        tc = data.get("tail_count", 0)
        if not isinstance(tc, int) or isinstance(tc, bool):
            raise SpectrumError("field 'tail_count' must be an integer")
        tb = data.get("tail_bound", 0.0)
        if not isinstance(tb, (int, float)) or isinstance(tb, bool):
            raise SpectrumError("field 'tail_bound' must be a real number")
        return cls(_as_reals(data["eigenvalues"], "eigenvalues"), tc, tb)

    @classmethod
    def load(cls, path) -> Spectrum:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpectrumError(f"spectrum file is not valid JSON: {exc}") from exc
        return cls.from_json(data)

    def to_json(self) -> dict:
        d = {"eigenvalues": self.eigenvalues.tolist()}
        if self.tail_count:
            d.update(tail_count=self.tail_count, tail_bound=self.tail_bound)
        return d


def _as_reals(values, name):
    if not isinstance(values, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
    ):
        raise SpectrumError(f"field '{name}' must be an array of real numbers")
    return values


# --- polynomial algebra in (r, a_1, a_3, a_4, ...) ----------------------------


class _SpectralPoly:
    """Polynomial in ``r = 1/a_2`` (any integer power) and ``a_j``, ``j != 2``.

    Monomials are exponent tuples ``(e_r, e_1, e_2, e_3, ...)`` with ``e_2``
    always zero, since ``a_2 = r**-1``.
    """

    def __init__(self, terms=None):
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0}

    @staticmethod
    def var(j: int, width: int) -> _SpectralPoly:
        e = [0] * width
        if j == 2:
            e[0] = -1
        else:
            e[j] = 1
        return _SpectralPoly({tuple(e): 1.0})

    @staticmethod
    def const(c: float, width: int) -> _SpectralPoly:
        return _SpectralPoly({(0,) * width: float(c)})

    def __add__(self, other):
        out = defaultdict(float, self.terms)
        for k, v in other.terms.items():
            out[k] += v
        return _SpectralPoly(out)

    def __neg__(self):
        return _SpectralPoly({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, _SpectralPoly):
            return _SpectralPoly({k: v * other for k, v in self.terms.items()})
        out = defaultdict(float)
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                out[tuple(a + b for a, b in zip(k1, k2))] += v1 * v2
        return _SpectralPoly(out)

    __rmul__ = __mul__

    @property
    def max_index(self) -> int:
        idx = 2
        for k in self.terms:
            for j in range(len(k) - 1, 0, -1):
                if k[j]:
                    idx = max(idx, j)
                    break
        return idx

    def d_u(self) -> _SpectralPoly:
        """Apply the derivation ``D_u``: ``D_u a_j = a_{j+1} r``, ``D_u r = -r**3 a_3``."""
        out = defaultdict(float)
        for k, v in self.terms.items():
            width = len(k)
            if k[0]:
                e = list(k)
                e[0] += 2
                e[3] += 1
                out[tuple(e)] += -k[0] * v
            for j in range(1, width):
                if j == 2 or not k[j]:
                    continue
                if j + 1 >= width:
                    raise IndexError("spectral polynomial width too small for D_u")
                e = list(k)
                e[j] -= 1
                if j != 1:  # D_u a_1 = a_2 r = 1
                    e[j + 1] += 1
                    e[0] += 1
                out[tuple(e)] += k[j] * v
        return _SpectralPoly(out)

    def evaluate(self, r: np.ndarray, a: np.ndarray) -> np.ndarray:
        """``a[:, j]`` holds ``a_j`` (column 0 and 2 ignored)."""
        out = np.zeros_like(r)
        for k, v in self.terms.items():
            term = v * r ** k[0] if k[0] else np.full_like(r, v)
            for j in range(1, len(k)):
                if k[j]:
                    term = term * a[:, j] ** k[j]
            out += term
        return out


class _WeightFormulas:
    """Exact polynomial forms of delta_u, D_u^j delta_u and G_k for one spectrum."""

    def __init__(self, lam_sum: float, max_gk: int, max_du: int = 1):
        self.width = max(max_gk, max_du) + 4
        W = self.width
        a1, a3 = _SpectralPoly.var(1, W), _SpectralPoly.var(3, W)
        r = _SpectralPoly({tuple([1] + [0] * (W - 1)): 1.0})
        F = a1 - _SpectralPoly.const(lam_sum, W)
        self.delta = F * r * 0.5 + a3 * r * r
        self.du_delta = [self.delta]
        for _ in range(max_du):
            self.du_delta.append(self.du_delta[-1].d_u())
        self.G = [_SpectralPoly.const(1.0, W)]
        for _ in range(max_gk):
            g = self.G[-1]
            self.G.append(g * self.delta - g.d_u())

    @property
    def needed_powers(self) -> int:
        polys = self.du_delta + self.G
        return max(p.max_index for p in polys)


@dataclass
class WeightedSample:
    """A batch of second-chaos draws with their Malliavin weights."""

    F: np.ndarray
    w: np.ndarray
    delta_u: np.ndarray
    du_delta_u: np.ndarray
    G: list[np.ndarray] = field(default_factory=list)
    points: np.ndarray | None = None
    chunk: int = 0

    def __len__(self):
        return self.F.size


def weights_at(s: Spectrum, points, max_gk_order: int = 1) -> WeightedSample:
    """Closed-form weights at explicit Gaussian points of shape ``(n, N)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lam = s.eigenvalues
    if points.shape[1] != lam.size:
        raise SpectrumError(f"points have {points.shape[1]} coordinates, spectrum has {lam.size}")
    lam_sum = float(lam.sum())
    formulas = _WeightFormulas(lam_sum, max_gk_order)
    powers = np.stack([lam**j for j in range(formulas.needed_powers + 1)], axis=1)
    return _assemble((points * points) @ powers, formulas, max_gk_order, lam_sum, points)


def _assemble(a, formulas, max_gk_order, lam_sum, points=None, chunk=0):
    a2 = a[:, 2]
    if np.any(~(a2 > 0)):
        raise ArithmeticError("||DF||^2 vanished at a sample point")
    r = 1.0 / a2
    return WeightedSample(
        F=a[:, 1] - lam_sum,
        w=4.0 * a2,
        delta_u=formulas.delta.evaluate(r, a),
        du_delta_u=formulas.du_delta[1].evaluate(r, a),
        G=[g.evaluate(r, a) for g in formulas.G[: max_gk_order + 1]],
        points=points,
        chunk=chunk,
    )


def sample(
    s: Spectrum,
    n: int,
    seed: int,
    max_gk_order: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    threads: int = 1,
    keep_points: bool = False,
):
    """Stream i.i.d. draws of ``F`` with closed-form weights, chunk by chunk.

    Chunk ``k`` uses the Philox substream ``(seed, k)``; the output depends only
    on ``(seed, n, chunk_size)``.
    """
    lam = s.eigenvalues
    lam_sum = float(lam.sum())
    formulas = _WeightFormulas(lam_sum, max_gk_order)
    kmax = formulas.needed_powers
    powers = np.ascontiguousarray(np.stack([lam**j for j in range(kmax + 1)], axis=1))

    def work(k, m):
        rng = substream(seed, k)
        x = rng.standard_normal((m, lam.size))
        return _assemble((x * x) @ powers, formulas, max_gk_order, lam_sum, x if keep_points else None, k)

    yield from map_chunks(work, n, chunk_size, threads)


def collect(stream) -> WeightedSample:
    """Concatenate a sample stream into one batch."""
    batches = list(stream)
    if not batches:
        raise ValueError("empty sample stream")
    cat = np.concatenate
    pts = batches[0].points
    return WeightedSample(
        F=cat([b.F for b in batches]),
        w=cat([b.w for b in batches]),
        delta_u=cat([b.delta_u for b in batches]),
        du_delta_u=cat([b.du_delta_u for b in batches]),
        G=[cat([b.G[k] for b in batches]) for k in range(len(batches[0].G))],
        points=None if pts is None else cat([b.points for b in batches]),
    )


# --- exact moments -------------------------------------------------------------


def exact_moments(s: Spectrum) -> dict[str, float]:
    """``sigma2 = 2 sum lam^2``, ``Var(||DF||^2) = 32 sum lam^4``, ``E F^4 - 3 sigma^4 = 48 sum lam^4``."""
    p2, p4 = s.power_sum(2), s.power_sum(4)
    return {
        "sigma2": 2.0 * p2,
        "var_dfnorm": 32.0 * p4,
        "excess_kurtosis": 48.0 * p4,
        "fourth_moment": 3.0 * (2.0 * p2) ** 2 + 48.0 * p4,
    }


def cumulant(s: Spectrum, r: int) -> float:
    """``r``-th cumulant: ``2**(r-1) (r-1)! sum lam**r`` (zero mean)."""
    if r == 1:
        return 0.0
    return 2 ** (r - 1) * math.factorial(r - 1) * s.power_sum(r)


def equi_check(s: Spectrum) -> dict[str, object]:
    """Evaluate the q=2 variance/fourth-moment sandwich in both readings.

    ``displayed`` uses ``E[F^4] - (E[F^2])^2`` in the middle term;
    ``cumulant`` uses ``E[F^4] - 3 sigma^4``.
    """
    m = exact_moments(s)
    q = 2
    var_w = m["var_dfnorm"]
    lower = var_w / q**2
    upper = (q - 1) * var_w
    mid_displayed = (q - 1) / (3 * q) * (m["fourth_moment"] - m["sigma2"] ** 2)
    mid_cumulant = (q - 1) / (3 * q) * m["excess_kurtosis"]
    rel = 1e-12 * max(1.0, abs(upper))
    return {
        "lower": lower,
        "upper": upper,
        "middle_displayed": mid_displayed,
        "middle_cumulant": mid_cumulant,
        "displayed_holds": bool(lower <= mid_displayed + rel and mid_displayed <= upper + rel),
        "cumulant_holds": bool(lower <= mid_cumulant + rel and mid_cumulant <= upper + rel),
    }


# --- negative moments ------------------------------------------------------------


def negative_moment(s: Spectrum, alpha: float, rtol: float = 1e-8, return_info: bool = False):
    """``E[(sum lam_i^2 X_i^2)^(-alpha)]`` by quadrature of

        1/Gamma(alpha) * int_0^inf y^(alpha-1) prod_i (1 + 2 lam_i^2 y)^(-1/2) dy

    after the substitution ``y = t/(1-t)``.

    Raises
    ------
    DivergentMomentError
        When the number of nonzero eigenvalues is at most ``2 alpha``.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    lam = s.eigenvalues
    nz = lam[lam != 0]
    n0 = nz.size
    if n0 <= 2 * alpha:
        raise DivergentMomentError(
            f"E[G^(-2 alpha)] is infinite: {n0} nonzero eigenvalues, need more than 2*alpha = {2 * alpha}"
        )
    c = 2.0 * nz**2
    # rescale y so the integrand's bulk sits near t = 1/2
    scale = 1.0 / float(np.mean(c))

    def integrand(t):
        if t <= 0.0 or t >= 1.0:
            return 0.0
        y = scale * t / (1.0 - t)
        log_prod = -0.5 * np.sum(np.log1p(c * y))
        return math.exp((alpha - 1.0) * math.log(y) + log_prod) * scale / (1.0 - t) ** 2

    val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=rtol / 10, limit=500)
    value = val / special.gamma(alpha)
    if not return_info:
        return value
    # bound from the N-th eigenvalue: E[G^-2a] <= (2 lam_N^2)^-a Gamma(N/2 - a) / Gamma(N/2)
    lamN = abs(nz[-1])
    bound_const = special.gamma(n0 / 2 - alpha) / special.gamma(n0 / 2) * (n0 / 2.0) ** alpha
    bound = (2 * lamN**2) ** -alpha * special.gamma(n0 / 2 - alpha) / special.gamma(n0 / 2)
    return value, {
        "abs_error": err / special.gamma(alpha),
        "nonzero_count": n0,
        "bound": bound,
        "bound_constant": bound_const,
        "bound_holds": bool(value <= bound * (1 + 1e-10)),
    }


def chi_square_negative_moment(dof: int, alpha: float) -> float:
    """``E[(chi^2_dof)^(-alpha)] = Gamma(dof/2 - alpha) / (2^alpha Gamma(dof/2))``."""
    if dof <= 2 * alpha:
        raise DivergentMomentError(f"chi-square({dof}) has no moment of order -{alpha}")
    return math.exp(special.gammaln(dof / 2 - alpha) - special.gammaln(dof / 2)) / 2**alpha


def m_beta(s: Spectrum, beta: float) -> float:
    """``M_beta(F) = (E ||DF||^-beta)^(1/beta)`` with ``||DF||^2 = 4 sum lam^2 X^2``."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return 0.5 * negative_moment(s, beta / 2.0) ** (1.0 / beta)


# --- certificates ----------------------------------------------------------------


def certificate_qrate(s: Spectrum, Cq: float = 1.0) -> BoundReport:
    """Uniform density-distance bound ``C sqrt(E F^4 - 3 sigma^4)`` with
    ``C = Cq (sigma^-1 M_6^2 + M_6^3 + sigma^-3)``.
    """
    try:
        m6 = m_beta(s, 6.0)
    except DivergentMomentError as exc:
        raise CertificateUnavailableError(
            f"M_6(F) is infinite (needs more than 6 nonzero eigenvalues, have {s.nonzero_count})"
        ) from exc
    mom = exact_moments(s)
    sigma = math.sqrt(mom["sigma2"])
    gap = math.sqrt(mom["excess_kurtosis"])
    C = Cq * (m6**2 / sigma + m6**3 + sigma**-3)
    return BoundReport(
        name="qrate",
        components={
            "sigma2": mom["sigma2"],
            "M6": m6,
            "fourth_moment_gap": gap,
            "C": C,
        },
        constants={"Cq": Cq},
        value=C * gap,
    )


def certificate_qderiv(s: Spectrum, k: int, beta: float, C: float = 1.0) -> BoundReport:
    """Derivative-density bound skeleton ``C sigma^(-k-3) sqrt(E F^4 - 3 sigma^4)``.

    ``beta`` must exceed ``6k + 6 max(floor(k/2), 1)`` and ``M_beta`` must be finite.
    """
    need = 6 * k + 6 * max(k // 2, 1)
    if beta <= need:
        raise CertificateUnavailableError(f"beta = {beta} must exceed {need} for derivative order {k}")
    try:
        mb = m_beta(s, beta)
    except DivergentMomentError as exc:
        raise CertificateUnavailableError(
            f"M_{beta}(F) is infinite with {s.nonzero_count} nonzero eigenvalues"
        ) from exc
    mom = exact_moments(s)
    sigma = math.sqrt(mom["sigma2"])
    gap = math.sqrt(mom["excess_kurtosis"])
    return BoundReport(
        name=f"qderiv-{k}",
        components={"sigma2": mom["sigma2"], f"M{beta:g}": mb, "fourth_moment_gap": gap},
        constants={"C": C},
        value=C * sigma ** (-k - 3) * gap,
    )


def i2th_index(m: int) -> int:
    return 6 * m + 6 * max(m // 2, 1)


def check_i2th_conditions(
    spectra,
    m: int,
    sigma2_min: float = 1e-12,
    fourth_max: float | None = None,
    tail_min: float = 1e-12,
) -> ConditionReport:
    """Evaluate conditions (i)-(iii) of the second-chaos convergence theorem.

    (i) ``2 sum lam^2`` stays above ``sigma2_min``; (ii) ``sum lam^4`` decays:
    below ``fourth_max`` at the last index when given, otherwise strictly
    decreasing and at most half its first value; (iii)
    ``inf_n sup_{i > i0} |lam_{n,i}| sqrt(i)`` exceeds ``tail_min``.
    """
    spectra = list(spectra)
    if not spectra:
        raise ValueError("need at least one spectrum")
    i0 = i2th_index(m)
    s2, s4, tail = [], [], []
    for s in spectra:
        lam = np.abs(s.eigenvalues)
        s2.append(2.0 * float(np.sum(lam**2)))
        s4.append(float(np.sum(lam**4)))
        idx = np.arange(1, lam.size + 1)
        sel = idx > i0
        tail.append(float(np.max(lam[sel] * np.sqrt(idx[sel]))) if np.any(sel) else 0.0)
    if fourth_max is None:
        decay = all(b < a for a, b in zip(s4, s4[1:])) and s4[-1] <= 0.5 * s4[0]
    else:
        decay = s4[-1] <= fourth_max
    inf_tail = min(tail)
    return ConditionReport(
        name="i2th",
        quantities={"two_sum_sq": s2, "sum_fourth": s4, "tail_sup": tail},
        verdicts={
            "i": bool(min(s2) > sigma2_min),
            "ii": bool(decay),
            "iii": bool(inf_tail > tail_min),
        },
        summary={"index_threshold": float(i0), "inf_tail_sup": inf_tail, "sigma2_last": s2[-1]},
    )
