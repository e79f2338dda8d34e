"""Polynomial functionals in the tensor-Hermite basis, the Ornstein-Uhlenbeck
generator ``L`` and its pseudo-inverse, and contractions of kernels of order
at most two.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from math import factorial
from types import MappingProxyType

import numpy as np

from ..hermite import hermite_poly
from .functional import Const, Functional, NonPolynomialError, coordinates


def _monomial_to_hermite(k: int) -> dict[int, int]:
    """``x**k = sum_j k!/(2**j j! (k-2j)!) H_{k-2j}(x)`` with exact integers."""
    return {
        k - 2 * j: factorial(k) // (2**j * factorial(j) * factorial(k - 2 * j))
        for j in range(k // 2 + 1)
    }


@dataclass(frozen=True)
class ChaosExpansion:
    """Coefficients on products ``prod_i H_{a_i}(X_i)`` keyed by ``a``."""

    n: int
    coeffs: MappingProxyType = field(repr=False)

    def __init__(self, n: int, coeffs):
        clean = {}
        for a, c in dict(coeffs).items():
            a = tuple(int(v) for v in a) + (0,) * (n - len(a))
            if len(a) != n:
                raise ValueError(f"multi-degree {a} does not fit dimension {n}")
            if c != 0:
                clean[a] = clean.get(a, 0.0) + float(c)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "coeffs", MappingProxyType(clean))

    @property
    def grades(self) -> dict[int, float]:
        """Squared L2 mass per chaos grade, ``E[J_q(F)**2]``."""
        out = defaultdict(float)
        for a, c in self.coeffs.items():
            out[sum(a)] += c * c * float(np.prod([factorial(v) for v in a]))
        return dict(out)

    @property
    def orders(self) -> set[int]:
        return {sum(a) for a in self.coeffs}

    @property
    def mean(self) -> float:
        return self.coeffs.get((0,) * self.n, 0.0)

    @property
    def variance(self) -> float:
        return sum(v for q, v in self.grades.items() if q > 0)

    def project(self, q: int) -> ChaosExpansion:
        """``J_q``: the grade-``q`` component."""
        return ChaosExpansion(self.n, {a: c for a, c in self.coeffs.items() if sum(a) == q})

    def scale_grades(self, fn) -> ChaosExpansion:
        return ChaosExpansion(self.n, {a: fn(sum(a)) * c for a, c in self.coeffs.items()})

    def __add__(self, other):
        if not isinstance(other, ChaosExpansion) or other.n != self.n:
            return NotImplemented
        out = defaultdict(float, self.coeffs)
        for a, c in other.coeffs.items():
            out[a] += c
        return ChaosExpansion(self.n, out)

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, s):
        return ChaosExpansion(self.n, {a: s * c for a, c in self.coeffs.items()})

    __rmul__ = __mul__

    def allclose(self, other, atol=1e-12) -> bool:
        keys = set(self.coeffs) | set(other.coeffs)
        return all(abs(self.coeffs.get(k, 0.0) - other.coeffs.get(k, 0.0)) <= atol for k in keys)

    def __call__(self, points):
        """Evaluate at points of shape ``(..., n)``."""
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1])
        for a, c in self.coeffs.items():
            term = np.full(points.shape[:-1], c)
            for i, ai in enumerate(a):
                if ai:
                    term = term * hermite_poly(ai, 1.0, points[..., i])
            out = out + term
        return out

    def to_functional(self) -> Functional:
        X = coordinates(self.n)
        herm = {}

        def H(i, k):
            if (i, k) not in herm:
                herm[(i, k)] = hermite_poly(k, 1.0, X[i])
            return herm[(i, k)]

        out = Const(0.0)
        for a, c in sorted(self.coeffs.items()):
            term = Const(c)
            for i, ai in enumerate(a):
                if ai:
                    term = term * H(i, ai)
            out = out + term
        return out


def chaos_decompose(p: Functional, n: int | None = None) -> ChaosExpansion:
    """Exact Hermite-basis coefficients of a polynomial functional."""
    if not p.is_polynomial:
        raise NonPolynomialError("chaos decomposition needs a polynomial functional")
    n = max(p.n_vars, 1) if n is None else n
    poly = p.polynomial()
    out = defaultdict(float)
    for expo, c in poly.items():
        expo = tuple(expo) + (0,) * (n - len(expo))
        per_axis = [_monomial_to_hermite(k).items() for k in expo]
        for combo in itertools.product(*per_axis):
            a = tuple(j for j, _ in combo)
            w = 1
            for _, m in combo:
                w *= m
            out[a] += c * w
    return ChaosExpansion(n, out)


def apply_L(c: ChaosExpansion) -> ChaosExpansion:
    """``L F = sum_q (-q) J_q F``."""
    return c.scale_grades(lambda q: -float(q))


def apply_L_inverse(c: ChaosExpansion) -> ChaosExpansion:
    """``L^{-1} F = -sum_{q>=1} J_q F / q``; the mean is discarded."""
    return c.scale_grades(lambda q: -1.0 / q if q > 0 else 0.0)


def _kernel_order(k: np.ndarray) -> int:
    if k.ndim == 1:
        return 1
    if k.ndim == 2 and k.shape[0] == k.shape[1]:
        if not np.allclose(k, k.T, rtol=1e-10, atol=1e-14):
            raise ValueError("order-2 kernels must be symmetric matrices")
        return 2
    raise ValueError(f"kernel of shape {k.shape} is neither a vector nor a square matrix")


def contract(f, g, r: int):
    """``f (x)_r g`` for kernels given as vectors (order 1) or symmetric matrices (order 2)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    p, q = _kernel_order(f), _kernel_order(g)
    if f.shape[0] != g.shape[0]:
        raise ValueError(f"kernel dimensions differ: {f.shape[0]} vs {g.shape[0]}")
    if not 0 <= r <= min(p, q):
        raise ValueError(f"contraction order {r} outside [0, {min(p, q)}]")
    if r == 0:
        return np.multiply.outer(f, g)
    if r == 1:
        # contract the last slot of f with the first of g
        return np.tensordot(f, g, axes=([-1], [0]))
    return np.tensordot(f, g, axes=([0, 1], [0, 1]))
