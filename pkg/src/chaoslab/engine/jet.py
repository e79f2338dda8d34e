"""Dense truncated multivariate Taylor jets.

A jet of order ``r`` in ``N`` variables stores the normalized Taylor
coefficients ``c[alpha] = d^alpha f / alpha!`` for every multi-index with
``|alpha| <= r``.  Monomials are kept in graded order (all degree-0, then all
degree-1, ...), so truncating to a lower order is a prefix slice and every
lookup table built for order ``R`` serves all orders ``r <= R``.

Jets are batched: the coefficient array has shape ``batch_shape + (size,)`` so
one product evaluates the algebra at many base points at once.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from math import comb, factorial

import numpy as np

DEFAULT_MAX_COEFFS = 10**7
RECIPROCAL_GUARD = 1e-300


class SingularEvaluationError(ArithmeticError):
    """Division by a jet whose value part vanishes.

    ``mask`` flags the offending batch entries when the jet is batched.
    """

    def __init__(self, message, mask=None):
        super().__init__(message)
        self.mask = mask


class JetOrderError(ValueError):
    """Requested derivatives exceed the order carried by a jet."""


def _graded_monomials(n, order):
    monos = []
    for deg in range(order + 1):
        # descending lexicographic within a degree: x1^deg first
        for combo in itertools.combinations_with_replacement(range(n), deg):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            monos.append(tuple(alpha))
    return monos


class JetAlgebra:
    """Index tables for jets in ``n`` variables up to order ``order``."""

    def __init__(self, n: int, order: int, max_coeffs: int = DEFAULT_MAX_COEFFS):
        if n < 1 or order < 0:
            raise ValueError(f"invalid jet shape n={n}, order={order}")
        total = comb(n + order, order)
        if total > max_coeffs:
            raise MemoryError(
                f"jet table for n={n}, order={order} has {total} coefficients, "
                f"above the budget of {max_coeffs}"
            )
        self.n = n
        self.order = order
        monos = _graded_monomials(n, order)
        self.monomials = np.array(monos, dtype=np.int64).reshape(len(monos), n)
        self.degree = self.monomials.sum(axis=1)
        self.index = {m: k for k, m in enumerate(monos)}
        self._sizes = [comb(n + r, r) for r in range(order + 1)]
        self.factorials = np.array(
            [np.prod([factorial(a) for a in m]) for m in monos], dtype=float
        )
        self._build_product_table()
        self._build_derivative_tables()

    def size(self, r: int) -> int:
        return self._sizes[r]

    def _build_product_table(self):
        pi, pj, pk = [], [], []
        mono = self.monomials
        for i in range(len(mono)):
            di = self.degree[i]
            for j in range(self.size(self.order - di)):
                k = self.index[tuple(mono[i] + mono[j])]
                pi.append(i)
                pj.append(j)
                pk.append(k)
        pi, pj, pk = map(np.asarray, (pi, pj, pk))
        perm = np.lexsort((pj, pi, pk))
        self._pi, self._pj, self._pk = pi[perm], pj[perm], pk[perm]
        # segment starts for every output slot; (k, 0) always exists so no gaps
        self._starts = np.searchsorted(self._pk, np.arange(len(mono)))
        self._npairs = [int(np.searchsorted(self._pk, self.size(r))) for r in range(self.order + 1)]

    def _build_derivative_tables(self):
        self._dsrc = []
        self._dfac = []
        for i in range(self.n):
            if self.order == 0:
                self._dsrc.append(np.zeros(0, dtype=np.int64))
                self._dfac.append(np.zeros(0))
                continue
            low = self.monomials[: self.size(self.order - 1)]
            shifted = low.copy()
            shifted[:, i] += 1
            self._dsrc.append(np.array([self.index[tuple(m)] for m in shifted], dtype=np.int64))
            self._dfac.append(shifted[:, i].astype(float))

    def multiply(self, a: np.ndarray, b: np.ndarray, r: int) -> np.ndarray:
        npairs = self._npairs[r]
        # coefficient-major copies make the gathers contiguous row copies
        at = np.ascontiguousarray(np.moveaxis(a, -1, 0))
        bt = np.ascontiguousarray(np.moveaxis(b, -1, 0))
        vals = at[self._pi[:npairs]] * bt[self._pj[:npairs]]
        return np.moveaxis(np.add.reduceat(vals, self._starts[: self.size(r)], axis=0), 0, -1)

    def differentiate(self, a: np.ndarray, i: int, r: int) -> np.ndarray:
        m = self.size(r - 1)
        return a[..., self._dsrc[i][:m]] * self._dfac[i][:m]


@lru_cache(maxsize=32)
def jet_algebra(n: int, order: int, max_coeffs: int = DEFAULT_MAX_COEFFS) -> JetAlgebra:
    return JetAlgebra(n, order, max_coeffs)


class Jet:
    """Truncated Taylor expansion at a (batch of) base point(s)."""

    __array_priority__ = 100

    def __init__(self, algebra: JetAlgebra, order: int, coeffs):
        if order > algebra.order:
            raise JetOrderError(f"order {order} exceeds algebra order {algebra.order}")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != algebra.size(order):
            raise ValueError("coefficient table does not match jet order")
        self.algebra = algebra
        self.order = order
        self.coeffs = coeffs

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, algebra, order, value, batch_shape=()):
        c = np.zeros(tuple(batch_shape) + (algebra.size(order),))
        c[..., 0] = value
        return cls(algebra, order, c)

    @classmethod
    def variable(cls, algebra, order, i, values):
        values = np.asarray(values, dtype=float)
        c = np.zeros(values.shape + (algebra.size(order),))
        c[..., 0] = values
        if order >= 1:
            c[..., 1 + i] = 1.0
        return cls(algebra, order, c)

    # access ---------------------------------------------------------------
    @property
    def value(self):
        return self.coeffs[..., 0]

    @property
    def n(self):
        return self.algebra.n

    @property
    def batch_shape(self):
        return self.coeffs.shape[:-1]

    def partial(self, alpha) -> np.ndarray:
        """Mixed partial derivative ``d^alpha f`` at the base point(s)."""
        alpha = tuple(int(a) for a in alpha)
        if sum(alpha) > self.order:
            raise JetOrderError(f"derivative of order {sum(alpha)} requested from an order-{self.order} jet")
        k = self.algebra.index[alpha]
        return self.coeffs[..., k] * self.algebra.factorials[k]

    def gradient(self) -> np.ndarray:
        if self.order < 1:
            raise JetOrderError("gradient requires an order >= 1 jet")
        return self.coeffs[..., 1 : 1 + self.n].copy()

    def hessian(self) -> np.ndarray:
        if self.order < 2:
            raise JetOrderError("Hessian requires an order >= 2 jet")
        n = self.n
        out = np.empty(self.batch_shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                alpha = [0] * n
                alpha[i] += 1
                alpha[j] += 1
                out[..., i, j] = out[..., j, i] = self.partial(alpha)
        return out

    def truncate(self, r: int) -> Jet:
        if r > self.order:
            raise JetOrderError(f"cannot raise jet order from {self.order} to {r}")
        if r == self.order:
            return self
        return Jet(self.algebra, r, self.coeffs[..., : self.algebra.size(r)])

    def d(self, i: int) -> Jet:
        """Partial derivative in variable ``i``; the result has order one less."""
        if self.order < 1:
            raise JetOrderError("cannot differentiate an order-0 jet")
        return Jet(self.algebra, self.order - 1, self.algebra.differentiate(self.coeffs, i, self.order))

    # arithmetic -----------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            r = min(self.order, other.order)
            return self.truncate(r), other.truncate(r), r
        return self, None, self.order

    def __add__(self, other):
        a, b, r = self._coerce(other)
        if b is None:
            other = np.asarray(other, dtype=float)
            shape = np.broadcast_shapes(a.batch_shape, other.shape)
            c = np.broadcast_to(a.coeffs, shape + a.coeffs.shape[-1:]).copy()
            c[..., 0] += other
            return Jet(self.algebra, r, c)
        return Jet(self.algebra, r, a.coeffs + b.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.algebra, self.order, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a, b, r = self._coerce(other)
        if b is None:
            other = np.asarray(other, dtype=float)
            return Jet(self.algebra, r, a.coeffs * other[..., None])
        return Jet(self.algebra, r, self.algebra.multiply(a.coeffs, b.coeffs, r))

    __rmul__ = __mul__

    def reciprocal(self) -> Jet:
        a0 = self.value
        bad = ~(np.abs(a0) > RECIPROCAL_GUARD)
        if np.any(bad):
            raise SingularEvaluationError("division by a jet with vanishing value", mask=bad)
        inv0 = 1.0 / a0
        h = self * inv0 - 1.0  # nilpotent part, zero constant term
        s = Jet.constant(self.algebra, self.order, 1.0, self.batch_shape)
        for _ in range(self.order):
            s = 1.0 - h * s
        return s * inv0

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        other = np.asarray(other, dtype=float)
        if np.any(~(np.abs(other) > RECIPROCAL_GUARD)):
            raise SingularEvaluationError("division by zero")
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p: int):
        p = int(p)
        if p < 0:
            return self.reciprocal() ** (-p)
        result = Jet.constant(self.algebra, self.order, 1.0, self.batch_shape)
        base = self
        while p:
            if p & 1:
                result = result * base
            p >>= 1
            if p:
                base = base * base
        return result

    def __repr__(self):
        return f"Jet(n={self.n}, order={self.order}, batch={self.batch_shape})"
