"""Expression trees over Gaussian coordinates ``X_0 .. X_{N-1}``.

Functionals are immutable.  They are built with ordinary Python operators::

    X = coordinates(2)
    F = 1.0 * (X[0] ** 2 - 1) + 0.5 * (X[1] ** 2 - 1)

and evaluated either to plain values or to jets carrying all mixed partials.
"""

from __future__ import annotations

from collections import defaultdict
from numbers import Real

import numpy as np

from .jet import Jet, jet_algebra


class NonPolynomialError(ValueError):
    """A polynomial operation met a division node."""


class Functional:
    __slots__ = ()
    n_vars = 0

    # operator sugar ---------------------------------------------------------
    def __add__(self, other):
        return Add(self, as_functional(other))

    def __radd__(self, other):
        return Add(as_functional(other), self)

    def __sub__(self, other):
        return Add(self, Neg(as_functional(other)))

    def __rsub__(self, other):
        return Add(as_functional(other), Neg(self))

    def __mul__(self, other):
        return Mul(self, as_functional(other))

    def __rmul__(self, other):
        return Mul(as_functional(other), self)

    def __truediv__(self, other):
        return Div(self, as_functional(other))

    def __rtruediv__(self, other):
        return Div(as_functional(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, p):
        if int(p) != p:
            raise TypeError("only integer powers are supported")
        return Pow(self, int(p))

    # evaluation ---------------------------------------------------------------
    def jet(self, point, order: int, n: int | None = None) -> Jet:
        """Jet of this functional at ``point`` (shape ``(..., N)``)."""
        point = np.asarray(point, dtype=float)
        n = point.shape[-1] if n is None else n
        if self.n_vars > n:
            raise ValueError(f"functional uses {self.n_vars} coordinates but the point has {n}")
        alg = jet_algebra(n, order)
        cache = {}
        return self._jet(point, alg, order, cache)

    def __call__(self, point):
        """Plain value; same as the order-0 jet value."""
        return self.jet(point, 0).value

    def polynomial(self) -> dict:
        """Expand into ``{exponent tuple: coefficient}``; raises on division."""
        return self._poly(max(self.n_vars, 1), {})

    @property
    def is_polynomial(self) -> bool:
        return not any(isinstance(node, Div) for node in self._walk())

    def _walk(self):
        seen, stack = set(), [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            yield node
            stack.extend(node._children())

    def _children(self):
        return ()


def _cached(method):
    def wrapper(self, point, alg, order, cache):
        key = id(self)
        if key not in cache:
            cache[key] = method(self, point, alg, order, cache)
        return cache[key]

    return wrapper


class Const(Functional):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    @_cached
    def _jet(self, point, alg, order, cache):
        return Jet.constant(alg, order, self.value, point.shape[:-1])

    def _poly(self, n, memo):
        return {(0,) * n: self.value} if self.value != 0 else {}

    def __repr__(self):
        return repr(self.value)


class Coord(Functional):
    __slots__ = ("i",)

    def __init__(self, i: int):
        self.i = int(i)

    @property
    def n_vars(self):
        return self.i + 1

    @_cached
    def _jet(self, point, alg, order, cache):
        return Jet.variable(alg, order, self.i, point[..., self.i])

    def _poly(self, n, memo):
        e = [0] * n
        e[self.i] = 1
        return {tuple(e): 1.0}

    def __repr__(self):
        return f"X{self.i}"


class _Binary(Functional):
    __slots__ = ("a", "b", "_n")

    def __init__(self, a, b):
        self.a, self.b = a, b
        self._n = max(a.n_vars, b.n_vars)

    @property
    def n_vars(self):
        return self._n

    def _children(self):
        return (self.a, self.b)


class Add(_Binary):
    @_cached
    def _jet(self, point, alg, order, cache):
        return self.a._jet(point, alg, order, cache) + self.b._jet(point, alg, order, cache)

    def _poly(self, n, memo):
        out = defaultdict(float, self.a._poly(n, memo))
        for e, c in self.b._poly(n, memo).items():
            out[e] += c
        return {e: c for e, c in out.items() if c != 0}

    def __repr__(self):
        return f"({self.a!r} + {self.b!r})"


class Mul(_Binary):
    @_cached
    def _jet(self, point, alg, order, cache):
        return self.a._jet(point, alg, order, cache) * self.b._jet(point, alg, order, cache)

    def _poly(self, n, memo):
        return _poly_mul(self.a._poly(n, memo), self.b._poly(n, memo))

    def __repr__(self):
        return f"({self.a!r} * {self.b!r})"


class Div(_Binary):
    """Quotient node; evaluation guards against a vanishing denominator."""

    @_cached
    def _jet(self, point, alg, order, cache):
        return self.a._jet(point, alg, order, cache) / self.b._jet(point, alg, order, cache)

    def _poly(self, n, memo):
        raise NonPolynomialError("functional contains a division node")

    def __repr__(self):
        return f"({self.a!r} / {self.b!r})"


class Neg(Functional):
    __slots__ = ("a",)

    def __init__(self, a):
        self.a = a

    @property
    def n_vars(self):
        return self.a.n_vars

    def _children(self):
        return (self.a,)

    @_cached
    def _jet(self, point, alg, order, cache):
        return -self.a._jet(point, alg, order, cache)

    def _poly(self, n, memo):
        return {e: -c for e, c in self.a._poly(n, memo).items()}

    def __repr__(self):
        return f"-{self.a!r}"


class Pow(Functional):
    __slots__ = ("a", "p")

    def __init__(self, a, p: int):
        self.a, self.p = a, p

    @property
    def n_vars(self):
        return self.a.n_vars

    def _children(self):
        return (self.a,)

    @_cached
    def _jet(self, point, alg, order, cache):
        return self.a._jet(point, alg, order, cache) ** self.p

    def _poly(self, n, memo):
        if self.p < 0:
            raise NonPolynomialError("negative power in a polynomial functional")
        base = self.a._poly(n, memo)
        out = {(0,) * n: 1.0}
        for _ in range(self.p):
            out = _poly_mul(out, base)
        return out

    def __repr__(self):
        return f"{self.a!r}**{self.p}"


def _poly_mul(p, q):
    out = defaultdict(float)
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            n = max(len(e1), len(e2))
            e = tuple(
                (e1[i] if i < len(e1) else 0) + (e2[i] if i < len(e2) else 0) for i in range(n)
            )
            out[e] += c1 * c2
    return {e: c for e, c in out.items() if c != 0}


def as_functional(x) -> Functional:
    if isinstance(x, Functional):
        return x
    if isinstance(x, (Real, np.floating, np.integer)):
        return Const(x)
    raise TypeError(f"cannot convert {type(x).__name__} to a Functional")


def coordinates(n: int) -> list[Coord]:
    return [Coord(i) for i in range(n)]


def linear(h) -> Functional:
    """First-chaos variable ``I_1(h) = sum_i h_i X_i``."""
    X = coordinates(len(h))
    out = Const(0.0)
    for hi, xi in zip(h, X):
        if hi != 0:
            out = out + float(hi) * xi
    return out


def second_chaos(lams) -> Functional:
    """Diagonal second-chaos variable ``sum_i lam_i (X_i**2 - 1)``."""
    X = coordinates(len(lams))
    out = Const(0.0)
    for li, xi in zip(lams, X):
        out = out + float(li) * (xi**2 - 1.0)
    return out
