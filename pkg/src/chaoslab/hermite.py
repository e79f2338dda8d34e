"""Probabilists' Hermite polynomials, their generalized two-argument form, and
analytic derivatives of the centered normal density.

The generalized polynomial is ``H_k(lam, x) = lam**(k/2) * H_k(x / sqrt(lam))``,
which is a polynomial in both arguments:

    H_k(lam, x) = sum_i c[k, i] * x**(k - 2i) * lam**i

and therefore makes sense for any real ``lam``.  The public evaluator rejects
negative ``lam``; :func:`hermite_poly` is the unrestricted polynomial form used
by the Malliavin machinery, where the "variance" slot may be negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_ORDER = 16


def _check_order(k: int) -> int:
    k = int(k)
    if k < 0:
        raise ValueError(f"Hermite order must be nonnegative, got {k}")
    if k > MAX_ORDER:
        raise ValueError(f"Hermite order {k} exceeds the supported maximum {MAX_ORDER}")
    return k


@dataclass(frozen=True)
class HermiteCoeffs:
    """Exact integer coefficients ``c[k, i]`` of ``x**(k-2i)`` in ``H_k``."""

    order: int
    coeffs: tuple[int, ...]

    def __call__(self, x, lam=1.0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for i, c in enumerate(self.coeffs):
            out = out + c * x ** (self.order - 2 * i) * lam**i
        return out


def hermite_coeffs(k: int) -> HermiteCoeffs:
    """Closed coefficients ``c[k, i] = (-1)**i k! / (2**i i! (k-2i)!)``."""
    k = _check_order(k)
    coeffs = tuple(
        (-1) ** i * math.factorial(k) // (2**i * math.factorial(i) * math.factorial(k - 2 * i))
        for i in range(k // 2 + 1)
    )
    return HermiteCoeffs(k, coeffs)


def hermite_poly(k, lam, x):
    """``H_k(lam, x)`` via ``H_{j+1} = x H_j - j lam H_{j-1}`` for any real ``lam``.

    Works elementwise on arrays and on any object supporting ``+``, ``-``, ``*``
    with scalars (the jet type of :mod:`chaoslab.engine` included).
    """
    k = int(k)
    if k < 0:
        raise ValueError(f"Hermite order must be nonnegative, got {k}")
    if k == 0:
        return x * 0 + 1
    prev, cur = x * 0 + 1, x * 1
    for j in range(1, k):
        prev, cur = cur, x * cur - j * lam * prev
    return cur


def hermite_poly_dlambda(k, lam, x):
    """``d/dlam H_k(lam, x) = -k(k-1)/2 * H_{k-2}(lam, x)``."""
    k = int(k)
    if k < 2:
        return x * 0
    return -0.5 * k * (k - 1) * hermite_poly(k - 2, lam, x)


def hermite_eval(k: int, x):
    """Probabilists' Hermite polynomial ``H_k(x)``.

    >>> float(hermite_eval(3, 2.0))
    2.0
    """
    k = _check_order(k)
    return hermite_poly(k, 1.0, np.asarray(x, dtype=float))


def hermite_gen_eval(k: int, lam, x):
    """Generalized Hermite polynomial ``H_k(lam, x) = lam**(k/2) H_k(x/sqrt(lam))``.

    ``lam = 0`` is accepted and gives ``x**k``, the limit of the polynomial form.

    Raises
    ------
    ValueError
        If any ``lam`` is negative.
    """
    k = _check_order(k)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("generalized Hermite polynomial requires lam >= 0")
    return hermite_poly(k, lam, np.asarray(x, dtype=float))


def normal_density(x, sigma=1.0):
    """Density of ``N(0, sigma**2)``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


def normal_density_derivative(k: int, sigma, x):
    """k-th derivative of the ``N(0, sigma**2)`` density.

    Uses ``phi^(k)(x) = (-1)**k sigma**-k H_k(x/sigma) phi(x)``.
    """
    k = _check_order(k)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=float)
    return (-1) ** k * sigma ** (-k) * hermite_eval(k, x / sigma) * normal_density(x, sigma)


def hermite_table(kmax: int, lam: float, grid):
    """Rows ``(k, lam, x, H_k(lam, x))`` for ``k <= kmax`` over ``grid``."""
    grid = np.asarray(grid, dtype=float)
    rows = []
    for k in range(_check_order(kmax) + 1):
        vals = hermite_gen_eval(k, lam, grid)
        rows.extend((k, lam, float(x), float(v)) for x, v in zip(grid, vals))
    return rows
