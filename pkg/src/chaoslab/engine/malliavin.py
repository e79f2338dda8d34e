"""Malliavin calculus on R^N under the standard Gaussian measure.

The isonormal process is realized by N coordinates, so the derivative of a
functional is its gradient and the divergence of a vector field ``u`` is

    delta(u)(x) = sum_i u_i(x) x_i - sum_i d_i u_i(x).

Every operator below has a jet-level form (prefix ``jet_``) that consumes one
derivative order per application; the public functions evaluate a Functional
to a jet of sufficient order and then read off values.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..hermite import hermite_poly, hermite_poly_dlambda
from .chaos import ChaosExpansion, apply_L_inverse
from .functional import Functional
from .jet import Jet, JetOrderError

DEFAULT_ORDER = 6


def _point(point):
    point = np.asarray(point, dtype=float)
    if point.ndim == 0:
        point = point[None]
    return point


def _coordinate_jets(point, alg, order):
    return [Jet.variable(alg, order, i, point[..., i]) for i in range(alg.n)]


def jet_eval(f: Functional, point, order: int = DEFAULT_ORDER) -> Jet:
    """All mixed partials of ``f`` at ``point`` up to total order ``order``."""
    return f.jet(_point(point), order)


# jet-level operators ---------------------------------------------------------


def jet_gradient(F: Jet) -> list[Jet]:
    return [F.d(i) for i in range(F.n)]


def jet_directional(G: Jet, u: Sequence[Jet]) -> Jet:
    """``D_u G = <DG, u>``; one order lower than ``G``."""
    if G.order < 1:
        raise JetOrderError("directional derivative of an order-0 jet")
    out = None
    for i, ui in enumerate(u):
        term = G.d(i) * ui
        out = term if out is None else out + term
    return out


def jet_divergence(u: Sequence[Jet], x: Sequence[Jet]) -> Jet:
    """``delta(u) = sum u_i x_i - sum d_i u_i``; one order lower than ``u``."""
    out = None
    for i, ui in enumerate(u):
        term = ui * x[i] - ui.d(i)
        out = term if out is None else out + term
    return out


def jet_unit_direction(F: Jet) -> tuple[list[Jet], Jet]:
    """``u = DF / ||DF||^2`` and ``w = ||DF||^2``."""
    grad = jet_gradient(F)
    w = grad[0] * grad[0]
    for g in grad[1:]:
        w = w + g * g
    winv = w.reciprocal()
    return [g * winv for g in grad], w


class _Directional:
    """Shared state for the G_k / T_k recursions at a fixed point batch."""

    def __init__(self, F: Functional, point, order):
        point = _point(point)
        self.Fjet = F.jet(point, order)
        alg = self.Fjet.algebra
        self.x = _coordinate_jets(point, alg, order)
        self.u, self.w = jet_unit_direction(self.Fjet)
        self.delta = jet_divergence(self.u, self.x)
        self._powers = [self.delta]

    def d_u(self, G: Jet) -> Jet:
        return jet_directional(G, self.u)

    def du_delta(self, j: int) -> Jet:
        """``D_u^j delta_u`` (cached)."""
        while len(self._powers) <= j:
            self._powers.append(self.d_u(self._powers[-1]))
        return self._powers[j]


def malliavin_derivative(f: Functional, point) -> np.ndarray:
    """``DF`` at ``point``: the gradient vector."""
    return jet_eval(f, point, 1).gradient()


def divergence(u: Sequence[Functional], point) -> np.ndarray:
    """Pointwise divergence of the vector functional ``u``."""
    point = _point(point)
    if len(u) != point.shape[-1]:
        raise ValueError(f"vector field has {len(u)} components, point has {point.shape[-1]}")
    from .jet import jet_algebra

    alg = jet_algebra(point.shape[-1], 1)
    x = _coordinate_jets(point, alg, 1)
    uj = [ui.jet(point, 1, n=alg.n) for ui in u]
    return jet_divergence(uj, x).value


def iterated_directional(g: Functional, u: Sequence[Functional], k: int, point, order=None) -> np.ndarray:
    """``D_u^k g`` at ``point`` by ``k`` nested jet compositions."""
    point = _point(point)
    order = k if order is None else order
    if order < k:
        raise JetOrderError(f"D_u^{k} needs jets of order >= {k}, got {order}")
    gj = g.jet(point, order)
    uj = [ui.jet(point, order, n=gj.n) for ui in u]
    for _ in range(k):
        gj = jet_directional(gj, uj)
    return gj.value


def directional_delta(F: Functional, j: int, point, order=None) -> np.ndarray:
    """``D_u^j delta_u`` with ``u = DF/||DF||^2``."""
    order = j + 2 if order is None else order
    return _Directional(F, point, order).du_delta(j).value


def _check_order(m, order):
    if order < m + 2:
        raise JetOrderError(f"G_0..G_{m + 1} need jets of order >= {m + 2}, got {order}")


def gk_sequence(F: Functional, m: int, point, order=None) -> list[np.ndarray]:
    """``G_0 .. G_{m+1}`` with ``G_{k+1} = G_k delta_u - D_u G_k``."""
    order = m + 2 if order is None else order
    _check_order(m, order)
    st = _Directional(F, point, order)
    G = [Jet.constant(st.Fjet.algebra, order, 1.0, st.Fjet.batch_shape)]
    for _ in range(m + 1):
        G.append(G[-1] * st.delta - st.d_u(G[-1]))
    return [g.value for g in G]


def _tk_jets(st: _Directional, m: int) -> list[Jet]:
    lam = st.du_delta(1)
    zero = st.delta * 0.0
    T = [None, zero, zero]  # T[0] unused, T_1 = T_2 = 0
    for k in range(2, m + 1):
        T.append(
            st.delta * T[k]
            - st.d_u(T[k])
            - hermite_poly_dlambda(k, lam, st.delta) * st.du_delta(2)
        )
    return T[1 : m + 2]


def tk_sequence(F: Functional, m: int, point, order=None) -> list[np.ndarray]:
    """``T_1 .. T_{m+1}`` from ``T_{k+1} = delta_u T_k - D_u T_k - d_lam H_k * D_u^2 delta_u``."""
    order = m + 2 if order is None else order
    _check_order(m, order)
    st = _Directional(F, point, order)
    return [t.value for t in _tk_jets(st, m)]


def gk_identity_residual(F: Functional, m: int, point, order=None) -> np.ndarray:
    """``G_k - H_k(D_u delta_u, delta_u) - T_k`` for ``k = 1 .. m+1``.

    Returns an array of shape ``(m+1,) + batch_shape``.
    """
    order = m + 2 if order is None else order
    _check_order(m, order)
    st = _Directional(F, point, order)
    G = [Jet.constant(st.Fjet.algebra, order, 1.0, st.Fjet.batch_shape)]
    for _ in range(m + 1):
        G.append(G[-1] * st.delta - st.d_u(G[-1]))
    T = _tk_jets(st, m)
    lam = st.du_delta(1).value
    x = st.delta.value
    return np.array(
        [G[k].value - hermite_poly(k, lam, x) - T[k - 1].value for k in range(1, m + 2)]
    )


# chaos-level helpers -----------------------------------------------------------


def pseudo_direction(F: ChaosExpansion) -> Functional:
    """``-L^{-1} F`` as a functional (its gradient is ``-D L^{-1} F``)."""
    return (apply_L_inverse(F) * -1.0).to_functional()


def jet_wbar_direction(F: Functional, G: Functional, point, order: int):
    """Jets for ``wbar = <DF, DG>`` and ``ubar = DG / wbar`` with ``G = -L^{-1}F``."""
    point = _point(point)
    Fj = F.jet(point, order)
    Gj = G.jet(point, order, n=Fj.n)
    dF, dG = jet_gradient(Fj), jet_gradient(Gj)
    wbar = dF[0] * dG[0]
    for a, b in zip(dF[1:], dG[1:]):
        wbar = wbar + a * b
    inv = wbar.reciprocal()
    return Fj, wbar, [g * inv for g in dG]
