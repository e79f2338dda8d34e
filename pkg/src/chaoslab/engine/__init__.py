"""Finite-dimensional Malliavin calculus: jets, functionals, chaos expansions."""

from .chaos import ChaosExpansion, apply_L, apply_L_inverse, chaos_decompose, contract
from .functional import (
    Const,
    Coord,
    Functional,
    NonPolynomialError,
    as_functional,
    coordinates,
    linear,
    second_chaos,
)
from .jet import Jet, JetAlgebra, JetOrderError, SingularEvaluationError, jet_algebra
from .malliavin import (
    directional_delta,
    divergence,
    gk_identity_residual,
    gk_sequence,
    iterated_directional,
    jet_eval,
    malliavin_derivative,
    tk_sequence,
)

__all__ = [
    "ChaosExpansion",
    "Const",
    "Coord",
    "Functional",
    "Jet",
    "JetAlgebra",
    "JetOrderError",
    "NonPolynomialError",
    "SingularEvaluationError",
    "apply_L",
    "apply_L_inverse",
    "as_functional",
    "chaos_decompose",
    "contract",
    "coordinates",
    "directional_delta",
    "divergence",
    "gk_identity_residual",
    "gk_sequence",
    "iterated_directional",
    "jet_algebra",
    "jet_eval",
    "linear",
    "malliavin_derivative",
    "second_chaos",
    "tk_sequence",
]
