"""Polynomialization-based observable construction for Koopman analysis.

Lifts nonpolynomial ODE systems into exact polynomial form via
Lie-derivative auxiliary variables, builds EDMD observable dictionaries from
the lift, approximates the Koopman spectrum, and runs a Kalman filter on the
lifted state for nonlinear estimation.  Ships a single-machine infinite-bus
power-system benchmark exercising the full pipeline.
"""

from ._backend import backend_name
from .expr import Expr, parse
from .polylift import (
    LiftedSystem,
    ObservableSet,
    OdeSystem,
    lie_derivative,
    lift,
    monomial_dictionary,
    observables_from_lift,
    rbf_dictionary,
)

__all__ = [
    "Expr",
    "LiftedSystem",
    "ObservableSet",
    "OdeSystem",
    "backend_name",
    "lie_derivative",
    "lift",
    "monomial_dictionary",
    "observables_from_lift",
    "parse",
    "rbf_dictionary",
]

__version__ = "0.1.0"
