"""Adaptive penalized-spline triangular transport maps for ensemble
conditioning, with smoothing parameters chosen per component by a
gradient-based information-criterion search."""

from .component import MapComponent, NotInvertibleError
from .lorenz63 import FilterRunResult, Lorenz63Params, run_filter
from .objective import DesignCache, FitReport, ModelTooComplexError, \
    adapt_lambdas, outer_objective
from .splines import DegenerateDimensionError, KnotVector, PenaltyMatrix, \
    SplineBasis, make_knots, make_penalty
from .tmap import Ensemble, MapFitConfig, TriangularMap, fit, permute_ensemble
from .wavy import ProfileResult, WavyConfig, profile_lambda, sample_wavy

__all__ = [
    "DegenerateDimensionError",
    "DesignCache",
    "Ensemble",
    "FilterRunResult",
    "FitReport",
    "KnotVector",
    "Lorenz63Params",
    "MapComponent",
    "MapFitConfig",
    "ModelTooComplexError",
    "NotInvertibleError",
    "PenaltyMatrix",
    "ProfileResult",
    "SplineBasis",
    "TriangularMap",
    "WavyConfig",
    "adapt_lambdas",
    "fit",
    "make_knots",
    "make_penalty",
    "outer_objective",
    "permute_ensemble",
    "profile_lambda",
    "run_filter",
    "sample_wavy",
]

__version__ = "0.1.0"
