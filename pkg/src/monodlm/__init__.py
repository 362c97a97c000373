"""Dynamic ratings from scored games through a learned monotone transformation.

Scores are mapped to a model scale by a nonnegative I-spline combination,
then abilities follow a Gaussian random walk tracked by a conjugate Kalman
filter and RTS smoother.  The transformation weights and the innovation ratio
are estimated by maximizing their marginal posterior.
"""

from .dlm_filter import FilterState, Hyperparams, rts_smooth, run_filter
from .fitting import FittedModel, fast_update, fit_map
from .preprocess import Dataset, RawResult, assign_rating_periods
from .simulation import SimConfig, simulate_dataset
from .spline_basis import KnotConfig, TransformParams, make_knot_config

__version__ = "0.1.0"

__all__ = ["Dataset", "FilterState", "FittedModel", "Hyperparams",
           "KnotConfig", "RawResult", "SimConfig", "TransformParams",
           "assign_rating_periods", "fast_update", "fit_map",
           "make_knot_config", "rts_smooth", "run_filter", "simulate_dataset"]
