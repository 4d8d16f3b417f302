"""Drift and diffusion estimation for coarse-grained SDEs from one multiscale time series.

The public surface is re-exported here; the numeric kernels live in
:mod:`coarsegrain.kernels` and switch between numba and numpy through the
``COARSEGRAIN_DISABLE_NUMBA`` environment variable.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BASES,
    EstimationError,
    EstimationResult,
    EstimatorConfig,
    Parametrization,
    TimeSeries,
    TrialPoints,
    generator_action,
    named_basis,
    phi,
    phi_prime,
)
from .estimator import (  # noqa: E402
    LinearSystem,
    assemble_row,
    assemble_system,
    estimate,
    estimate_coupled,
    min_norm_least_squares,
    sweep_t,
    trapezoid,
)
from .regression import (  # noqa: E402
    LaggedRegression,
    conditional_expectation,
    conditional_expectation_coupled,
    gaussian_kernel,
    lscv_bandwidth,
    nwe,
)
from .trialpoints import empirical_quantile, gaussian_mapped  # noqa: E402
