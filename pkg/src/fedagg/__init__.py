"""Rate-distortion analysis and optimization for federated model aggregation."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    GaussianSourceModel,
    MbtcParams,
    RateBudget,
    RdTuple,
    SymmetricSourceModel,
    empirical_covariance,
    symmetric_covariance,
    validate_psd,
)
from .region import (  # noqa: F401
    cond_mutual_info,
    distortion,
    evaluate_region,
    is_feasible,
    mmse_combiner,
    single_source_rd,
    sum_mutual_info,
)
