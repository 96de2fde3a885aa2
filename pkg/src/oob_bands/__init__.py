"""Random forest regression with OOB residual variance estimation,
prediction intervals, and a Monte Carlo coverage harness."""

from ._backend import BACKEND, available_backends
from .distributions import (
    covariance_matrix,
    estimate_signal_variance,
    gaussian_copula_sample,
    normal_quantile,
    regression_value,
    regression_values,
    residual_params_from_sigma2,
    sample_residuals,
    t_quantile,
)
from .forest import (
    BOOTSTRAP,
    SUBSAMPLE,
    BagMask,
    Forest,
    ForestConfig,
    OobResiduals,
    Tree,
    build_forest,
    build_tree,
    forest_from_dict,
    forest_to_dict,
    leaf_weights,
    load_forest,
    oob_exclusion_probability,
    oob_predictions,
    oob_residuals,
    predict_forest,
    predict_forest_batch,
    predict_oob,
    predict_tree,
    save_forest,
)
from .intervals import (
    ConditionalCdf,
    PredictionInterval,
    empirical_quantile,
    nonparametric_interval,
    ols_interval,
    parametric_interval,
    qrf_cdf,
    qrf_interval,
    qrf_quantile,
)
from .simulation import (
    CoverageReport,
    ScenarioConfig,
    coverage_type1,
    coverage_type2,
    coverage_type3,
    coverage_type4,
    generate_dataset,
    run_grid,
)
from .variance import (
    VarianceEstimate,
    sigma2_centered_sample,
    sigma2_corrected,
    sigma2_simple,
    sigma2_weighted,
)

__version__ = "0.1.0"
