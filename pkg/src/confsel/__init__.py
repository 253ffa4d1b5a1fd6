"""Width-optimal selection among split-conformal prediction sets.

Calibrate a menu of nested-set families on held-out data and keep either the
narrowest set (efficiency-first, exact width optimality) or a recalibrated
version of it (validity-first, exact finite-sample coverage). Includes
specialized selectors for ridge penalty paths and bounded linear predictors,
kernel-density / k-NN-quantile candidate builders, the classical linear
baselines, synthetic heavy-tailed generators, and a Monte Carlo harness.
"""

from .conformal import (
    CalibrationResult,
    CoverageReport,
    SelectionResult,
    conformal_quantile,
    conformal_rank,
    efcp,
    efcp_slack,
    evaluate_coverage,
    vfcp,
)
from .data import (
    Dataset,
    SplitPlan,
    SyntheticConfig,
    equicorrelation,
    gen_linear_t,
    gen_nonlinear_poisson,
    load_csv,
    modular_coefficients,
    rng_stream,
    sample_mvt,
    split,
)
from .errors import ConfigError, CsvParseError, NumericError, WidthUnsupportedError
from .estimators import (
    BaselineInterval,
    KdeModel,
    KnnQuantileModel,
    cqr_beta_grid,
    kde_eval,
    kde_fit,
    knn_quantile_fit,
    knn_quantile_pair,
    linear_gaussian_interval,
    naive_interval,
    predict_quantile,
)
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    emit_csv,
    emit_plot,
    load_report_csv,
    run_experiment,
)
from .families import (
    NestedFamily,
    PredictionSet,
    QuantilePair,
    cqr_family,
    density_level_family,
    fixed_width_family,
    linear_theta_family,
)
from .linear import (
    LinearSelection,
    ThetaDomain,
    aggregate_features,
    ef_lin,
    grid_search_theta,
    select_theta,
    t_alpha_theta,
    vf_lin,
)
from .ridge import (
    PopulationOracle,
    RidgeBoundReport,
    RidgePath,
    RidgeSelection,
    check_ridge_error_bound,
    default_lambda_grid,
    ef_ridge,
    fit_ridge_path,
    select_lambda,
    vf_ridge,
    whitened_covariance_error,
)

__version__ = "0.1.0"
