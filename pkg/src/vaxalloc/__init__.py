"""Pandemic risk metrics, per-country linear risk models, and
fairness-weighted vaccine allocation planning."""

from .allocator import (
    AllocationProblem,
    AllocationResult,
    CountryTerm,
    SolverConfig,
    SweepEntry,
    build_problem,
    fairness_gradient,
    jain_index,
    objective_value,
    project_feasible,
    risk_reduction,
    round_doses,
    solve_op_fair,
    solve_op_greedy,
    sweep_omega,
)
from .config import RunConfig, derive_seed
from .errors import (
    DataError,
    DataQualityWarning,
    EmptyInputError,
    InfeasibleProblemError,
    RankDeficientError,
    SchemaError,
    ValidationError,
)
from .ingest import (
    CountrySeries,
    CountryStatic,
    DailyRecord,
    attach_static,
    clean_series,
    clean_series_with_stats,
    filter_window,
    parse_country_csv,
    parse_static_attributes,
)
from .regression import (
    DesignMatrix,
    FitMetrics,
    RiskLinearRegression,
    RiskModelFit,
    SplitSpec,
    build_design_matrix,
    collapse_intercept,
    eval_metrics,
    fit_country,
    fit_ols,
    predict,
    read_model_file,
    split_train_test,
    write_model_file,
)
from .risk_metrics import (
    RiskPanel,
    build_panel,
    denormalize,
    global_norm_params,
    min_max_normalize,
    rate_series,
    read_panel_csv,
    risk_series,
    write_panel_csv,
)

__version__ = "0.1.0"
