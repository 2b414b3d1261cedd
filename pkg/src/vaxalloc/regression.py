"""Per-country linear risk models.

The model regresses the normalized risk metric on [1, death rate,
vaccination rate, hospital beds per thousand, human development index].
The last two features are constant within a country, hence collinear with
the intercept; a tiny ridge term on the normal-equations diagonal keeps the
solve total, and only the collapsed intercept (intercept plus the two
constant-feature terms) is treated as identified downstream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import EmptyInputError, RankDeficientError, SchemaError
from .ingest import CountryStatic
from .risk_metrics import FEATURES, RiskPanel

N_COLUMNS = 5  # [1, D, V, H, I]
DEFAULT_RIDGE_EPSILON = 1e-8

SPLIT_SCHEMES = ("chronological", "random")


@dataclass(frozen=True)
class DesignMatrix:
    """Day-by-day regression inputs: X = [1, D, V, H, I], target = normalized risk."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.X.shape[1] != N_COLUMNS:
            raise ValueError(f"design matrix must have {N_COLUMNS} columns")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("design matrix and target row counts differ")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


class FitMetrics(NamedTuple):
    mae: float
    mse: float
    r_squared: float  # NaN marks "undefined" (constant actual values)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    scheme: str = "chronological"
    seed: int = 0


@dataclass
class RiskModelFit:
    """Fitted coefficients, collapsed intercept, and evaluation metadata."""

    country_id: str
    beta0: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta0_tilde: float
    metrics: FitMetrics
    split: SplitSpec
    norm_params: dict[str, tuple[float, float]]

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2, self.beta3, self.beta4])


def build_design_matrix(panel: RiskPanel, static: CountryStatic) -> DesignMatrix:
    """Stack panel rows into the 5-column design matrix (target = normalized risk)."""
    n = len(panel)
    if n == 0:
        raise EmptyInputError(f"{panel.country_id}: empty panel")
    X = np.column_stack(
        [
            np.ones(n),
            panel.death_rate,
            panel.vacc_rate,
            np.full(n, float(static.hospital_beds_per_thousand)),
            np.full(n, float(static.human_development_index)),
        ]
    )
    return DesignMatrix(X=X, y=np.asarray(panel.risk, dtype=float))


def split_train_test(
    m: DesignMatrix,
    fraction: float = 0.7,
    scheme: str = "chronological",
    seed: int = 0,
) -> tuple[DesignMatrix, DesignMatrix]:
    """Split rows into train/test with round(fraction * n) training rows.

    The chronological scheme takes the earliest rows for training; the random
    scheme applies a seeded permutation (rows stay date-ordered within each
    side). Both sides always get at least one row.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"train fraction must lie in (0, 1), got {fraction}")
    n = m.n_rows
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    k = min(max(int(round(fraction * n)), 1), n - 1)
    if scheme == "chronological":
        train_idx = np.arange(k)
        test_idx = np.arange(k, n)
    elif scheme == "random":
        perm = np.random.default_rng(seed).permutation(n)
        train_idx = np.sort(perm[:k])
        test_idx = np.sort(perm[k:])
    else:
        raise ValueError(f"unknown split scheme {scheme!r} (use one of {SPLIT_SCHEMES})")
    return (
        DesignMatrix(X=m.X[train_idx], y=m.y[train_idx]),
        DesignMatrix(X=m.X[test_idx], y=m.y[test_idx]),
    )


def fit_ols(train: DesignMatrix, ridge_epsilon: float = DEFAULT_RIDGE_EPSILON) -> np.ndarray:
    """Least-squares coefficients via normal equations with a tiny ridge.

    Solves (X'X + eps*I) beta = X'y. The ridge makes the solve total under
    the intercept/constant-column collinearity; with the default epsilon the
    identified quantities (collapsed intercept and the two rate coefficients)
    are perturbed far below 1e-6.
    """
    if ridge_epsilon < 0:
        raise ValueError("ridge epsilon must be >= 0")
    X, y = train.X, train.y
    if np.unique(X, axis=0).shape[0] < N_COLUMNS:
        raise RankDeficientError(
            f"only {np.unique(X, axis=0).shape[0]} distinct observation rows for "
            f"{N_COLUMNS} coefficients; widen the analysis window"
        )
    gram = X.T @ X + ridge_epsilon * np.eye(N_COLUMNS)
    rhs = X.T @ y
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError(
            f"normal equations singular ({exc}); widen the analysis window "
            "or use a positive ridge epsilon"
        ) from exc


def predict(
    fit: RiskModelFit, death_rate, vacc_rate, hospital_beds, development_index
):
    """Evaluate the fitted linear model; inputs broadcast elementwise."""
    return (
        fit.beta0
        + fit.beta1 * np.asarray(death_rate, dtype=float)
        + fit.beta2 * np.asarray(vacc_rate, dtype=float)
        + fit.beta3 * np.asarray(hospital_beds, dtype=float)
        + fit.beta4 * np.asarray(development_index, dtype=float)
    )


def eval_metrics(pred, actual) -> FitMetrics:
    """MAE, MSE, and R² of predictions against actuals.

    R² is NaN when the actual values are constant (zero total variance), in
    which case the error metrics are still returned.
    """
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.size == 0:
        raise ValueError("pred and actual must be same-length non-empty sequences")
    err = p - a
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err**2))
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((a - np.mean(a)) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return FitMetrics(mae=mae, mse=mse, r_squared=r_squared)


def collapse_intercept(coefficients, static: CountryStatic) -> float:
    """Fold the constant-feature terms into the intercept.

    Returns beta0 + beta3 * hospital_beds + beta4 * development_index, the
    only intercept-like quantity identified under the within-country
    collinearity.
    """
    beta = np.asarray(coefficients, dtype=float)
    if beta.shape != (N_COLUMNS,):
        raise ValueError(f"expected {N_COLUMNS} coefficients, got shape {beta.shape}")
    return float(
        beta[0]
        + beta[3] * static.hospital_beds_per_thousand
        + beta[4] * static.human_development_index
    )


def residual_orthogonality(m: DesignMatrix, coefficients) -> float:
    """Scaled normal-equations residual ||X'(y - X beta)||_inf / max(1, ||X'y||_inf)."""
    beta = np.asarray(coefficients, dtype=float)
    resid = m.X.T @ (m.y - m.X @ beta)
    scale = max(1.0, float(np.max(np.abs(m.X.T @ m.y))))
    return float(np.max(np.abs(resid))) / scale


class RiskLinearRegression(RegressorMixin, BaseEstimator):
    """Ridge-stabilized least squares with the usual fit/predict surface.

    Accepts the four risk features [death rate, vaccination rate, hospital
    beds per thousand, development index] as columns of X; the intercept is
    added internally. Exposes ``coef_`` and ``intercept_`` so the model
    composes with standard tooling (pipelines, cloning, scoring).
    """

    def __init__(self, ridge_epsilon: float = DEFAULT_RIDGE_EPSILON):
        self.ridge_epsilon = ridge_epsilon

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != N_COLUMNS - 1:
            raise ValueError(f"expected {N_COLUMNS - 1} feature columns, got {X.shape[1]}")
        design = DesignMatrix(X=np.column_stack([np.ones(X.shape[0]), X]), y=y)
        beta = fit_ols(design, ridge_epsilon=self.ridge_epsilon)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_


def fit_country(
    panel: RiskPanel,
    static: CountryStatic,
    split: SplitSpec = SplitSpec(),
    ridge_epsilon: float = DEFAULT_RIDGE_EPSILON,
) -> RiskModelFit:
    """Full per-country pipeline: design matrix, split, fit, test metrics."""
    design = build_design_matrix(panel, static)
    train, test = split_train_test(
        design, fraction=split.train_fraction, scheme=split.scheme, seed=split.seed
    )
    beta = fit_ols(train, ridge_epsilon=ridge_epsilon)
    metrics = eval_metrics(test.X @ beta, test.y)
    return RiskModelFit(
        country_id=panel.country_id,
        beta0=float(beta[0]),
        beta1=float(beta[1]),
        beta2=float(beta[2]),
        beta3=float(beta[3]),
        beta4=float(beta[4]),
        beta0_tilde=collapse_intercept(beta, static),
        metrics=metrics,
        split=split,
        norm_params={f: tuple(panel.norm_params[f]) for f in FEATURES},
    )


def _fit_to_record(fit: RiskModelFit) -> dict:
    r2 = fit.metrics.r_squared
    return {
        "country_id": fit.country_id,
        "beta0": fit.beta0,
        "beta0_tilde": fit.beta0_tilde,
        "beta1": fit.beta1,
        "beta2": fit.beta2,
        "beta3": fit.beta3,
        "beta4": fit.beta4,
        "mae": fit.metrics.mae,
        "mse": fit.metrics.mse,
        "r_squared": None if math.isnan(r2) else r2,
        "norm_params": {f: list(fit.norm_params[f]) for f in FEATURES},
        "split": {
            "train_fraction": fit.split.train_fraction,
            "scheme": fit.split.scheme,
            "seed": fit.split.seed,
        },
    }


def _record_to_fit(rec: dict) -> RiskModelFit:
    try:
        r2 = rec["r_squared"]
        return RiskModelFit(
            country_id=rec["country_id"],
            beta0=float(rec["beta0"]),
            beta1=float(rec["beta1"]),
            beta2=float(rec["beta2"]),
            beta3=float(rec["beta3"]),
            beta4=float(rec["beta4"]),
            beta0_tilde=float(rec["beta0_tilde"]),
            metrics=FitMetrics(
                mae=float(rec["mae"]),
                mse=float(rec["mse"]),
                r_squared=math.nan if r2 is None else float(r2),
            ),
            split=SplitSpec(
                train_fraction=float(rec["split"]["train_fraction"]),
                scheme=str(rec["split"]["scheme"]),
                seed=int(rec["split"]["seed"]),
            ),
            norm_params={f: tuple(map(float, rec["norm_params"][f])) for f in FEATURES},
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed model record: {exc}") from exc


def write_model_file(fits: list[RiskModelFit], path) -> None:
    """Persist fits as a JSON array, one record per country, sorted by id."""
    records = [_fit_to_record(f) for f in sorted(fits, key=lambda f: f.country_id)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_model_file(path) -> list[RiskModelFit]:
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list) or not records:
        raise SchemaError(f"{path}: expected a non-empty JSON array of model records")
    return [_record_to_fit(r) for r in records]
