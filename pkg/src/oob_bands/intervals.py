"""The prediction interval constructions.

Five forest-based intervals (three parametric ones driven by the residual
variance estimators, one from empirical OOB residual quantiles, one from
the forest-weighted conditional CDF) plus the classical least-squares
interval used as a baseline.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import normal_quantile, t_quantile
from .forest import Forest, OobResiduals, leaf_weights, predict_forest
from .variance import CENTERED_SAMPLE, M_CORRECTED, SIMPLE, WEIGHTED, VarianceEstimate

PRF = "prf"
PRF_MCOR = "prf-mcor"
PRF_W = "prf-w"
NP_EQ = "np-eq"
QRF = "qrf"
OLS = "ols"
INTERVAL_METHODS = (PRF, PRF_MCOR, PRF_W, NP_EQ, QRF, OLS)

_METHOD_FOR_VARIANCE = {
    SIMPLE: PRF,
    M_CORRECTED: PRF_MCOR,
    WEIGHTED: PRF_W,
    CENTERED_SAMPLE: PRF,
}

# guard against float fuzz when alpha*n sits on an integer (0.07*100 -> 7.000…1)
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    alpha: float
    method: str
    point_prediction: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError("interval bounds out of order")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class ConditionalCdf:
    """Right-continuous step CDF on a sorted support."""

    support: np.ndarray
    cum_weights: np.ndarray

    def __post_init__(self):
        self.support.setflags(write=False)
        self.cum_weights.setflags(write=False)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")


def parametric_interval(point_pred: float, sigma2: VarianceEstimate,
                        alpha: float) -> PredictionInterval:
    """Symmetric normal-quantile interval point +- z_{1-alpha/2} * sigma."""
    _check_alpha(alpha)
    if sigma2.value < 0.0:
        raise ValueError("sigma2 must be non-negative")
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(sigma2.value)
    method = _METHOD_FOR_VARIANCE.get(sigma2.method, PRF)
    return PredictionInterval(point_pred - half, point_pred + half, alpha,
                              method, point_pred)


def empirical_quantile(residuals, alpha: float) -> float:
    """ceil(alpha * n)-th order statistic (1-indexed) of the residuals."""
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("residuals must be non-empty")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    k = math.ceil(alpha * r.size - _CEIL_EPS)
    k = min(max(k, 1), r.size)
    return float(np.partition(r, k - 1)[k - 1])


def nonparametric_interval(point_pred: float, residuals: OobResiduals,
                           alpha: float) -> PredictionInterval:
    """Interval shifted by the empirical OOB-residual quantiles."""
    _check_alpha(alpha)
    r = residuals.valid_residuals()
    if r.size == 0:
        raise ValueError("no valid out-of-bag residuals")
    if r.size < math.ceil(2.0 / alpha):
        warnings.warn(
            f"only {r.size} OOB residuals for alpha={alpha}; "
            "the lower quantile degenerates to the minimum",
            stacklevel=2,
        )
    lower = point_pred + empirical_quantile(r, alpha / 2.0)
    upper = point_pred + empirical_quantile(r, 1.0 - alpha / 2.0)
    return PredictionInterval(lower, upper, alpha, NP_EQ, point_pred)


def qrf_cdf(forest: Forest, data, x) -> ConditionalCdf:
    """Forest-weighted conditional CDF of the response at x."""
    _X, y = data
    y = np.asarray(y, dtype=np.float64)
    w = leaf_weights(forest, x)
    support, inverse = np.unique(y, return_inverse=True)
    mass = np.bincount(inverse, weights=w, minlength=support.size)
    return ConditionalCdf(support=support, cum_weights=np.cumsum(mass))


def qrf_quantile(cdf: ConditionalCdf, alpha: float) -> float:
    """Smallest support point whose cumulative weight reaches alpha."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    idx = int(np.searchsorted(cdf.cum_weights, alpha - _CEIL_EPS, side="left"))
    idx = min(idx, cdf.support.size - 1)
    return float(cdf.support[idx])


def qrf_interval(forest: Forest, data, x, alpha: float) -> PredictionInterval:
    """Quantile-forest interval [Q(alpha/2), Q(1 - alpha/2)] at x."""
    _check_alpha(alpha)
    cdf = qrf_cdf(forest, data, x)
    lower = qrf_quantile(cdf, alpha / 2.0)
    upper = qrf_quantile(cdf, 1.0 - alpha / 2.0)
    return PredictionInterval(lower, upper, alpha, QRF, predict_forest(forest, x))


@dataclass(frozen=True)
class OlsFit:
    """Least-squares fit artifacts reusable across query points."""

    beta: np.ndarray
    xtx: np.ndarray
    sigma2: float
    df_resid: int


def ols_fit(X, y) -> OlsFit:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    design = np.column_stack([np.ones(n), X])
    rank = int(np.linalg.matrix_rank(design))
    if rank < design.shape[1]:
        raise ValueError("design matrix is rank deficient")
    if n <= rank:
        raise ValueError(f"need more than {rank} rows, got {n}")
    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    sigma2 = float(resid @ resid) / (n - rank)
    return OlsFit(beta=beta, xtx=design.T @ design, sigma2=sigma2,
                  df_resid=n - rank)


def ols_interval_from_fit(fit: OlsFit, x0, alpha: float) -> PredictionInterval:
    _check_alpha(alpha)
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    xd = np.concatenate([[1.0], x0])
    point = float(xd @ fit.beta)
    leverage = float(xd @ np.linalg.solve(fit.xtx, xd))
    half = t_quantile(1.0 - alpha / 2.0, fit.df_resid) * math.sqrt(
        fit.sigma2 * (1.0 + leverage)
    )
    return PredictionInterval(point - half, point + half, alpha, OLS, point)


def ols_interval(X, y, x0, alpha: float) -> PredictionInterval:
    """Classical t prediction interval of a linear model with intercept."""
    return ols_interval_from_fit(ols_fit(X, y), x0, alpha)
