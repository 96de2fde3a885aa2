"""Residual variance estimators computed from out-of-bag residuals.

Three estimators share one container: the plain mean of squared OOB
residuals, a finite-ensemble corrected version that subtracts (inside an
absolute value) the bias bound 8/M * (max|oob prediction|^2 +
sigma2*(1 + 4 log n)), and a convex combination of the two.
"""

import math
from dataclasses import dataclass

import numpy as np

from .forest import OobResiduals

SIMPLE = "simple"
M_CORRECTED = "m-corrected"
WEIGHTED = "weighted"
CENTERED_SAMPLE = "centered-sample"


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    n_used: int
    correction_term: float | None = None

    def __post_init__(self):
        if self.value < 0.0:
            raise ValueError("variance estimate must be non-negative")
        if self.n_used < 1:
            raise ValueError("n_used must be >= 1")


def _valid_residuals(residuals: OobResiduals) -> np.ndarray:
    r = residuals.valid_residuals()
    if r.size == 0:
        raise ValueError("no valid out-of-bag residuals")
    return r


def sigma2_simple(residuals: OobResiduals) -> VarianceEstimate:
    """Mean of squared valid OOB residuals (no centering)."""
    r = _valid_residuals(residuals)
    return VarianceEstimate(float(np.mean(r * r)), SIMPLE, r.size)


def correction_term(sigma2: float, oob_predictions, num_trees: int, n: int) -> float:
    """Finite-ensemble bias bound 8/M * (max|pred|^2 + sigma2*(1+4 log n))."""
    if num_trees < 1:
        raise ValueError("num_trees must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    preds = np.asarray(oob_predictions, dtype=np.float64)
    preds = preds[np.isfinite(preds)]
    if preds.size == 0:
        raise ValueError("no out-of-bag predictions available")
    max_abs = float(np.max(np.abs(preds)))
    return (8.0 / num_trees) * (max_abs ** 2 + sigma2 * (1.0 + 4.0 * math.log(n)))


def sigma2_corrected(residuals: OobResiduals, oob_predictions,
                     num_trees: int, n: int) -> VarianceEstimate:
    """|sigma2_simple - C| with C the finite-ensemble correction term.

    n is the full training size (the bound is stated in n, not in the
    number of OOB-covered rows).
    """
    simple = sigma2_simple(residuals)
    c = correction_term(simple.value, oob_predictions, num_trees, n)
    return VarianceEstimate(abs(simple.value - c), M_CORRECTED, simple.n_used, c)


def sigma2_weighted(simple: VarianceEstimate, corrected: VarianceEstimate,
                    lambda1: float = 0.5) -> VarianceEstimate:
    """Convex combination lambda1*corrected + (1-lambda1)*simple."""
    if not 0.0 < lambda1 < 1.0:
        raise ValueError(f"lambda1 must be in (0, 1), got {lambda1}")
    value = lambda1 * corrected.value + (1.0 - lambda1) * simple.value
    return VarianceEstimate(value, WEIGHTED, simple.n_used, corrected.correction_term)


def sigma2_centered_sample(residuals: OobResiduals) -> VarianceEstimate:
    """Centered sample variance of the valid OOB residuals (divisor n-1)."""
    r = _valid_residuals(residuals)
    if r.size < 2:
        raise ValueError("need at least 2 valid residuals for a centered variance")
    return VarianceEstimate(float(np.var(r, ddof=1)), CENTERED_SAMPLE, r.size)
