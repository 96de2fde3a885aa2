"""Distributional machinery for the simulation scenarios.

Covers the normal/t quantile functions used by the interval constructions,
residual samplers parameterized by a target variance (derived from a
signal-to-noise ratio), the Gaussian-copula feature generator with its
covariance constructors, and the four benchmark regression functions.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, stdtrit

logger = logging.getLogger("oob_bands")

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation of the inverse normal CDF; a Halley
# refinement against erfc brings it to near machine precision.
_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)


def normal_cdf(x: float) -> float:
    """Standard normal distribution function."""
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_quantile(prob: float) -> float:
    """Inverse standard normal CDF, absolute error well below 1e-8."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"prob must be in (0, 1), got {prob}")
    p_low = 0.02425
    if prob < p_low:
        q = math.sqrt(-2.0 * math.log(prob))
        x = ((((((_ACK_C[0] * q + _ACK_C[1]) * q + _ACK_C[2]) * q + _ACK_C[3]) * q
              + _ACK_C[4]) * q + _ACK_C[5])
             / ((((_ACK_D[0] * q + _ACK_D[1]) * q + _ACK_D[2]) * q + _ACK_D[3]) * q + 1.0))
    elif prob <= 1.0 - p_low:
        q = prob - 0.5
        r = q * q
        x = ((((((_ACK_A[0] * r + _ACK_A[1]) * r + _ACK_A[2]) * r + _ACK_A[3]) * r
              + _ACK_A[4]) * r + _ACK_A[5]) * q
             / (((((_ACK_B[0] * r + _ACK_B[1]) * r + _ACK_B[2]) * r + _ACK_B[3]) * r
                + _ACK_B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - prob))
        x = -((((((_ACK_C[0] * q + _ACK_C[1]) * q + _ACK_C[2]) * q + _ACK_C[3]) * q
               + _ACK_C[4]) * q + _ACK_C[5])
              / ((((_ACK_D[0] * q + _ACK_D[1]) * q + _ACK_D[2]) * q + _ACK_D[3]) * q + 1.0))
    # one Halley step
    err = normal_cdf(x) - prob
    u = err * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def t_quantile(prob: float, df: float) -> float:
    """Inverse CDF of Student's t with (possibly fractional) df."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"prob must be in (0, 1), got {prob}")
    if df <= 0.0:
        raise ValueError(f"df must be positive, got {df}")
    return float(stdtrit(df, prob))


NORMAL = "normal"
STUDENT_T = "student-t"
EXPONENTIAL = "exponential"
LOG_NORMAL = "log-normal"
RESIDUAL_FAMILIES = (NORMAL, STUDENT_T, EXPONENTIAL, LOG_NORMAL)

_FAMILY_ALIASES = {
    "normal": NORMAL, "gaussian": NORMAL,
    "student-t": STUDENT_T, "t": STUDENT_T, "student": STUDENT_T,
    "exponential": EXPONENTIAL, "exp": EXPONENTIAL,
    "log-normal": LOG_NORMAL, "lognormal": LOG_NORMAL,
}


def canonical_family(name: str) -> str:
    key = name.strip().lower()
    if key not in _FAMILY_ALIASES:
        raise ValueError(f"unknown residual family {name!r}")
    return _FAMILY_ALIASES[key]


@dataclass(frozen=True)
class ResidualSpec:
    """A centered residual distribution targeting Var(eps) = sigma2.

    shift is subtracted from raw draws to center them; variance_target_met
    is False only for the clamped-df t case, where the clamp forces an
    infinite-variance distribution (logged at construction).
    """

    family: str
    sigma2: float
    df: float | None = None
    rate: float | None = None
    log_scale2: float | None = None
    shift: float = 0.0
    variance_target_met: bool = True


def residual_params_from_sigma2(family: str, sigma2: float) -> ResidualSpec:
    """Family parameters achieving Var(eps) = sigma2 after centering."""
    family = canonical_family(family)
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if family == NORMAL:
        return ResidualSpec(family, sigma2)
    if family == STUDENT_T:
        if sigma2 <= 1.0:
            # t variance df/(df-2) cannot go below 1; the clamp keeps the
            # mean finite but the draws have infinite variance
            logger.warning(
                "t residuals clamped to df=1.01 for sigma2=%g; "
                "variance target is not met", sigma2,
            )
            return ResidualSpec(family, sigma2, df=1.01, variance_target_met=False)
        df = max(1.01, 2.0 / (1.0 - 1.0 / sigma2))
        return ResidualSpec(family, sigma2, df=df)
    if family == EXPONENTIAL:
        sigma = math.sqrt(sigma2)
        return ResidualSpec(family, sigma2, rate=1.0 / sigma, shift=sigma)
    # log-normal with mu = 0
    half = (1.0 + math.sqrt(1.0 + 4.0 * sigma2)) / 2.0
    return ResidualSpec(family, sigma2, log_scale2=math.log(half), shift=math.sqrt(half))


def sample_residuals(spec: ResidualSpec, rng: np.random.Generator, size=None):
    """Centered residual draws; scalar when size is None."""
    if spec.family == NORMAL:
        out = rng.normal(0.0, math.sqrt(spec.sigma2), size)
    elif spec.family == STUDENT_T:
        out = rng.standard_t(spec.df, size)
    elif spec.family == EXPONENTIAL:
        out = rng.exponential(spec.shift, size) - spec.shift
    elif spec.family == LOG_NORMAL:
        out = rng.lognormal(0.0, math.sqrt(spec.log_scale2), size) - spec.shift
    else:
        raise ValueError(f"unknown residual family {spec.family!r}")
    return float(out) if size is None else out


NEG_AR = "neg-ar"
POS_AR = "pos-ar"
COMPOUND = "compound"
TOEPLITZ = "toeplitz"
IDENTITY = "identity"
COVARIANCE_KINDS = (NEG_AR, POS_AR, COMPOUND, TOEPLITZ, IDENTITY)

_COV_ALIASES = {
    "neg-ar": NEG_AR, "negar": NEG_AR, "sigma1": NEG_AR,
    "pos-ar": POS_AR, "posar": POS_AR, "sigma2": POS_AR,
    "compound": COMPOUND, "compound-symmetric": COMPOUND, "sigma3": COMPOUND,
    "toeplitz": TOEPLITZ, "sigma4": TOEPLITZ,
    "identity": IDENTITY, "sigma5": IDENTITY,
}


def canonical_covariance(name: str) -> str:
    key = name.strip().lower()
    if key not in _COV_ALIASES:
        raise ValueError(f"unknown covariance kind {name!r}")
    return _COV_ALIASES[key]


def covariance_matrix(kind: str, p: int) -> np.ndarray:
    """Feature covariance for one of the five benchmark structures."""
    if p < 1:
        raise ValueError("p must be >= 1")
    kind = canonical_covariance(kind)
    idx = np.arange(p)
    lag = np.abs(idx[:, None] - idx[None, :])
    if kind == NEG_AR:
        return (-0.5) ** lag
    if kind == POS_AR:
        return 0.5 ** lag
    if kind == COMPOUND:
        return np.eye(p) + np.ones((p, p))
    if kind == TOEPLITZ:
        return 1.0 - lag / p
    return np.eye(p)


def _cholesky_with_jitter(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * np.eye(sigma.shape[0])
    try:
        return np.linalg.cholesky(sigma + jitter)
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrix is not positive semi-definite")


def gaussian_copula_sample(sigma, rng: np.random.Generator, size=None):
    """Dependent Uniform(0,1)^p features via a Gaussian copula.

    Draws N_p(0, sigma) and maps coordinate j through the normal CDF with
    variance sigma[j, j].  Returns one point when size is None, else a
    (size, p) array; outputs are clipped to the open interval (0, 1).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be a square matrix")
    chol = _cholesky_with_jitter(sigma)
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, sigma.shape[0]))
    correlated = z @ chol.T
    u = ndtr(correlated / np.sqrt(np.diag(sigma)))
    np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0), out=u)
    return u[0] if size is None else u


LINEAR = "linear"
POLYNOMIAL = "polynomial"
TRIGONOMETRIC = "trigonometric"
NON_CONTINUOUS = "non-continuous"
REGRESSION_FNS = (LINEAR, POLYNOMIAL, TRIGONOMETRIC, NON_CONTINUOUS)

_FN_ALIASES = {
    "linear": LINEAR, "m1": LINEAR,
    "polynomial": POLYNOMIAL, "poly": POLYNOMIAL, "m2": POLYNOMIAL,
    "trigonometric": TRIGONOMETRIC, "trig": TRIGONOMETRIC, "m3": TRIGONOMETRIC,
    "non-continuous": NON_CONTINUOUS, "noncontinuous": NON_CONTINUOUS,
    "piecewise": NON_CONTINUOUS, "m4": NON_CONTINUOUS,
}

BASE_COEFFICIENTS = np.array([2.0, 4.0, 2.0, -3.0, 1.0, 7.0, -4.0, 0.0, 0.0, 0.0])


def canonical_regression_fn(name):
    """Canonical name for a named surface; callables pass through."""
    if callable(name):
        return name
    key = name.strip().lower()
    if key not in _FN_ALIASES:
        raise ValueError(f"unknown regression function {name!r}")
    return _FN_ALIASES[key]


def _coefficients(p: int) -> np.ndarray:
    if p <= len(BASE_COEFFICIENTS):
        return BASE_COEFFICIENTS[:p]
    out = np.zeros(p)
    out[: len(BASE_COEFFICIENTS)] = BASE_COEFFICIENTS
    return out


def regression_values(fn, X) -> np.ndarray:
    """Vectorized regression surface over the rows of X.

    fn is one of the four named surfaces or a callable mapping an (n, p)
    array to n values (useful for custom or degenerate scenarios).
    """
    fn = canonical_regression_fn(fn)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if callable(fn):
        return np.asarray(fn(X), dtype=np.float64)
    p = X.shape[1]
    if fn == NON_CONTINUOUS and p < 5:
        raise ValueError("non-continuous regression needs at least 5 features")
    if p < 1:
        raise ValueError("need at least 1 feature")
    beta = _coefficients(p)
    if fn == LINEAR:
        return X @ beta
    if fn == POLYNOMIAL:
        powers = X ** np.arange(1, p + 1)
        return powers @ beta
    if fn == TRIGONOMETRIC:
        return 2.0 * np.sin(X @ beta + 2.0)
    upper = beta[0] * X[:, 0] + beta[1] * X[:, 1] + beta[2] * X[:, 2]
    lower = beta[3] * X[:, 3] + beta[4] * X[:, 4] + 3.0
    return np.where(X[:, 2] > 0.5, upper, lower)


def regression_value(fn: str, x) -> float:
    """Regression surface at one point."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(regression_values(fn, x)[0])


DEFAULT_SIGNAL_SEED = 0x5167_4E41
DEFAULT_SIGNAL_DRAWS = 100_000

_signal_cache: dict = {}


def estimate_signal_variance(fn, sigma, sample_count: int = DEFAULT_SIGNAL_DRAWS,
                             seed: int = DEFAULT_SIGNAL_SEED) -> float:
    """Monte-Carlo estimate of Var(m(X)) under the copula feature law.

    Cached per (fn, covariance, draws, seed) since scenario grids reuse it;
    callables are evaluated fresh each time.
    """
    fn = canonical_regression_fn(fn)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")

    def compute():
        rng = np.random.default_rng(seed)
        u = gaussian_copula_sample(sigma, rng, size=sample_count)
        return float(np.var(regression_values(fn, u), ddof=1))

    if callable(fn):
        return compute()
    key = (fn, sigma.shape[0], sigma.tobytes(), int(sample_count), int(seed))
    if key not in _signal_cache:
        _signal_cache[key] = compute()
    return _signal_cache[key]
