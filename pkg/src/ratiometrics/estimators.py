"""Point estimators of the per-event mean and the intra-user correlation model.

Three unbiased estimators of the common mean are provided, all of them
weighted averages of the user means ``r_i = sum_i / n_i``:

* naive mean: weights proportional to ``n_i`` (total over total),
* normalized mean: equal weights,
* correlation-adjusted mean: inverse-variance weights
  ``n_i / (1 + (n_i - 1) rho)``, or their ``n_i ** (1 - rho)`` approximation.

The correlation ``rho`` and per-observation variance ``sigma2`` are
estimated by moment statistics S1, S2 and S3 computed from per-user
sufficient statistics.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ratiometrics.errors import (
    CorrelationUnidentifiable,
    EmptyDataError,
    InvalidDataError,
    WeightDomainError,
)
from ratiometrics.model import RhoMethod, Users, WeightMode, as_table

WEIGHT_SUM_ATOL = 1e-12


class EstimatorKind(str, enum.Enum):
    NAIVE = "naive"
    NORMALIZED = "normalized"
    CORR_ADJUSTED = "corr_adjusted"


USER_MEAN = "user_mean"


class Preference(str, enum.Enum):
    PREFER_NAIVE = "prefer_naive"
    PREFER_NORMALIZED = "prefer_normalized"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class VariancePreference:
    choice: Preference
    threshold: float | None


class SStatistics(NamedTuple):
    s1: float
    s2: float
    s3: float


@dataclass(frozen=True)
class CorrelationEstimate:
    """Estimated intra-user correlation and observation variance.

    ``rho_hat`` is clamped into the configured interval; ``raw_rho`` keeps the
    unclamped moment estimate. ``degenerate`` marks constant data, for which
    both estimates are reported as zero.
    """

    rho_hat: float
    sigma2_hat: float
    s1: float
    s2: float
    s3: float
    method: RhoMethod
    clamped: bool
    raw_rho: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "rho_hat": self.rho_hat,
            "raw_rho": self.raw_rho,
            "sigma2_hat": self.sigma2_hat,
            "s1": self.s1,
            "s2": self.s2,
            "s3": self.s3,
            "method": self.method.value,
            "clamped": self.clamped,
            "degenerate": self.degenerate,
        }


def _nonempty(users: Users):
    t = as_table(users)
    if len(t) == 0:
        raise EmptyDataError("no users")
    return t


def naive_mean(users: Users) -> float:
    t = _nonempty(users)
    return float(t.sum.sum() / t.n.sum())


def normalized_mean(users: Users) -> float:
    t = _nonempty(users)
    return float(np.mean(t.sum / t.n))


def weighted_mean(users: Users, weights) -> float:
    t = _nonempty(users)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != t.n.shape:
        raise InvalidDataError(f"weight vector length {w.shape} does not match {len(t)} users")
    if np.any(w < 0):
        raise InvalidDataError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_ATOL:
        raise InvalidDataError(f"weights must sum to 1, got {w.sum()!r}")
    return float(np.dot(w, t.sum / t.n))


def _within_ss(t) -> np.ndarray:
    # sum_j (x_ij - r_i)^2 per user; clipped because the subtraction can go
    # a few ulps negative for constant users.
    return np.maximum(t.sumsq - t.sum * t.sum / t.n, 0.0)


def s_statistics(users: Users) -> SStatistics:
    """Moment statistics S1, S2, S3 from sufficient statistics.

    S1 and S2 are pooled squared deviations around the naive and normalized
    means, divided by ``sum(n) - 1``. S3 is the within-user pairwise residual
    cross-product sum divided by ``sum(n - 1)``; since within-user residuals
    sum to zero, that cross-product equals minus the within-user sum of
    squares.

    Raises:
        EmptyDataError: fewer than two observations in total.
        CorrelationUnidentifiable: every user has ``n == 1`` (S3 undefined).
    """
    t = _nonempty(users)
    total = int(t.n.sum())
    if total < 2:
        raise EmptyDataError("need at least two observations")
    dof3 = total - len(t)
    if dof3 == 0:
        raise CorrelationUnidentifiable("correlation unidentifiable: every user has a single observation")
    r = t.sum / t.n
    w = _within_ss(t)
    within = w.sum()
    ra = t.sum.sum() / total
    rb = r.mean()
    s1 = (within + np.dot(t.n, (r - ra) ** 2)) / (total - 1)
    s2 = (within + np.dot(t.n, (r - rb) ** 2)) / (total - 1)
    s3 = -within / dof3
    return SStatistics(float(s1), float(s2), float(s3))


def exact_moment_constant(n) -> float:
    """``sum n(n-1) / (sum n * (sum n - 1))``, the bias factor of S1."""
    n = np.asarray(n, dtype=np.float64)
    tot = n.sum()
    return float(np.dot(n, n - 1) / (tot * (tot - 1)))


def _clamp(raw: float, clamp) -> tuple[float, bool]:
    lo, hi = clamp
    if raw < lo:
        return float(lo), True
    if raw > hi:
        return float(hi), True
    return float(raw), False


def estimate_correlation(users: Users, method=RhoMethod.S3_S1, clamp=(0.0, 1.0)) -> CorrelationEstimate:
    """Estimates rho and sigma^2 from S1/S2/S3.

    Plug-in methods use ``rho = 1 + S3 / S1`` (or ``S2``) with ``sigma2 = S1``
    (or ``S2``). The exact-moment method solves ``E[S1] = sigma2 (1 - c rho)``
    and ``E[S3] = (rho - 1) sigma2`` jointly.
    """
    method = RhoMethod(method)
    t = _nonempty(users)
    s = s_statistics(t)
    if s.s1 <= 0.0:
        # Constant data: no spread anywhere.
        return CorrelationEstimate(0.0, 0.0, s.s1, s.s2, s.s3, method, False, 0.0, degenerate=True)
    if method is RhoMethod.S3_S1:
        raw, sigma2 = 1.0 + s.s3 / s.s1, s.s1
    elif method is RhoMethod.S3_S2:
        if s.s2 <= 0.0:
            return CorrelationEstimate(0.0, 0.0, s.s1, s.s2, s.s3, method, False, 0.0, degenerate=True)
        raw, sigma2 = 1.0 + s.s3 / s.s2, s.s2
    else:
        c = exact_moment_constant(t.n)
        denom = s.s1 + c * s.s3
        raw = (s.s1 + s.s3) / denom
        sigma2 = denom / (1.0 - c)
    rho, clamped = _clamp(raw, clamp)
    return CorrelationEstimate(rho, max(float(sigma2), 0.0), s.s1, s.s2, s.s3, method, clamped, float(raw))


def _relative_weights(n, rho: float, mode) -> np.ndarray:
    """Unnormalized inverse-variance weights divided by ``n``.

    ``n * _relative_weights(n, rho, mode)`` is the weight numerator; keeping
    the ``1/n`` factor separate lets callers weight user sums directly.
    """
    n = np.asarray(n, dtype=np.float64)
    mode = WeightMode(mode)
    if mode is WeightMode.POWER:
        return n ** (-rho)
    denom = 1.0 + (n - 1.0) * rho
    if np.any(denom <= 0):
        raise WeightDomainError("weight denominator nonpositive")
    return 1.0 / denom


def weight_numerators(n, rho: float, mode=WeightMode.EXACT) -> np.ndarray:
    """Unnormalized weights: ``n/(1+(n-1)rho)`` (exact) or ``n**(1-rho)`` (power)."""
    n = np.asarray(n, dtype=np.float64)
    if rho == 0.0:
        return n.copy()
    if rho == 1.0:
        return np.ones_like(n)
    return n * _relative_weights(n, rho, mode)


def umvue_weights(n, rho: float, mode=WeightMode.EXACT) -> np.ndarray:
    if not -1.0 <= rho <= 1.0:
        raise WeightDomainError(f"rho must lie in [-1, 1], got {rho}")
    u = weight_numerators(n, rho, mode)
    if u.size == 0:
        raise EmptyDataError("no users")
    return u / u.sum()


def correlation_adjusted_mean(users: Users, rho: float, mode=WeightMode.EXACT) -> float:
    """Inverse-variance weighted mean of user means.

    Reduces exactly to :func:`naive_mean` at ``rho == 0`` and to
    :func:`normalized_mean` at ``rho == 1``.
    """
    t = _nonempty(users)
    if rho == 0.0:
        return naive_mean(t)
    if rho == 1.0:
        return normalized_mean(t)
    u = weight_numerators(t.n, rho, mode)
    return float(np.dot(u, t.sum / t.n) / u.sum())


def point_estimate(users: Users, kind, rho: float = 0.0, mode=WeightMode.EXACT) -> float:
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.NAIVE:
        return naive_mean(users)
    if kind is EstimatorKind.NORMALIZED:
        return normalized_mean(users)
    return correlation_adjusted_mean(users, rho, mode)


def user_mean_variance(n, rho: float, sigma2: float):
    """Variance of a single user's mean of ``n`` equicorrelated observations."""
    n = np.asarray(n, dtype=np.float64)
    return sigma2 * ((1.0 - rho) / n + rho)


def model_variance(n, rho: float, sigma2: float, kind, mode=WeightMode.EXACT):
    """Closed-form variance of an estimator under the equicorrelation model.

    ``kind`` is an :class:`EstimatorKind` or ``"user_mean"`` (which returns
    the per-user variances for an array ``n``). For ``CORR_ADJUSTED`` the
    weights are computed from the same ``rho``.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    if kind == USER_MEAN:
        v = user_mean_variance(n, rho, sigma2)
        return float(v) if np.ndim(v) == 0 else v
    n = np.asarray(n, dtype=np.float64)
    if n.size == 0:
        raise EmptyDataError("no users")
    kind = EstimatorKind(kind)
    tot = n.sum()
    big_n = n.size
    if kind is EstimatorKind.NAIVE:
        return float(sigma2 * (1.0 / tot + rho * np.dot(n, n - 1.0) / tot**2))
    if kind is EstimatorKind.NORMALIZED:
        return float(sigma2 / big_n**2 * np.sum((1.0 + (n - 1.0) * rho) / n))
    w = umvue_weights(n, rho, mode)
    return float(np.dot(w * w, user_mean_variance(n, rho, sigma2)))


def preference_threshold(n) -> float | None:
    """Correlation at which naive and normalized means have equal variance.

    Returns ``None`` when every ``n_i`` is equal and the two estimators coincide.
    """
    n = np.asarray(n, dtype=np.float64)
    if n.size == 0:
        raise EmptyDataError("no users")
    if np.all(n == n[0]):
        return None
    big_n = n.size
    tot = n.sum()
    inv = np.sum(1.0 / n) / big_n**2
    num = inv - 1.0 / tot
    den = np.dot(n, n) / tot**2 + inv - 1.0 / tot - 1.0 / big_n
    return float(num / den)


def variance_preference(n, rho: float) -> VariancePreference:
    """Which of naive/normalized has the smaller model variance at ``rho``.

    Ties resolve to the normalized mean.
    """
    thr = preference_threshold(n)
    if thr is None:
        return VariancePreference(Preference.DEGENERATE, None)
    if rho < thr:
        return VariancePreference(Preference.PREFER_NAIVE, thr)
    return VariancePreference(Preference.PREFER_NORMALIZED, thr)


def expected_s(n, rho: float, sigma2: float) -> SStatistics:
    """Exact finite-sample expectations of S1, S2, S3 under the model.

    With ``T = sum(n)`` and ``H = sum(1/n)``::

        E[S1] = sigma2 (1 - c rho),  c = sum n(n-1) / (T (T-1))
        E[S2] = sigma2 (1 + ((N^2 - T H)(rho - 1) + rho N (N - T)) / (N^2 (T-1)))
        E[S3] = (rho - 1) sigma2

    ``E[S3]`` is NaN when every ``n_i == 1``.
    """
    n = np.asarray(n, dtype=np.float64)
    tot = n.sum()
    if tot < 2:
        raise EmptyDataError("need at least two observations")
    big_n = n.size
    es1 = sigma2 * (1.0 - np.dot(n, n - 1.0) * rho / (tot * (tot - 1.0)))
    # The rho * N (N - T) term comes from the cross moment E[R_B * sum x],
    # which carries the factor 2 on every within-user covariance.
    es2 = sigma2 * (
        1.0
        + ((big_n**2 - tot * np.sum(1.0 / n)) * (rho - 1.0) + rho * big_n * (big_n - tot))
        / (big_n**2 * (tot - 1.0))
    )
    es3 = (rho - 1.0) * sigma2 if tot > big_n else math.nan
    return SStatistics(float(es1), float(es2), float(es3))
