"""Standard errors, segment integration and treatment-vs-control comparison.

Arm-level estimates integrate per-segment estimates: every segment gets
its own correlation estimate and the segment results are combined with
weights proportional to user counts or event counts. Naive means combined
with event weights and normalized means combined with user weights
reproduce the pooled estimators exactly, so the lift test uses those two
pairings for the naive and normalized kinds.

Bootstrap replicate ``k`` draws its resample from a PCG64 stream seeded
with ``SeedSequence(seed, spawn_key=(k,))``. Replicates are therefore
independent of chunking and thread count.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ratiometrics.errors import CorrelationUnidentifiable, EmptyDataError, InvalidDataError
from ratiometrics.estimators import (
    CorrelationEstimate,
    EstimatorKind,
    estimate_correlation,
    model_variance,
    point_estimate,
    weight_numerators,
)
from ratiometrics.model import (
    AnalysisConfig,
    GroupData,
    RhoMethod,
    SegmentWeighting,
    SEMethod,
    UserTable,
    Users,
    WeightMode,
    as_table,
)

# Elements per bootstrap chunk (replicates x users).
_CHUNK_ELEMENTS = 2_000_000

# Relative size below which a delta counts as zero for sign comparisons.
_SIGN_RTOL = 1e-12

NATURAL_WEIGHTING = {
    EstimatorKind.NAIVE: SegmentWeighting.EVENTS,
    EstimatorKind.NORMALIZED: SegmentWeighting.USERS,
}


@dataclass(frozen=True)
class EstimateReport:
    kind: EstimatorKind
    estimate: float
    se: float
    se_method: SEMethod
    rho: CorrelationEstimate | None
    n_users: int
    n_events: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.se < 0:
            raise InvalidDataError("standard error must be nonnegative")
        if self.n_events < self.n_users:
            raise InvalidDataError("n_events must be >= n_users")


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    replicates: np.ndarray
    fallbacks: int


def correlation_for(users: Users, config: AnalysisConfig) -> CorrelationEstimate:
    """Correlation estimate that never raises on all-singleton data.

    When every user has one observation the correlation is unidentifiable; all
    three estimators then coincide, so rho is set to 0 and the estimate is
    flagged with ``degenerate=True`` and a NaN ``raw_rho``.
    """
    t = as_table(users)
    try:
        return estimate_correlation(t, config.rho_method, config.rho_clamp)
    except CorrelationUnidentifiable:
        s1 = s2 = math.nan
        if t.n_events >= 2:
            s1, s2, _ = _s12_only(t)
        return CorrelationEstimate(
            0.0,
            max(s1, 0.0) if math.isfinite(s1) else math.nan,
            s1,
            s2,
            math.nan,
            config.rho_method,
            False,
            math.nan,
            degenerate=True,
        )
    except EmptyDataError:
        return CorrelationEstimate(
            0.0, math.nan, math.nan, math.nan, math.nan, config.rho_method, False, math.nan, degenerate=True
        )


def _s12_only(t: UserTable):
    total = t.n.sum()
    r = t.sum / t.n
    ra = t.sum.sum() / total
    rb = r.mean()
    s1 = float(np.dot(t.n, (r - ra) ** 2) / (total - 1))
    s2 = float(np.dot(t.n, (r - rb) ** 2) / (total - 1))
    return s1, s2, math.nan


# ---------------------------------------------------------------------------
# Single-sample standard errors.


def se_model(users: Users, kind, corr: CorrelationEstimate, mode=WeightMode.EXACT) -> float:
    """Square root of the closed-form model variance at ``(rho_hat, sigma2_hat)``."""
    t = as_table(users)
    if not math.isfinite(corr.sigma2_hat):
        return math.nan
    v = model_variance(t.n, corr.rho_hat, corr.sigma2_hat, kind, mode)
    return math.sqrt(max(v, 0.0))


def _user_weights(t: UserTable, kind: EstimatorKind, rho: float, mode) -> np.ndarray:
    if kind is EstimatorKind.NAIVE:
        return t.n.astype(np.float64)
    if kind is EstimatorKind.NORMALIZED:
        return np.ones(len(t))
    return weight_numerators(t.n, rho, mode)


def se_delta(users: Users, kind, rho: float = 0.0, mode=WeightMode.EXACT) -> float:
    """Delta-method SE treating the estimator as a ratio of user aggregates.

    With per-user weights ``u_i`` the estimator is ``mean(u r) / mean(u)``;
    its linearization gives ``sqrt(var(A - R B) / (N * mean(B)**2))`` with
    ``A = u r``, ``B = u`` and sample variances over users. The weights of
    the correlation-adjusted kind are held fixed at ``rho``.
    """
    t = as_table(users)
    kind = EstimatorKind(kind)
    if len(t) < 2:
        raise EmptyDataError("delta method needs >= 2 users")
    u = _user_weights(t, kind, rho, mode)
    r = t.sum / t.n
    est = np.dot(u, r) / u.sum()
    infl = u * (r - est) / u.mean()
    return float(np.std(infl, ddof=1) / math.sqrt(len(t)))


# ---------------------------------------------------------------------------
# Vectorized estimator over bootstrap replicates.


def _replicate_indices(seed: int, start: int, stop: int, n_users: int) -> np.ndarray:
    out = np.empty((stop - start, n_users), dtype=np.int64)
    for row, k in enumerate(range(start, stop)):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(k,))))
        out[row] = rng.integers(0, n_users, size=n_users)
    return out


def _batch_rho(n, s, q, key, n_keys, config: AnalysisConfig):
    """Per-(replicate, segment) clamped rho; returns (rho, fallback mask)."""
    nf = n.astype(np.float64)
    r = s / nf
    cnt = np.bincount(key, minlength=n_keys).astype(np.float64)
    tot = np.bincount(key, weights=nf, minlength=n_keys)
    ssum = np.bincount(key, weights=s, minlength=n_keys)
    rsum = np.bincount(key, weights=r, minlength=n_keys)
    within = np.bincount(key, weights=np.maximum(q - s * s / nf, 0.0), minlength=n_keys)
    with np.errstate(invalid="ignore", divide="ignore"):
        ra = ssum / tot
        rb = rsum / cnt
        dev_a = np.bincount(key, weights=nf * (r - ra[key]) ** 2, minlength=n_keys)
        dev_b = np.bincount(key, weights=nf * (r - rb[key]) ** 2, minlength=n_keys)
        s1 = (within + dev_a) / (tot - 1)
        s2 = (within + dev_b) / (tot - 1)
        dof3 = tot - cnt
        s3 = -within / dof3
        method = config.rho_method
        if method is RhoMethod.S3_S1:
            raw = 1.0 + s3 / s1
        elif method is RhoMethod.S3_S2:
            raw = 1.0 + s3 / s2
        else:
            c = np.bincount(key, weights=nf * (nf - 1), minlength=n_keys) / (tot * (tot - 1))
            raw = (s1 + s3) / (s1 + c * s3)
    present = cnt > 0
    unidentifiable = present & (dof3 <= 0)
    constant = present & ~unidentifiable & ~(s1 > 0)
    raw = np.where(unidentifiable | constant | ~present, 0.0, raw)
    lo, hi = config.rho_clamp
    rho = np.clip(raw, lo, hi)
    return rho, unidentifiable


def _batch_integrated(n, s, q, codes, n_seg, kind, config, weighting, rho_fixed=None):
    """Integrated estimate for each row of ``(B, N)`` arrays.

    Returns ``(estimates[B], fallback_count)``.
    """
    b, m = n.shape
    key = (np.arange(b)[:, None] * n_seg + codes).ravel()
    n_keys = b * n_seg
    nf = n.ravel().astype(np.float64)
    sf = s.ravel()
    r = sf / nf
    cnt = np.bincount(key, minlength=n_keys).astype(np.float64)
    tot = np.bincount(key, weights=nf, minlength=n_keys)
    fallbacks = 0
    if kind is EstimatorKind.NAIVE:
        num, den = np.bincount(key, weights=sf, minlength=n_keys), tot
    elif kind is EstimatorKind.NORMALIZED:
        num, den = np.bincount(key, weights=r, minlength=n_keys), cnt
    else:
        if rho_fixed is None:
            rho, unid = _batch_rho(n.ravel(), sf, q.ravel(), key, n_keys, config)
            fallbacks = int(unid.sum())
        else:
            rho = np.tile(np.asarray(rho_fixed, dtype=np.float64), b)
        rho_el = rho[key]
        mode = config.weight_mode
        if mode is WeightMode.POWER:
            u = nf ** (1.0 - rho_el)
        else:
            u = nf / (1.0 + (nf - 1.0) * rho_el)
        num = np.bincount(key, weights=u * r, minlength=n_keys)
        den = np.bincount(key, weights=u, minlength=n_keys)
    with np.errstate(invalid="ignore", divide="ignore"):
        seg_est = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    sw = cnt if SegmentWeighting(weighting) is SegmentWeighting.USERS else tot
    sw = sw.reshape(b, n_seg)
    seg_est = seg_est.reshape(b, n_seg)
    est = (sw * seg_est).sum(axis=1) / sw.sum(axis=1)
    return est, fallbacks


def _bootstrap_arrays(t: UserTable, codes, n_seg, kind, config, weighting, rho_fixed=None) -> BootstrapResult:
    m = len(t)
    if m < 2:
        raise EmptyDataError("bootstrap needs >= 2 users")
    iters = config.bootstrap_iters
    if iters < 2:
        raise InvalidDataError("bootstrap_iters must be >= 2")
    chunk = max(1, _CHUNK_ELEMENTS // m)
    bounds = [(a, min(a + chunk, iters)) for a in range(0, iters, chunk)]

    def run(bound):
        idx = _replicate_indices(config.seed, bound[0], bound[1], m)
        return _batch_integrated(
            t.n[idx], t.sum[idx], t.sumsq[idx], codes[idx], n_seg, kind, config, weighting, rho_fixed
        )

    if config.workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(bd) for bd in bounds]
    reps = np.concatenate([p[0] for p in parts])
    fallbacks = sum(p[1] for p in parts)
    return BootstrapResult(float(np.std(reps, ddof=1)), reps, fallbacks)


def bootstrap(
    users: Users, kind, config: AnalysisConfig, corr: CorrelationEstimate | None = None
) -> BootstrapResult:
    """Resamples users with replacement and recomputes the estimator.

    For the correlation-adjusted kind rho is re-estimated in every replicate
    unless ``config.freeze_rho`` is set (then ``corr`` or the full-sample
    estimate is used). Replicates where rho cannot be identified fall back
    to rho = 0 and are counted in ``fallbacks``.
    """
    t = as_table(users)
    kind = EstimatorKind(kind)
    rho_fixed = None
    if kind is EstimatorKind.CORR_ADJUSTED and config.freeze_rho:
        rho_fixed = [(corr or correlation_for(t, config)).rho_hat]
    codes = np.zeros(len(t), dtype=np.int64)
    return _bootstrap_arrays(t, codes, 1, kind, config, SegmentWeighting.USERS, rho_fixed)


def se_bootstrap(users: Users, kind, config: AnalysisConfig) -> float:
    return bootstrap(users, kind, config).se


# ---------------------------------------------------------------------------
# Estimate reports and segment integration.


def estimate_report(
    users: Users, kind, config: AnalysisConfig, corr: CorrelationEstimate | None = None
) -> EstimateReport:
    """Point estimate plus standard error for one kind on one sample."""
    t = as_table(users)
    kind = EstimatorKind(kind)
    if len(t) == 0:
        raise EmptyDataError("no users")
    corr = corr or correlation_for(t, config)
    est = point_estimate(t, kind, corr.rho_hat, config.weight_mode)
    diagnostics = {}
    method = config.se_method
    if method is SEMethod.MODEL:
        se = se_model(t, kind, corr, config.weight_mode)
    elif len(t) < 2:
        se = math.nan
        diagnostics["se_null_reason"] = "too_few_users"
    elif method is SEMethod.DELTA:
        se = se_delta(t, kind, corr.rho_hat, config.weight_mode)
    else:
        res = bootstrap(t, kind, config, corr)
        se = res.se
        diagnostics["bootstrap_fallbacks"] = res.fallbacks
    if not math.isfinite(se) and "se_null_reason" not in diagnostics:
        diagnostics["se_null_reason"] = "too_few_observations"
    return EstimateReport(kind, est, _nonneg(se), method, corr, t.n_users, t.n_events, diagnostics)


def _nonneg(x: float) -> float:
    return x if not math.isfinite(x) else max(x, 0.0)


def integrate_segments(estimates: Sequence, mode=SegmentWeighting.USERS) -> float:
    """Weighted sum of per-segment estimates.

    ``estimates`` holds objects with ``estimate``, ``n_users`` and
    ``n_events`` (e.g. :class:`EstimateReport`). Segment weights are
    proportional to user counts (``users``) or event counts (``events``).
    """
    if not estimates:
        raise EmptyDataError("at least one segment is required")
    mode = SegmentWeighting(mode)
    attr = "n_users" if mode is SegmentWeighting.USERS else "n_events"
    w = np.array([getattr(e, attr) for e in estimates], dtype=np.float64)
    x = np.array([e.estimate for e in estimates], dtype=np.float64)
    if len(estimates) == 1:
        return float(x[0])
    return float(np.dot(w, x) / w.sum())


def _segment_influence(group: GroupData, kind, rhos, config, weighting):
    """Per-user influence values of the integrated estimator (pooled order).

    Returns ``(total, between)`` where ``between`` is the part caused by
    random segment composition.
    """
    weighting = SegmentWeighting(weighting)
    segs = [s for s in group.segments if s.n_users > 0]
    n_all = np.concatenate([s.table.n for s in segs]).astype(np.float64)
    nbar = n_all.mean()
    big_n = n_all.size
    parts, est, wts = [], [], []
    for seg, rho in zip(segs, rhos):
        t = seg.table
        u = _user_weights(t, kind, rho, config.weight_mode)
        r = t.sum / t.n
        rs = float(np.dot(u, r) / u.sum())
        parts.append((t, u, r, rs))
        est.append(rs)
        wts.append(t.n_users if weighting is SegmentWeighting.USERS else t.n_events)
    wts = np.asarray(wts, dtype=np.float64)
    total_est = float(np.dot(wts, est) / wts.sum())
    infl, between = [], []
    for t, u, r, rs in parts:
        within = u * (r - rs) / u.mean()
        if weighting is SegmentWeighting.USERS:
            b = np.full(len(t), rs - total_est)
        else:
            b = t.n * (rs - total_est) / nbar
            within = within * (t.n.mean() / nbar)
        infl.append(b + within)
        between.append(b)
    return np.concatenate(infl), np.concatenate(between), big_n


def arm_estimate(
    group: GroupData, kind, config: AnalysisConfig, weighting=None, segment_corrs=None
) -> EstimateReport:
    """Segment-integrated estimate of one arm with its standard error.

    Delta and model SEs include the variance from random segment
    composition; the bootstrap resamples users across the whole arm.
    """
    kind = EstimatorKind(kind)
    weighting = SegmentWeighting(weighting or config.segment_weighting)
    segs = [s for s in group.segments if s.n_users > 0]
    if not segs:
        raise EmptyDataError(f"group {group.group_label!r} has no users")
    corrs = segment_corrs or [correlation_for(s.table, config) for s in segs]
    rhos = [c.rho_hat for c in corrs]
    seg_reports = [
        _SegEst(point_estimate(s.table, kind, rho, config.weight_mode), s.n_users, s.n_events)
        for s, rho in zip(segs, rhos)
    ]
    est = integrate_segments(seg_reports, weighting)
    n_users = sum(s.n_users for s in segs)
    n_events = sum(s.n_events for s in segs)
    diagnostics: dict = {"segment_weighting": weighting.value}
    if kind is EstimatorKind.CORR_ADJUSTED:
        diagnostics["segment_rho"] = {s.segment_id: c.rho_hat for s, c in zip(segs, corrs)}
    method = config.se_method
    if n_users < 2:
        se = math.nan
        diagnostics["se_null_reason"] = "too_few_users"
    elif method is SEMethod.DELTA:
        infl, _, big_n = _segment_influence(group, kind, rhos, config, weighting)
        se = float(np.std(infl, ddof=1) / math.sqrt(big_n))
    elif method is SEMethod.MODEL:
        _, between, big_n = _segment_influence(group, kind, rhos, config, weighting)
        w = np.array(
            [r.n_users if weighting is SegmentWeighting.USERS else r.n_events for r in seg_reports], float
        )
        w = w / w.sum()
        var = 0.0
        for wi, s, c in zip(w, segs, corrs):
            if math.isfinite(c.sigma2_hat):
                var += wi * wi * model_variance(s.table.n, c.rho_hat, c.sigma2_hat, kind, config.weight_mode)
        if len(segs) > 1:
            var += float(np.var(between, ddof=1)) / big_n
        se = math.sqrt(var)
    else:
        t = group.pooled() if len(segs) == len(group.segments) else UserTable.concat([s.table for s in segs])
        codes = np.repeat(np.arange(len(segs)), [s.n_users for s in segs])
        rho_fixed = rhos if (kind is EstimatorKind.CORR_ADJUSTED and config.freeze_rho) else None
        res = _bootstrap_arrays(t, codes, len(segs), kind, config, weighting, rho_fixed)
        se = res.se
        diagnostics["bootstrap_fallbacks"] = res.fallbacks
    rho = corrs[0] if len(segs) == 1 else None
    return EstimateReport(kind, est, _nonneg(se), method, rho, n_users, n_events, diagnostics)


@dataclass(frozen=True)
class _SegEst:
    estimate: float
    n_users: int
    n_events: int


# ---------------------------------------------------------------------------
# Two-arm comparison.


@dataclass(frozen=True)
class KindLift:
    kind: EstimatorKind
    treatment: float
    control: float
    delta: float
    relative_lift: float
    se_delta: float
    z: float
    p_value: float
    degenerate_variance: bool = False


@dataclass(frozen=True)
class SegmentReversal:
    segment_id: str
    kind: EstimatorKind
    segment_delta: float
    pooled_delta: float


@dataclass(frozen=True)
class SimpsonDiagnostics:
    flag: bool
    delta_naive: float
    delta_normalized: float
    reversals: tuple[SegmentReversal, ...]


@dataclass(frozen=True)
class SegmentCounts:
    segment_id: str
    users_treatment: int
    users_control: int
    events_treatment: int
    events_control: int
    rel_diff_users: float
    rel_diff_events: float
    missing_in: str | None = None


@dataclass(frozen=True)
class CountImbalance:
    segments: tuple[SegmentCounts, ...]
    threshold: float
    flagged: bool


@dataclass(frozen=True)
class LiftReport:
    lifts: dict
    simpson_flag: bool
    simpson: SimpsonDiagnostics
    count_imbalance: CountImbalance
    treatment: dict
    control: dict

    def __getitem__(self, kind) -> KindLift:
        return self.lifts[EstimatorKind(kind)]


def two_sided_p(z: float) -> float:
    """Two-sided standard normal tail probability."""
    return float(special.erfc(abs(z) / math.sqrt(2.0)))


def _sign(x: float, scale: float) -> int:
    if abs(x) <= _SIGN_RTOL * scale:
        return 0
    return 1 if x > 0 else -1


def _signs_disagree(a: float, b: float, scale_a: float, scale_b: float) -> bool:
    sa, sb = _sign(a, scale_a), _sign(b, scale_b)
    return sa != 0 and sb != 0 and sa != sb


def detect_simpson(treatment: GroupData, control: GroupData) -> SimpsonDiagnostics:
    """Sign disagreement between naive and normalized lifts.

    Also lists segments whose naive or normalized delta has the opposite
    sign of the pooled delta of the same kind.
    """
    tp, cp = treatment.pooled(), control.pooled()
    pooled = {}
    scales = {}
    for kind in (EstimatorKind.NAIVE, EstimatorKind.NORMALIZED):
        a, b = point_estimate(tp, kind), point_estimate(cp, kind)
        pooled[kind] = a - b
        scales[kind] = max(abs(a), abs(b))
    flag = _signs_disagree(
        pooled[EstimatorKind.NAIVE],
        pooled[EstimatorKind.NORMALIZED],
        scales[EstimatorKind.NAIVE],
        scales[EstimatorKind.NORMALIZED],
    )
    reversals = []
    common = [s for s in treatment.segment_ids if s in set(control.segment_ids)]
    for seg_id in common:
        ts, cs = treatment.segment(seg_id).table, control.segment(seg_id).table
        if len(ts) == 0 or len(cs) == 0:
            continue
        for kind in (EstimatorKind.NAIVE, EstimatorKind.NORMALIZED):
            a, b = point_estimate(ts, kind), point_estimate(cs, kind)
            d = a - b
            if _signs_disagree(d, pooled[kind], max(abs(a), abs(b)), scales[kind]):
                reversals.append(SegmentReversal(seg_id, kind, d, pooled[kind]))
    return SimpsonDiagnostics(
        flag, pooled[EstimatorKind.NAIVE], pooled[EstimatorKind.NORMALIZED], tuple(reversals)
    )


def _rel_diff(t: float, c: float) -> float:
    if c == 0:
        return 0.0 if t == 0 else math.inf
    return (t - c) / c


def monitor_counts(treatment: GroupData, control: GroupData, threshold: float = 0.05) -> CountImbalance:
    """Relative differences ``(treatment - control) / control`` of user and event counts per segment.

    A segment present in only one arm gets an infinite difference and
    ``missing_in`` names the arm lacking it.
    """
    t_ids, c_ids = set(treatment.segment_ids), set(control.segment_ids)
    rows = []
    flagged = False
    for seg_id in sorted(t_ids | c_ids):
        ts = treatment.segment(seg_id) if seg_id in t_ids else None
        cs = control.segment(seg_id) if seg_id in c_ids else None
        ut, et = (ts.n_users, ts.n_events) if ts else (0, 0)
        uc, ec = (cs.n_users, cs.n_events) if cs else (0, 0)
        missing = None if (ts and cs) else ("treatment" if ts is None else "control")
        if missing:
            du = de = math.inf
        else:
            du, de = _rel_diff(ut, uc), _rel_diff(et, ec)
        rows.append(SegmentCounts(seg_id, ut, uc, et, ec, du, de, missing))
        if abs(du) > threshold or abs(de) > threshold:
            flagged = True
    return CountImbalance(tuple(rows), threshold, flagged)


def arm_reports(group: GroupData, config: AnalysisConfig, segment_corrs=None) -> dict:
    """Arm estimates of every kind as used for lift.

    Naive and normalized integrate with their natural weights (events and
    users), which reproduces the pooled estimators exactly; the
    correlation-adjusted estimate uses ``config.segment_weighting``.
    """
    corrs = segment_corrs or [correlation_for(s.table, config) for s in group.segments if s.n_users > 0]
    out = {}
    for kind in EstimatorKind:
        rep = arm_estimate(group, kind, config, NATURAL_WEIGHTING.get(kind, config.segment_weighting), corrs)
        if kind in NATURAL_WEIGHTING:
            rep = _replace_estimate(rep, point_estimate(group.pooled(), kind))
        out[kind] = rep
    return out


def compare_groups(
    treatment: GroupData, control: GroupData, config: AnalysisConfig | None = None
) -> LiftReport:
    """Treatment-minus-control lift per estimator kind with a two-sided z-test.

    Naive and normalized arm estimates are the pooled estimators; the
    correlation-adjusted estimate integrates per-segment estimates with
    ``config.segment_weighting``.
    """
    config = config or AnalysisConfig()
    if treatment.n_users == 0 or control.n_users == 0:
        raise EmptyDataError("both groups must be nonempty")
    t_reports = arm_reports(treatment, config)
    c_reports = arm_reports(control, config)
    lifts = {kind: _lift(kind, t_reports[kind], c_reports[kind]) for kind in EstimatorKind}
    simpson = detect_simpson(treatment, control)
    counts = monitor_counts(treatment, control, config.count_threshold)
    return LiftReport(lifts, simpson.flag, simpson, counts, t_reports, c_reports)


def _replace_estimate(rep: EstimateReport, value: float) -> EstimateReport:
    return EstimateReport(
        rep.kind, value, rep.se, rep.se_method, rep.rho, rep.n_users, rep.n_events, rep.diagnostics
    )


def _lift(kind, rt: EstimateReport, rc: EstimateReport) -> KindLift:
    delta = rt.estimate - rc.estimate
    rel = delta / rc.estimate if rc.estimate != 0 else math.nan
    se = math.sqrt(rt.se**2 + rc.se**2)
    degenerate = False
    if not math.isfinite(se):
        z, p = math.nan, math.nan
    elif se == 0.0:
        degenerate = True
        if delta == 0.0:
            z, p = 0.0, 1.0
        else:
            z, p = math.copysign(math.inf, delta), 0.0
    else:
        z = delta / se
        p = two_sided_p(z)
    return KindLift(kind, rt.estimate, rc.estimate, delta, rel, se, z, p, degenerate)
