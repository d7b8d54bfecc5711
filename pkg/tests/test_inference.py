import math
from dataclasses import replace

import numpy as np
import pytest

from ratiometrics.errors import EmptyDataError
from ratiometrics.estimators import (
    EstimatorKind,
    correlation_adjusted_mean,
    estimate_correlation,
    naive_mean,
    normalized_mean,
    point_estimate,
)
from ratiometrics.inference import (
    NATURAL_WEIGHTING,
    arm_estimate,
    bootstrap,
    compare_groups,
    correlation_for,
    detect_simpson,
    estimate_report,
    integrate_segments,
    monitor_counts,
    se_delta,
    se_model,
    two_sided_p,
)
from ratiometrics.model import AnalysisConfig, GroupData, SegmentData, SegmentWeighting, SEMethod, UserTable

from conftest import random_group, random_table, table

KINDS = list(EstimatorKind)


def test_two_sided_p():
    assert two_sided_p(0.0) == 1.0
    assert two_sided_p(1.959963984540054) == pytest.approx(0.05, rel=1e-12)
    assert two_sided_p(-3.0) == two_sided_p(3.0)


def test_se_model_examples():
    const = table([3, 2], [3, 2])
    assert se_model(const, "naive", correlation_for(const, AnalysisConfig())) == 0.0
    singles = table([1, 1, 1, 1], [1, 0, 0, 1])
    corr = correlation_for(singles, AnalysisConfig())
    assert corr.degenerate and corr.rho_hat == 0.0
    assert se_model(singles, "naive", corr) == pytest.approx(math.sqrt(corr.sigma2_hat / 4))
    t = table([1, 3], [1, 1])
    fixed = replace(estimate_correlation(t), rho_hat=0.4, sigma2_hat=1.0)
    for kind in ("naive", "normalized"):
        assert se_model(t, kind, fixed) == pytest.approx(math.sqrt(0.40))


def test_se_delta_examples():
    assert se_delta(table([2, 2], [2, 0]), "naive") == pytest.approx(0.5, rel=1e-14)
    assert se_delta(table([3, 3, 3], [1, 1, 1]), "naive") == 0.0
    t = random_table(np.random.default_rng(2), 50)
    r = t.sum / t.n
    assert se_delta(t, "normalized") == pytest.approx(r.std(ddof=1) / math.sqrt(len(t)), rel=1e-12)
    with pytest.raises(EmptyDataError, match=">= 2 users"):
        se_delta(table([3], [1]), "naive")


def test_se_delta_matches_ratio_formula():
    rng = np.random.default_rng(5)
    t = random_table(rng, 80)
    r = t.sum / t.n
    for kind, rho in [("naive", 0.0), ("corr_adjusted", 0.37)]:
        u = t.n.astype(float) if kind == "naive" else t.n / (1 + (t.n - 1) * rho)
        a, b = u * r, u
        big_r = a.mean() / b.mean()
        cov = np.cov(a, b, ddof=1)
        expected = math.sqrt(
            (cov[0, 0] - 2 * big_r * cov[0, 1] + big_r**2 * cov[1, 1]) / (len(t) * b.mean() ** 2)
        )
        assert se_delta(t, kind, rho) == pytest.approx(expected, rel=1e-12)


def test_bootstrap_constant_data():
    t = table([3, 2, 4], [3, 2, 4])
    for kind in KINDS:
        assert bootstrap(t, kind, AnalysisConfig(bootstrap_iters=50)).se == 0.0


def test_bootstrap_replicates_follow_documented_streams():
    rng = np.random.default_rng(8)
    t = random_table(rng, 60)
    cfg = AnalysisConfig(bootstrap_iters=20, seed=99)
    res = bootstrap(t, "corr_adjusted", cfg)
    for k in (0, 7, 19):
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(99, spawn_key=(k,))))
        sample = t.take(g.integers(0, len(t), size=len(t)))
        rho = estimate_correlation(sample, cfg.rho_method, cfg.rho_clamp).rho_hat
        assert res.replicates[k] == pytest.approx(correlation_adjusted_mean(sample, rho), rel=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_bootstrap_deterministic_across_workers(kind):
    t = random_table(np.random.default_rng(3), 3000)
    base = bootstrap(t, kind, AnalysisConfig(bootstrap_iters=400, seed=5))
    for workers in (2, 4):
        other = bootstrap(t, kind, AnalysisConfig(bootstrap_iters=400, seed=5, workers=workers))
        assert other.se == base.se
        assert np.array_equal(other.replicates, base.replicates)
    assert bootstrap(t, kind, AnalysisConfig(bootstrap_iters=400, seed=6)).se != base.se


def test_bootstrap_fallback_counted():
    # two users, one with n=1: resamples picking only the singleton are unidentifiable
    t = table([1, 4], [1, 2])
    res = bootstrap(t, "corr_adjusted", AnalysisConfig(bootstrap_iters=200))
    assert 0 < res.fallbacks < 200


def test_estimate_report_fields():
    t = random_table(np.random.default_rng(4), 40)
    for method in SEMethod:
        cfg = AnalysisConfig(se_method=method, bootstrap_iters=100)
        rep = estimate_report(t, "corr_adjusted", cfg)
        assert rep.se >= 0 and rep.se_method is method
        assert rep.n_events >= rep.n_users == 40
    rep = estimate_report(table([4], [2]), "naive", AnalysisConfig())
    assert math.isnan(rep.se) and rep.diagnostics["se_null_reason"] == "too_few_users"


def test_simpson_pair_lift(simpson_pair):
    trt, ctl = simpson_pair
    rep = compare_groups(trt, ctl, AnalysisConfig())
    assert rep.lifts[EstimatorKind.NAIVE].delta == pytest.approx(15 / 28 - 7 / 11, abs=1e-12)
    assert rep.lifts[EstimatorKind.NORMALIZED].delta == pytest.approx(1 / 6, abs=1e-12)
    assert rep.simpson_flag
    assert rep.count_imbalance.flagged
    seg1 = rep.count_imbalance.segments[0]
    assert (seg1.events_treatment, seg1.events_control) == (24, 300)


def test_identical_arms():
    g = random_group(np.random.default_rng(1), "a")
    rep = compare_groups(g, g, AnalysisConfig())
    for lift in rep.lifts.values():
        assert lift.delta == 0.0 and lift.p_value == pytest.approx(1.0)
    assert not rep.simpson_flag
    assert not rep.count_imbalance.flagged
    assert all(c.rel_diff_users == 0 and c.rel_diff_events == 0 for c in rep.count_imbalance.segments)


def test_swap_arms_flips_sign_only():
    rng = np.random.default_rng(12)
    a, b = random_group(rng, "a"), random_group(rng, "b")
    ab, ba = compare_groups(a, b), compare_groups(b, a)
    for kind in KINDS:
        x, y = ab.lifts[kind], ba.lifts[kind]
        assert x.delta == pytest.approx(-y.delta, rel=1e-12)
        assert x.z == pytest.approx(-y.z, rel=1e-12)
        assert x.p_value == pytest.approx(y.p_value, rel=1e-12)
        assert 0.0 <= x.p_value <= 1.0


def _scaled(group, c):
    segs = tuple(
        SegmentData(
            s.segment_id, UserTable(s.table.n, s.table.sum * c, s.table.sumsq * c * c, s.table.user_ids)
        )
        for s in group.segments
    )
    return GroupData(group.group_label, segs)


def test_simpson_flag_scale_invariant(simpson_pair):
    trt, ctl = simpson_pair
    for c in (1e-3, 0.5, 7.0, 1e6):
        assert detect_simpson(_scaled(trt, c), _scaled(ctl, c)).flag
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = random_group(rng, "a"), random_group(rng, "b")
        flag = detect_simpson(a, b).flag
        assert detect_simpson(_scaled(a, 3.7), _scaled(b, 3.7)).flag == flag


def test_simpson_single_segment_has_no_reversals():
    rng = np.random.default_rng(3)
    a, b = random_group(rng, "a", 1), random_group(rng, "b", 1)
    assert detect_simpson(a, b).reversals == ()


def test_monitor_counts():
    ctl = GroupData("c", (SegmentData("s", table([1] * 100, [0] * 100)),))
    trt = GroupData("t", (SegmentData("s", table([1] * 110, [0] * 110)),))
    rep = monitor_counts(trt, ctl)
    assert rep.segments[0].rel_diff_users == pytest.approx(0.10)
    assert rep.flagged
    assert not monitor_counts(trt, ctl, threshold=0.2).flagged


def test_monitor_counts_missing_segment():
    ctl = GroupData("c", (SegmentData("s", table([2], [1])), SegmentData("x", table([3], [1], prefix="v"))))
    trt = GroupData("t", (SegmentData("s", table([2], [1])),))
    rep = monitor_counts(trt, ctl)
    missing = [c for c in rep.segments if c.segment_id == "x"][0]
    assert missing.missing_in == "treatment" and math.isinf(missing.rel_diff_users)
    assert rep.flagged


def test_integrate_segments_single_segment_identity():
    t = random_table(np.random.default_rng(0), 10)
    rep = estimate_report(t, "normalized", AnalysisConfig())
    for mode in SegmentWeighting:
        assert integrate_segments([rep], mode) == rep.estimate
    with pytest.raises(EmptyDataError):
        integrate_segments([])


@pytest.mark.parametrize("seed", range(25))
def test_segment_identities(seed):
    rng = np.random.default_rng(seed)
    g = random_group(rng, "g", n_segments=int(rng.integers(2, 6)))
    cfg = AnalysisConfig()
    pooled = g.pooled()
    reps = {k: [estimate_report(s.table, k, cfg) for s in g.segments] for k in ("naive", "normalized")}
    assert integrate_segments(reps["naive"], "events") == pytest.approx(naive_mean(pooled), rel=1e-12)
    assert integrate_segments(reps["normalized"], "users") == pytest.approx(
        normalized_mean(pooled), rel=1e-12
    )


def test_arm_estimate_natural_weighting_equals_pooled():
    g = random_group(np.random.default_rng(21), "g", 4)
    for kind, w in NATURAL_WEIGHTING.items():
        rep = arm_estimate(g, kind, AnalysisConfig(), w)
        assert rep.estimate == pytest.approx(point_estimate(g.pooled(), kind), rel=1e-12)


def test_arm_delta_se_single_segment_matches_se_delta():
    t = random_table(np.random.default_rng(6), 70)
    g = GroupData.single("g", t)
    cfg = AnalysisConfig()
    for kind in KINDS:
        rho = correlation_for(t, cfg).rho_hat
        assert arm_estimate(g, kind, cfg).se == pytest.approx(se_delta(t, kind, rho), rel=1e-12)


def test_arm_bootstrap_deterministic_across_workers():
    g = random_group(np.random.default_rng(30), "g", 3, users=(200, 400))
    base = arm_estimate(g, "corr_adjusted", AnalysisConfig(se_method="bootstrap", bootstrap_iters=300))
    par = arm_estimate(
        g, "corr_adjusted", AnalysisConfig(se_method="bootstrap", bootstrap_iters=300, workers=3)
    )
    assert base.se == par.se


def test_degenerate_variance_lift():
    g = GroupData.single("a", table([2, 2], [1, 1]))
    h = GroupData.single("b", table([2, 2], [2, 2]))
    rep = compare_groups(h, g, AnalysisConfig())
    lift = rep.lifts[EstimatorKind.NAIVE]
    assert lift.degenerate_variance and lift.p_value == 0.0 and lift.delta == 0.5
