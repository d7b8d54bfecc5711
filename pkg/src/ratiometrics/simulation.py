"""Deterministic generators of correlated repeated measures and study runners.

Binary observations are produced by thresholding latent standard normals:
``X_j = 1`` iff ``latent_j > Phi^-1(1 - p)``. Two latent structures are
supported: equicorrelated (one shared factor per user,
``sqrt(c) Z0 + sqrt(1 - c) Z_j``) and AR(1) along the observation index.

Random numbers: replication ``k`` of a study uses numpy's PCG64 seeded with
``SeedSequence(seed, spawn_key=(k,))``. The same stream is reused for every
grid value of the study (common random numbers), so differences between
grid values are not blurred by independent noise. Normal deviates come from
numpy's ziggurat sampler and Poisson counts from numpy's Poisson sampler.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, special

from ratiometrics.estimators import EstimatorKind, correlation_adjusted_mean, estimate_correlation
from ratiometrics.estimators import naive_mean, normalized_mean
from ratiometrics.inference import _lift, arm_reports, correlation_for
from ratiometrics.model import (
    AnalysisConfig,
    GroupData,
    RhoMethod,
    SegmentData,
    SEMethod,
    UserStat,
    UserTable,
    WeightMode,
)

STUDY_COLUMNS = ("preset", "param", "kind", "truth", "est_mean", "est_sd", "rho_mean", "rho_sd", "power")


def normal_cdf(x):
    return special.ndtr(x)


def normal_ppf(q):
    return special.ndtri(q)


class Structure(str, enum.Enum):
    EQUICORRELATED = "equicorrelated"
    AR1 = "ar1"


def dichotomized_corr(latent_corr: float, p: float, nodes: int = 64) -> float:
    """Correlation of two thresholded equicorrelated latent normals.

    Uses ``P11 - p**2 = (1/2pi) * int_0^asin(c) exp(-t**2 / (1 + sin u)) du``
    with ``t = Phi^-1(1 - p)``; the integrand is smooth, so fixed-order
    Gauss-Legendre is accurate to machine precision.
    """
    if not 0.0 <= latent_corr < 1.0:
        raise ValueError("latent_corr must lie in [0, 1)")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if latent_corr == 0.0:
        return 0.0
    t = float(normal_ppf(1.0 - p))
    upper = math.asin(latent_corr)
    x, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * upper * (x + 1.0)
    integral = 0.5 * upper * np.dot(w, np.exp(-t * t / (1.0 + np.sin(u))))
    return float(integral / (2.0 * math.pi) / (p * (1.0 - p)))


def latent_corr_for(target: float, p: float) -> float:
    """Latent correlation whose dichotomization at ``p`` has correlation ``target``."""
    if target == 0.0:
        return 0.0
    hi = 1.0 - 1e-12
    if not 0.0 < target < dichotomized_corr(hi, p):
        raise ValueError(f"target correlation {target} not attainable at p={p}")
    return float(optimize.brentq(lambda c: dichotomized_corr(c, p) - target, 0.0, hi, xtol=1e-14))


@dataclass(frozen=True)
class SegmentSpec:
    """Distribution of one user segment.

    ``n_i = 1 + Poisson(n_lambda)``; ``p_i ~ Normal(p_mean, p_sd)`` truncated
    to (0, 1) by rejection.
    """

    weight: float = 1.0
    n_lambda: float = 10.0
    p_mean: float = 0.3
    p_sd: float = 0.05
    latent_corr: float = 0.0
    structure: Structure = Structure.EQUICORRELATED
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "structure", Structure(self.structure))
        if not 0.0 < self.weight <= 1.0:
            raise ValueError("segment weight must lie in (0, 1]")
        if self.n_lambda <= 0:
            raise ValueError("n_lambda must be positive")
        if not 0.0 < self.p_mean < 1.0:
            raise ValueError("p_mean must lie in (0, 1)")
        if self.p_sd < 0:
            raise ValueError("p_sd must be nonnegative")
        if not 0.0 <= self.latent_corr < 1.0:
            raise ValueError("latent_corr must lie in [0, 1)")


def _latent_path(z0, z, owner, pos, latent_corr, structure, max_n):
    if structure is Structure.EQUICORRELATED:
        return math.sqrt(latent_corr) * z0[owner] + math.sqrt(1.0 - latent_corr) * z
    x = z.copy()
    c = math.sqrt(1.0 - latent_corr * latent_corr)
    for j in range(1, max_n):
        at = np.flatnonzero(pos == j)
        x[at] = latent_corr * x[at - 1] + c * z[at]
    return x


def gen_user(n: int, p: float, latent_corr: float, structure, rng: np.random.Generator) -> UserStat:
    """One user's ``n`` correlated Bernoulli(p) observations, aggregated."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if not 0.0 <= latent_corr < 1.0:
        raise ValueError("latent_corr must lie in [0, 1)")
    structure = Structure(structure)
    z0 = rng.standard_normal(1)
    z = rng.standard_normal(n)
    latent = _latent_path(z0, z, np.zeros(n, dtype=np.int64), np.arange(n), latent_corr, structure, n)
    s = float(np.count_nonzero(latent > normal_ppf(1.0 - p)))
    return UserStat("", n, s, s)


def _truncated_normal(rng, mean, sd, size):
    p = mean + sd * rng.standard_normal(size)
    bad = (p <= 0.0) | (p >= 1.0)
    while np.any(bad):
        p[bad] = mean + sd * rng.standard_normal(int(bad.sum()))
        bad = (p <= 0.0) | (p >= 1.0)
    return p


def generate_users(
    rng: np.random.Generator, n_users: int, spec: SegmentSpec, p_shift: float = 0.0
) -> UserTable:
    """Vectorized generation of ``n_users`` users of one segment."""
    n = 1 + rng.poisson(spec.n_lambda, size=n_users)
    p = _truncated_normal(rng, spec.p_mean + p_shift, spec.p_sd, n_users)
    total = int(n.sum())
    z0 = rng.standard_normal(n_users)
    z = rng.standard_normal(total)
    owner = np.repeat(np.arange(n_users), n)
    starts = np.cumsum(n) - n
    pos = np.arange(total) - starts[owner]
    latent = _latent_path(z0, z, owner, pos, spec.latent_corr, spec.structure, int(n.max(initial=1)))
    hits = latent > normal_ppf(1.0 - p)[owner]
    s = np.bincount(owner, weights=hits, minlength=n_users)
    return UserTable(n, s, s)


def generate_group(
    rng: np.random.Generator,
    n_users: int,
    segments: Sequence[SegmentSpec],
    label: str = "control",
    p_shift: float = 0.0,
) -> GroupData:
    """Users split across segments by a multinomial draw, then generated per segment."""
    weights = np.array([s.weight for s in segments], dtype=np.float64)
    if len(segments) == 1:
        counts = [n_users]
    else:
        counts = rng.multinomial(n_users, weights / weights.sum())
    segs = []
    for i, (spec, cnt) in enumerate(zip(segments, counts)):
        name = spec.name or f"seg{i + 1}"
        segs.append(SegmentData(name, generate_users(rng, int(cnt), spec, p_shift)))
    return GroupData(label, tuple(segs))


# ---------------------------------------------------------------------------
# Studies.


class Preset(str, enum.Enum):
    EXAMPLE1 = "example1"
    EXAMPLE2 = "example2"
    EXAMPLE3 = "example3"
    EXAMPLE4 = "example4"
    CUSTOM = "custom"


EXAMPLE1_LATENT = (0.0, 0.2, 0.4, 0.6, 0.8)
EXAMPLE2_RHO = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
EXAMPLE3_D = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08)
EXAMPLE3_SEGMENTS = (
    # (weight, lambda, p mean, p sd)
    (1 / 3, 2.0, 0.3, 0.04),
    (1 / 2, 5.0, 0.5, 0.08),
    (1 / 6, 30.0, 0.7, 0.04),
)
EXAMPLE3_RHO = 0.3
EXAMPLE4_AR = 0.9


@dataclass(frozen=True)
class StudySpec:
    """What to simulate.

    ``params`` overrides the preset grid (latent correlations for example1,
    target correlations for example2, AR coefficients for example4).
    ``effect_grid`` holds the shifts ``d`` of the treatment p-means for
    power studies (example3, or custom with ``segments``).
    """

    preset: Preset = Preset.EXAMPLE2
    n_users: int = 1000
    reps: int = 1000
    seed: int = 0
    effect_grid: tuple[float, ...] = ()
    alpha: float = 0.05
    params: tuple[float, ...] = ()
    segments: tuple[SegmentSpec, ...] = ()
    rho_method: RhoMethod = RhoMethod.S3_S1
    weight_mode: WeightMode = WeightMode.POWER
    segment_weighting: str = "users"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "preset", Preset(self.preset))
        object.__setattr__(self, "rho_method", RhoMethod(self.rho_method))
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))
        object.__setattr__(self, "effect_grid", tuple(float(d) for d in self.effect_grid))
        object.__setattr__(self, "params", tuple(float(x) for x in self.params))
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.n_users < 2:
            raise ValueError("n_users must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.preset is Preset.CUSTOM and not self.segments:
            raise ValueError("custom preset needs at least one segment")
        if self.preset is Preset.EXAMPLE3 and not self.grid:
            raise ValueError("example3 needs a nonempty effect grid")

    @property
    def grid(self) -> tuple[float, ...]:
        if self.preset is Preset.EXAMPLE1:
            return self.params or EXAMPLE1_LATENT
        if self.preset is Preset.EXAMPLE2:
            return self.params or EXAMPLE2_RHO
        if self.preset is Preset.EXAMPLE3:
            return self.effect_grid or EXAMPLE3_D
        if self.preset is Preset.EXAMPLE4:
            return self.params or (EXAMPLE4_AR,)
        return self.effect_grid or (0.0,)

    @property
    def is_power_study(self) -> bool:
        return self.preset is Preset.EXAMPLE3 or (self.preset is Preset.CUSTOM and bool(self.effect_grid))


@dataclass(frozen=True)
class StudyRow:
    preset: str
    param: float
    kind: str
    truth: float
    est_mean: float
    est_sd: float
    rho_mean: float
    rho_sd: float
    power: float | None = None


@dataclass
class StudyResult:
    rows: list[StudyRow] = field(default_factory=list)
    spec: StudySpec | None = None

    def row(self, param: float, kind: str) -> StudyRow:
        for r in self.rows:
            if r.kind == kind and math.isclose(r.param, param, rel_tol=0, abs_tol=1e-12):
                return r
        raise KeyError((param, kind))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in self.rows:
            w.writerow(
                ["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in astuple_row(r)]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "columns": list(STUDY_COLUMNS),
            "rows": [asdict(r) for r in self.rows],
        }
        if self.spec is not None:
            payload["spec"] = _spec_dict(self.spec)
        return json.dumps(payload, indent=2, allow_nan=False, default=_json_default)

    def summary_table(self) -> str:
        lines = ["  ".join(f"{c:>10}" for c in STUDY_COLUMNS)]
        for r in self.rows:
            cells = []
            for v in astuple_row(r):
                if v is None:
                    cells.append(f"{'':>10}")
                elif isinstance(v, float):
                    cells.append(f"{v:>10.6f}")
                else:
                    cells.append(f"{v:>10}")
            lines.append("  ".join(cells))
        return "\n".join(lines)


def astuple_row(r: StudyRow) -> tuple:
    return (r.preset, r.param, r.kind, r.truth, r.est_mean, r.est_sd, r.rho_mean, r.rho_sd, r.power)


def _json_default(o):
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(type(o))


def _spec_dict(spec: StudySpec) -> dict:
    d = asdict(spec)
    d["segments"] = [asdict(s) for s in spec.segments]
    return d


def rep_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(k),))))


def _segments_for(spec: StudySpec, param: float) -> list[SegmentSpec]:
    preset = spec.preset
    if preset is Preset.EXAMPLE1:
        return [SegmentSpec(1.0, 10.0, 0.3, 0.05, param)]
    if preset is Preset.EXAMPLE2:
        return [SegmentSpec(1.0, 2.0, 0.3, 0.04, latent_corr_for(param, 0.3))]
    if preset is Preset.EXAMPLE3:
        return [
            SegmentSpec(w, lam, pm, sd, latent_corr_for(EXAMPLE3_RHO, pm), name=f"seg{i + 1}")
            for i, (w, lam, pm, sd) in enumerate(EXAMPLE3_SEGMENTS)
        ]
    if preset is Preset.EXAMPLE4:
        return [SegmentSpec(1.0, 2.0, 0.3, 0.04, param, Structure.AR1)]
    return list(spec.segments)


def _truth(spec: StudySpec, param: float) -> float:
    if spec.preset is Preset.EXAMPLE1:
        return dichotomized_corr(param, 0.3)
    if spec.is_power_study:
        return param
    segs = _segments_for(spec, param)
    w = np.array([s.weight for s in segs])
    return float(np.dot(w / w.sum(), [s.p_mean for s in segs]))


def _config(spec: StudySpec) -> AnalysisConfig:
    return AnalysisConfig(
        rho_method=spec.rho_method,
        weight_mode=spec.weight_mode,
        se_method=SEMethod.DELTA,
        alpha=spec.alpha,
        segment_weighting=spec.segment_weighting,
    )


def _one_rep(spec: StudySpec, k: int, seg_cache: dict) -> np.ndarray:
    """All grid values of replication ``k``: array of shape (grid, columns)."""
    cfg = _config(spec)
    out = []
    for param in spec.grid:
        rng = rep_rng(spec.seed, k)
        segs = seg_cache[param]
        if spec.preset is Preset.EXAMPLE1:
            t = generate_group(rng, spec.n_users, segs).pooled()
            r1 = estimate_correlation(t, RhoMethod.S3_S1, (-1.0, 1.0)).raw_rho
            r2 = estimate_correlation(t, RhoMethod.S3_S2, (-1.0, 1.0)).raw_rho
            out.append([r1, r2])
        elif spec.is_power_study:
            ctrl = generate_group(rng, spec.n_users, segs, "control")
            trt = generate_group(rng, spec.n_users, segs, "treatment", p_shift=param)
            out.append(_power_rep(trt, ctrl, cfg))
        else:
            g = generate_group(rng, spec.n_users, segs)
            if len(g.segments) == 1:
                t = g.segments[0].table
                rho = estimate_correlation(t, spec.rho_method, cfg.rho_clamp).rho_hat
                out.append(
                    [
                        naive_mean(t),
                        normalized_mean(t),
                        correlation_adjusted_mean(t, rho, spec.weight_mode),
                        rho,
                    ]
                )
            else:
                reports = arm_reports(g, cfg)
                vals = [reports[kind].estimate for kind in EstimatorKind]
                rhos = [correlation_for(s.table, cfg).rho_hat for s in g.segments if s.n_users]
                out.append(vals + [float(np.mean(rhos))])
    return np.asarray(out, dtype=np.float64)


def _power_rep(trt: GroupData, ctrl: GroupData, cfg: AnalysisConfig) -> list[float]:
    """Per kind: delta and two-sided p; then mean control-arm segment rho."""
    corr_c = [correlation_for(s.table, cfg) for s in ctrl.segments if s.n_users]
    rt = arm_reports(trt, cfg)
    rc = arm_reports(ctrl, cfg, corr_c)
    row = []
    for kind in EstimatorKind:
        lift = _lift(kind, rt[kind], rc[kind])
        row += [lift.delta, lift.p_value]
    row.append(float(np.mean([c.rho_hat for c in corr_c])))
    return row


def _simulate(spec: StudySpec) -> np.ndarray:
    """Raw per-replication values, shape (reps, grid, columns)."""
    seg_cache = {param: _segments_for(spec, param) for param in spec.grid}
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            parts = list(pool.map(lambda k: _one_rep(spec, k, seg_cache), range(spec.reps)))
    else:
        parts = [_one_rep(spec, k, seg_cache) for k in range(spec.reps)]
    return np.stack(parts)


def _sd(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def run_study(spec: StudySpec) -> StudyResult:
    """Runs a preset or custom study; deterministic given ``spec``."""
    raw = _simulate(spec)
    rows = []
    name = spec.preset.value
    for g, param in enumerate(spec.grid):
        vals = raw[:, g, :]
        truth = _truth(spec, param)
        if spec.preset is Preset.EXAMPLE1:
            for j, method in enumerate((RhoMethod.S3_S1, RhoMethod.S3_S2)):
                x = vals[:, j]
                m, s = float(np.mean(x)), _sd(x)
                rows.append(StudyRow(name, param, method.value, truth, m, s, m, s))
        elif spec.is_power_study:
            rho = vals[:, -1]
            for j, kind in enumerate(EstimatorKind):
                delta, pv = vals[:, 2 * j], vals[:, 2 * j + 1]
                power = float(np.mean(pv < spec.alpha))
                rows.append(
                    StudyRow(
                        name,
                        param,
                        kind.value,
                        truth,
                        float(np.mean(delta)),
                        _sd(delta),
                        float(np.mean(rho)),
                        _sd(rho),
                        power,
                    )
                )
        else:
            rho = vals[:, -1]
            for j, kind in enumerate(EstimatorKind):
                x = vals[:, j]
                rows.append(
                    StudyRow(
                        name,
                        param,
                        kind.value,
                        truth,
                        float(np.mean(x)),
                        _sd(x),
                        float(np.mean(rho)),
                        _sd(rho),
                    )
                )
    return StudyResult(rows, spec)


def power_curve(spec: StudySpec) -> list[tuple[float, dict[str, float]]]:
    """Rejection rate at ``spec.alpha`` per effect size and estimator kind."""
    if not spec.is_power_study:
        raise ValueError("power_curve needs example3 or a custom spec with an effect grid")
    res = run_study(spec)
    out = []
    for d in spec.grid:
        out.append((d, {kind.value: res.row(d, kind.value).power for kind in EstimatorKind}))
    return out
