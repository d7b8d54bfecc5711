"""Per-segment and pooled analysis reports with a versioned JSON layout."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

from ratiometrics import __version__
from ratiometrics.errors import DataFormatError
from ratiometrics.estimators import EstimatorKind, variance_preference
from ratiometrics.inference import (
    EstimateReport,
    LiftReport,
    arm_reports,
    compare_groups,
    correlation_for,
    estimate_report,
)
from ratiometrics.io import IngestResult
from ratiometrics.model import AnalysisConfig, GroupData

SCHEMA_VERSION = "1.0.0"

EXIT_OK = 0
EXIT_DATA_ERROR = 2
EXIT_DEGENERATE = 3
EXIT_BAD_ARGS = 4


@dataclass(frozen=True)
class AnalysisReport:
    payload: dict
    degenerate_reasons: tuple[str, ...] = ()

    @property
    def exit_code(self) -> int:
        return EXIT_DEGENERATE if self.degenerate_reasons else EXIT_OK

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.payload, indent=indent, allow_nan=False)


def load_schema() -> dict:
    text = resources.files("ratiometrics").joinpath("schemas/analysis_report.schema.json").read_text()
    return json.loads(text)


def _estimate_dict(rep: EstimateReport) -> dict:
    d = {
        "kind": rep.kind.value,
        "estimate": rep.estimate,
        "se": rep.se,
        "se_method": rep.se_method.value,
        "n_users": rep.n_users,
        "n_events": rep.n_events,
    }
    diag = dict(rep.diagnostics)
    reason = diag.pop("se_null_reason", None)
    if diag:
        d["diagnostics"] = diag
    if reason and not math.isfinite(rep.se):
        d["null_reasons"] = {"se": reason}
    return d


def _segment_section(seg, config: AnalysisConfig) -> dict:
    t = seg.table
    corr = correlation_for(t, config)
    pref = variance_preference(t.n, corr.rho_hat)
    out = {
        "segment_id": seg.segment_id,
        "n_users": seg.n_users,
        "n_events": seg.n_events,
        "correlation": corr.to_dict(),
        "preference": {"choice": pref.choice.value, "threshold": pref.threshold},
        "estimates": [_estimate_dict(estimate_report(t, kind, config, corr)) for kind in EstimatorKind],
    }
    if pref.threshold is None:
        out["preference"]["null_reasons"] = {"threshold": "equal_counts"}
    if corr.degenerate and not math.isfinite(corr.raw_rho):
        out["correlation"]["null_reasons"] = {
            "raw_rho": "correlation_unidentifiable",
            "s3": "correlation_unidentifiable",
        }
    return out


def _group_section(group: GroupData, config: AnalysisConfig, reports: dict | None = None) -> dict:
    reports = reports or arm_reports(group, config)
    out = {"label": group.group_label, "n_users": group.n_users, "n_events": group.n_events}
    if not config.pooled_only:
        out["segments"] = [_segment_section(s, config) for s in group.segments if s.n_users > 0]
    out["pooled"] = [_estimate_dict(reports[kind]) for kind in EstimatorKind]
    return out


def _lift_section(lift: LiftReport) -> dict:
    kinds = []
    for kind, lk in lift.lifts.items():
        kinds.append(
            {
                "kind": kind.value,
                "treatment": lk.treatment,
                "control": lk.control,
                "delta": lk.delta,
                "relative_lift": lk.relative_lift,
                "se_delta": lk.se_delta,
                "z": lk.z,
                "p_value": lk.p_value,
                "degenerate_variance": lk.degenerate_variance,
            }
        )
    sim = lift.simpson
    counts = lift.count_imbalance
    return {
        "kinds": kinds,
        "simpson_flag": lift.simpson_flag,
        "simpson": {
            "flag": sim.flag,
            "delta_naive": sim.delta_naive,
            "delta_normalized": sim.delta_normalized,
            "reversals": [
                {
                    "segment_id": r.segment_id,
                    "kind": r.kind.value,
                    "segment_delta": r.segment_delta,
                    "pooled_delta": r.pooled_delta,
                }
                for r in sim.reversals
            ],
        },
        "count_imbalance": {
            "threshold": counts.threshold,
            "flagged": counts.flagged,
            "segments": [
                {
                    "segment_id": c.segment_id,
                    "users_treatment": c.users_treatment,
                    "users_control": c.users_control,
                    "events_treatment": c.events_treatment,
                    "events_control": c.events_control,
                    "rel_diff_users": c.rel_diff_users,
                    "rel_diff_events": c.rel_diff_events,
                    "missing_in": c.missing_in,
                    **(
                        {
                            "null_reasons": dict.fromkeys(
                                ("rel_diff_users", "rel_diff_events"), f"missing_in_{c.missing_in}"
                            )
                        }
                        if c.missing_in
                        else {}
                    ),
                }
                for c in counts.segments
            ],
        },
    }


def _sanitize(obj):
    """Replaces non-finite floats by null and records a reason code next to them."""
    if isinstance(obj, dict):
        reasons = dict(obj.get("null_reasons", {}))
        out = {}
        for k, v in obj.items():
            if k == "null_reasons":
                continue
            if isinstance(v, float) and not math.isfinite(v):
                if k not in reasons:
                    reasons[k] = (
                        "not_a_number"
                        if math.isnan(v)
                        else ("positive_infinity" if v > 0 else "negative_infinity")
                    )
                out[k] = None
            else:
                out[k] = _sanitize(v)
        if reasons:
            out["null_reasons"] = reasons
        return out
    if isinstance(obj, list):
        return [_sanitize(v) for v in obj]
    return obj


def _envelope(config: AnalysisConfig, data: IngestResult | None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "ratiometrics", "version": __version__},
        "seed": int(config.seed),
        "config": config.to_dict(),
        "input": data.summary() if data is not None else None,
    }


def estimate(
    config: AnalysisConfig, groups: list[GroupData], data: IngestResult | None = None
) -> AnalysisReport:
    """Single-arm report: per-segment and pooled estimates for each group."""
    payload = _envelope(config, data)
    payload["groups"] = [_group_section(g, config) for g in groups]
    payload["lift"] = None
    payload["status"] = {"degenerate": False, "reasons": []}
    return AnalysisReport(_sanitize(payload))


def analyze(
    config: AnalysisConfig,
    data: IngestResult | tuple[GroupData, GroupData],
    treatment: str = "treatment",
    control: str = "control",
) -> AnalysisReport:
    """Two-arm report: per-segment estimates, pooled integration and lift.

    ``data`` is an ingest result (arms picked by label) or an explicit
    ``(treatment, control)`` pair.
    """
    if isinstance(data, IngestResult):
        if len(data.groups) < 2:
            raise DataFormatError(
                "lift analysis needs two arms; input has only " + ", ".join(sorted(data.groups))
            )
        trt, ctl = data.group(treatment), data.group(control)
        source = data
    else:
        trt, ctl = data
        source = None
    lift = compare_groups(trt, ctl, config)
    reasons = []
    for kind, lk in lift.lifts.items():
        if lk.degenerate_variance:
            reasons.append(f"{kind.value}: zero pooled standard error")
        elif not math.isfinite(lk.p_value):
            reasons.append(f"{kind.value}: undefined standard error")
    payload = _envelope(config, source)
    payload["groups"] = [
        _group_section(trt, config, lift.treatment),
        _group_section(ctl, config, lift.control),
    ]
    payload["lift"] = _lift_section(lift)
    payload["status"] = {"degenerate": bool(reasons), "reasons": reasons}
    return AnalysisReport(_sanitize(payload), tuple(reasons))
