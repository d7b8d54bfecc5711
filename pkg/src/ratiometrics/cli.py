"""Command-line interface: ``estimate``, ``analyze``, ``simulate`` and ``export``.

Exit codes: 0 success, 2 data error, 3 degenerate analysis, 4 bad arguments.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ratiometrics import __version__
from ratiometrics.analysis import EXIT_BAD_ARGS, EXIT_DATA_ERROR, EXIT_OK, analyze, estimate
from ratiometrics.errors import RatioMetricsError
from ratiometrics.io import FORMATS, IngestResult, export_userstats, ingest
from ratiometrics.model import AnalysisConfig, RhoMethod, SegmentWeighting, SEMethod, WeightMode
from ratiometrics.simulation import Preset, SegmentSpec, Structure, StudySpec, run_study

SEED_ENV = "RATIOMETRICS_SEED"

log = logging.getLogger("ratiometrics")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_ARGS, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _clamp(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected lo,hi")
    return vals


def _segment(text: str) -> SegmentSpec:
    parts = text.split(",")
    if len(parts) not in (5, 6):
        raise argparse.ArgumentTypeError(
            "segment is weight,lambda,p_mean,p_sd,latent_corr[,equicorrelated|ar1]"
        )
    try:
        w, lam, pm, psd, lc = (float(x) for x in parts[:5])
        structure = Structure(parts[5]) if len(parts) == 6 else Structure.EQUICORRELATED
        return SegmentSpec(w, lam, pm, psd, lc, structure)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=FORMATS, help="input format (default: detect)")
    p.add_argument("--binary", action="store_true", help="userstats without sumsq: 0/1 data, sumsq = sum")
    p.add_argument("--rho-estimator", choices=[m.value for m in RhoMethod], default=RhoMethod.S3_S1.value)
    p.add_argument("--weights", choices=[m.value for m in WeightMode], default=WeightMode.EXACT.value)
    p.add_argument("--se", choices=[m.value for m in SEMethod], default=SEMethod.DELTA.value)
    p.add_argument("--bootstrap-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None, help=f"bootstrap seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument(
        "--segment-weighting",
        choices=[m.value for m in SegmentWeighting],
        default=SegmentWeighting.USERS.value,
    )
    p.add_argument("--rho-clamp", type=_clamp, default=(0.0, 1.0), metavar="LO,HI")
    p.add_argument(
        "--freeze-rho", action="store_true", help="bootstrap keeps rho fixed instead of re-estimating"
    )
    p.add_argument("--count-threshold", type=float, default=0.05)
    p.add_argument("--pooled-only", action="store_true", help="omit per-segment sections")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output", "-o", help="write the JSON report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratiometrics", description="Ratio-metric estimation with intra-user correlation.")
    parser.add_argument("--version", action="version", version=f"ratiometrics {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="single-arm estimates per segment and pooled")
    p.add_argument("input", help="input file, or - for stdin")
    p.add_argument("--group", help="only this group label")
    _add_analysis_flags(p)

    p = sub.add_parser("analyze", help="two-arm lift analysis")
    p.add_argument(
        "inputs", nargs="+", metavar="input", help="one file with both arms, or treatment then control"
    )
    p.add_argument("--treatment", default="treatment", help="treatment group label")
    p.add_argument("--control", default="control", help="control group label")
    _add_analysis_flags(p)

    p = sub.add_parser("simulate", help="Monte-Carlo studies")
    p.add_argument("preset", choices=[x.value for x in Preset])
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--n-users", type=int, default=1000)
    p.add_argument("--params", type=_floats, default=(), metavar="X,Y,...", help="override the preset grid")
    p.add_argument("--effect-grid", type=_floats, default=(), metavar="D,...", help="treatment shifts of p")
    p.add_argument("--segment", type=_segment, action="append", default=[], help="custom preset segment")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--rho-estimator", choices=[m.value for m in RhoMethod], default=RhoMethod.S3_S1.value)
    p.add_argument("--weights", choices=[m.value for m in WeightMode], default=WeightMode.POWER.value)
    p.add_argument(
        "--segment-weighting",
        choices=[m.value for m in SegmentWeighting],
        default=SegmentWeighting.USERS.value,
    )
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output", "-o", help="output prefix for .csv and .json (default: the preset name)")

    p = sub.add_parser("export", help="aggregate events into userstats-csv")
    p.add_argument("input")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--output", "-o", help="default: stdout")
    return parser


def _config(args) -> AnalysisConfig:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        return AnalysisConfig(
            rho_method=args.rho_estimator,
            weight_mode=args.weights,
            se_method=args.se,
            bootstrap_iters=args.bootstrap_iters,
            seed=seed,
            alpha=args.alpha,
            segment_weighting=args.segment_weighting,
            rho_clamp=args.rho_clamp,
            freeze_rho=args.freeze_rho,
            count_threshold=args.count_threshold,
            pooled_only=args.pooled_only,
            workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write(text: str, dest: str | None) -> None:
    if dest is None or dest == "-":
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8")


def _single_group(res: IngestResult, label: str, path: str):
    if label in res.groups:
        return res.groups[label]
    if len(res.groups) == 1:
        return next(iter(res.groups.values()))
    raise RatioMetricsError(
        f"{path}: expected one group or a group labelled {label!r}, found {sorted(res.groups)}"
    )


def _cmd_estimate(args) -> int:
    config = _config(args)
    data = ingest(args.input, args.format, args.binary)
    groups = [data.group(args.group)] if args.group else list(data.groups.values())
    report = estimate(config, groups, data)
    _write(report.to_json() + "\n", args.output)
    return report.exit_code


def _cmd_analyze(args) -> int:
    config = _config(args)
    if len(args.inputs) == 1:
        data = ingest(args.inputs[0], args.format, args.binary)
        report = analyze(config, data, args.treatment, args.control)
    elif len(args.inputs) == 2:
        t_res = ingest(args.inputs[0], args.format, args.binary)
        c_res = ingest(args.inputs[1], args.format, args.binary)
        trt = _single_group(t_res, args.treatment, args.inputs[0])
        ctl = _single_group(c_res, args.control, args.inputs[1])
        report = analyze(config, (trt, ctl))
    else:
        raise UsageError("analyze takes one or two input files")
    _write(report.to_json() + "\n", args.output)
    for reason in report.degenerate_reasons:
        log.warning("degenerate: %s", reason)
    return report.exit_code


def _cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        spec = StudySpec(
            preset=args.preset,
            n_users=args.n_users,
            reps=args.reps,
            seed=seed,
            effect_grid=args.effect_grid,
            alpha=args.alpha,
            params=args.params,
            segments=tuple(args.segment),
            rho_method=args.rho_estimator,
            weight_mode=args.weights,
            segment_weighting=args.segment_weighting,
            workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_study(spec)
    prefix = args.output or args.preset
    Path(prefix + ".csv").write_text(result.to_csv(), encoding="utf-8")
    Path(prefix + ".json").write_text(result.to_json(), encoding="utf-8")
    sys.stdout.write(result.summary_table() + "\n")
    return EXIT_OK


def _cmd_export(args) -> int:
    data = ingest(args.input, args.format, args.binary)
    if args.output is None or args.output == "-":
        export_userstats(data.groups, sys.stdout)
    else:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            export_userstats(data.groups, fh)
    return EXIT_OK


COMMANDS = {
    "estimate": _cmd_estimate,
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
    "export": _cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help/--version exit 0; usage errors exit with EXIT_BAD_ARGS
        return exc.code if isinstance(exc.code, int) else EXIT_BAD_ARGS
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ratiometrics: error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    except RatioMetricsError as exc:
        print(f"ratiometrics: data error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except OSError as exc:
        print(f"ratiometrics: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
