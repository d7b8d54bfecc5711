import io
import json
import random

import jsonschema
import numpy as np
import pytest

from ratiometrics import cli
from ratiometrics.analysis import analyze, estimate, load_schema
from ratiometrics.errors import DataFormatError, EmptyDataError
from ratiometrics.estimators import naive_mean, normalized_mean
from ratiometrics.io import detect_format, export_userstats, ingest
from ratiometrics.model import AnalysisConfig
from ratiometrics.simulation import SegmentSpec, generate_group, latent_corr_for

SIMPSON_CSV = """group,segment,user_id,n,sum
control,s1,u1,300,200
control,s2,u2,30,10
treatment,s1,u1,24,20
treatment,s2,u2,200,100
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def events_csv(rows):
    return "group,segment,user_id,value\n" + "".join(f"{g},{s},{u},{v!r}\n" for g, s, u, v in rows)


def random_events(seed, users=40):
    rng = np.random.default_rng(seed)
    rows = []
    for arm in ("control", "treatment"):
        for i in range(users):
            seg = f"s{i % 3}"
            for _ in range(int(rng.integers(1, 6))):
                rows.append((arm, seg, f"{arm[0]}{i}", float(rng.integers(0, 2))))
    return rows


def tables_equal(a, b):
    assert sorted(a.groups) == sorted(b.groups)
    for label in a.groups:
        ga, gb = a.groups[label], b.groups[label]
        assert ga.segment_ids == gb.segment_ids
        for sa, sb in zip(ga.segments, gb.segments):
            assert sa.table.user_ids == sb.table.user_ids
            for col in ("n", "sum", "sumsq"):
                assert np.array_equal(getattr(sa.table, col), getattr(sb.table, col))


def test_events_aggregate(tmp_path):
    p = write(
        tmp_path, "e.csv", events_csv([("c", "s", "u", 1.0), ("c", "s", "u", 0.0), ("c", "s", "u", 1.0)])
    )
    res = ingest(p)
    u = res.group("c").segment("s").users[0]
    assert (u.n, u.sum, u.sumsq) == (3, 2.0, 2.0)
    assert (res.rows, res.users, res.format) == (3, 1, "events-csv")


def test_events_jsonl(tmp_path):
    lines = [json.dumps({"group": "c", "segment": "s", "user_id": "u", "value": v}) for v in (1, 0.5)]
    res = ingest(write(tmp_path, "e.jsonl", "\n".join(lines) + "\n"))
    u = res.group("c").segment("s").users[0]
    assert (u.n, u.sum, u.sumsq) == (2, 1.5, 1.25)
    with pytest.raises(DataFormatError, match="line 2"):
        ingest(write(tmp_path, "bad.jsonl", lines[0] + "\n{nope\n"))
    with pytest.raises(DataFormatError, match="keys"):
        ingest(write(tmp_path, "bad2.jsonl", '{"group": "c"}\n'))


def test_simpson_userstats_binary(tmp_path):
    p = write(tmp_path, "t1.csv", SIMPSON_CSV)
    with pytest.raises(DataFormatError, match="sumsq"):
        ingest(p)
    res = ingest(p, binary=True)
    ctl = res.group("control").pooled()
    assert naive_mean(ctl) == pytest.approx(7 / 11, abs=1e-15)
    assert normalized_mean(ctl) == pytest.approx(0.5, abs=1e-15)
    assert detect_format(p) == "userstats-csv"


def test_empty_file(tmp_path):
    with pytest.raises(EmptyDataError, match="no data"):
        ingest(write(tmp_path, "e.csv", "group,segment,user_id,value\n"))


@pytest.mark.parametrize(
    "body, message",
    [
        ("c,s,u,1\nc,s,u\n", "line 3"),
        ("c,s,u,nan\n", "non-finite"),
        ("c,s,u,inf\n", "non-finite"),
        ("c,s,u,abc\n", "not a number"),
        ("c,,u,1\n", "empty segment"),
    ],
)
def test_events_errors(tmp_path, body, message):
    with pytest.raises(DataFormatError, match=message):
        ingest(write(tmp_path, "e.csv", "group,segment,user_id,value\n" + body))


def test_bad_header(tmp_path):
    with pytest.raises(DataFormatError, match="line 1"):
        ingest(write(tmp_path, "e.csv", "grp,segment,user_id,value\nc,s,u,1\n"), format="events-csv")


def test_userstats_errors_and_merge(tmp_path):
    head = "group,segment,user_id,n,sum,sumsq\n"
    with pytest.raises(DataFormatError, match="inconsistent sufficient statistics"):
        ingest(write(tmp_path, "a.csv", head + "c,s,u,2,2,1\n"))
    with pytest.raises(DataFormatError, match="positive integer"):
        ingest(write(tmp_path, "b.csv", head + "c,s,u,0,0,0\n"))
    res = ingest(write(tmp_path, "c.csv", head + "c,s,u,2,1,1\nc,s,u,3,2,2\nc,s,v,1,1,1\n"))
    u = res.group("c").segment("s").users[0]
    assert (u.n, u.sum, u.sumsq) == (5, 3.0, 3.0)
    assert res.merged_duplicates == 1 and res.users == 2


def test_stream_input():
    res = ingest(io.StringIO(events_csv([("c", "s", "u", 2.5)])), format="events-csv")
    assert res.group("c").n_events == 1
    with pytest.raises(DataFormatError):
        ingest(io.StringIO("x"))


def test_userstats_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    rows = [("g", f"s{i % 2}", f"u{i % 17}", float(v)) for i, v in enumerate(rng.normal(size=300) * 1e3)]
    first = ingest(write(tmp_path, "e.csv", events_csv(rows)))
    buf = io.StringIO()
    export_userstats(first.groups, buf)
    second = ingest(write(tmp_path, "u.csv", buf.getvalue()))
    tables_equal(first, second)
    buf2 = io.StringIO()
    export_userstats(second.groups, buf2)
    assert buf2.getvalue() == buf.getvalue()


def test_event_order_invariance(tmp_path):
    rows = random_events(1)
    shuffled = rows[:]
    random.Random(4).shuffle(shuffled)
    a = ingest(write(tmp_path, "a.csv", events_csv(rows)))
    b = ingest(write(tmp_path, "b.csv", events_csv(shuffled)))
    cfg = AnalysisConfig(se_method="bootstrap", bootstrap_iters=50)
    assert analyze(cfg, a).to_json() == analyze(cfg, b).to_json()


@pytest.mark.parametrize("se", ["model", "delta", "bootstrap"])
def test_reports_validate_against_schema(tmp_path, se):
    schema = load_schema()
    cfg = AnalysisConfig(se_method=se, bootstrap_iters=30)
    res = ingest(write(tmp_path, "a.csv", events_csv(random_events(2))))
    jsonschema.validate(json.loads(analyze(cfg, res).to_json()), schema)
    jsonschema.validate(json.loads(estimate(cfg, list(res.groups.values()), res).to_json()), schema)
    t1 = ingest(write(tmp_path, "t1.csv", SIMPSON_CSV), binary=True)
    jsonschema.validate(json.loads(analyze(cfg, t1).to_json()), schema)


def test_null_fields_carry_reasons(tmp_path):
    text = "group,segment,user_id,n,sum,sumsq\ncontrol,s,a,1,1,1\ntreatment,s,b,1,0,0\n"
    report = analyze(AnalysisConfig(), ingest(write(tmp_path, "d.csv", text)))
    assert report.exit_code == 3

    def walk(node):
        if isinstance(node, dict):
            for k, v in node.items():
                if v is None and k not in ("input", "lift", "missing_in"):
                    assert k in node.get("null_reasons", {}), k
                walk(v)
        elif isinstance(node, list):
            for v in node:
                walk(v)

    walk(report.payload)
    jsonschema.validate(report.payload, load_schema())


def test_analyze_errors(tmp_path):
    one = ingest(write(tmp_path, "a.csv", events_csv([("c", "s", "u", 1.0)])))
    with pytest.raises(DataFormatError, match="two arms"):
        analyze(AnalysisConfig(), one)


def test_analyze_simpson_report(tmp_path):
    rep = analyze(AnalysisConfig(), ingest(write(tmp_path, "t1.csv", SIMPSON_CSV), binary=True)).payload
    kinds = {k["kind"]: k for k in rep["lift"]["kinds"]}
    assert kinds["naive"]["delta"] == pytest.approx(15 / 28 - 7 / 11, abs=1e-12)
    assert kinds["normalized"]["delta"] == pytest.approx(1 / 6, abs=1e-12)
    assert rep["lift"]["simpson_flag"] and rep["lift"]["count_imbalance"]["flagged"]
    assert rep["seed"] == 0 and rep["schema_version"] == "1.0.0"


def test_missing_segment_flagged(tmp_path):
    rows = [("control", "a", "u", 1.0), ("control", "a", "u", 0.0), ("control", "b", "v", 1.0)]
    rows += [("control", "a", "w", 1.0), ("treatment", "a", "x", 1.0), ("treatment", "a", "y", 0.0)]
    rep = analyze(AnalysisConfig(), ingest(write(tmp_path, "m.csv", events_csv(rows)))).payload
    seg_b = [c for c in rep["lift"]["count_imbalance"]["segments"] if c["segment_id"] == "b"][0]
    assert seg_b["missing_in"] == "treatment"
    assert seg_b["null_reasons"]["rel_diff_users"] == "missing_in_treatment"


def export_arms(tmp_path, latent, n_users=20_000, seed=0):
    rng = np.random.default_rng(seed)
    seg = [SegmentSpec(1.0, 2.0, 0.3, 0.04, latent)]
    groups = [generate_group(rng, n_users, seg, "control"), generate_group(rng, n_users, seg, "treatment")]
    buf = io.StringIO()
    export_userstats(groups, buf)
    return write(tmp_path, "arms.csv", buf.getvalue())


def test_example2_export_end_to_end(tmp_path):
    path = export_arms(tmp_path, latent_corr_for(0.5, 0.3))
    rep = analyze(AnalysisConfig(), ingest(path)).payload
    for group in rep["groups"]:
        se = {e["kind"]: e["se"] for e in group["pooled"]}
        assert se["corr_adjusted"] <= se["naive"] and se["corr_adjusted"] <= se["normalized"]


# --- command line ----------------------------------------------------------


def run_cli(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_analyze_and_estimate(tmp_path, capsys):
    p = write(tmp_path, "t1.csv", SIMPSON_CSV)
    code, out, _ = run_cli(["analyze", p, "--binary"], capsys)
    assert code == 0 and json.loads(out)["lift"]["simpson_flag"]
    code, out, _ = run_cli(["estimate", p, "--binary", "--group", "control", "--pooled-only"], capsys)
    d = json.loads(out)
    assert code == 0 and len(d["groups"]) == 1 and "segments" not in d["groups"][0]
    out_path = tmp_path / "r.json"
    assert (
        run_cli(
            ["analyze", p, "--binary", "--se", "bootstrap", "--bootstrap-iters", "20", "-o", str(out_path)],
            capsys,
        )[0]
        == 0
    )
    jsonschema.validate(json.loads(out_path.read_text()), load_schema())


def test_cli_two_files(tmp_path, capsys):
    p = write(tmp_path, "t1.csv", SIMPSON_CSV)
    code, out, _ = run_cli(["analyze", p, p, "--binary", "--treatment", "control"], capsys)
    assert code == 0
    assert all(k["delta"] == 0.0 and k["p_value"] == 1.0 for k in json.loads(out)["lift"]["kinds"])


def test_cli_exit_codes(tmp_path, capsys):
    empty = write(tmp_path, "e.csv", "group,segment,user_id,value\n")
    assert run_cli(["estimate", empty], capsys)[0] == 2
    assert run_cli(["estimate", str(tmp_path / "missing.csv")], capsys)[0] == 2
    single = write(tmp_path, "s.csv", events_csv([("c", "s", "u", 1.0)]))
    assert run_cli(["analyze", single], capsys)[0] == 2
    degenerate = write(
        tmp_path, "d.csv", events_csv([("control", "s", "a", 1.0), ("treatment", "s", "b", 0.0)])
    )
    code, out, _ = run_cli(["analyze", degenerate], capsys)
    assert code == 3 and json.loads(out)["status"]["degenerate"]
    p = write(tmp_path, "t1.csv", SIMPSON_CSV)
    assert run_cli(["analyze", p, "--binary", "--alpha", "2"], capsys)[0] == 4
    assert run_cli(["analyze", p, "--rho-clamp", "1,0"], capsys)[0] == 4
    assert run_cli(["analyze", p, "--rho-estimator", "bogus"], capsys)[0] == 4
    assert run_cli(["simulate", "example9"], capsys)[0] == 4
    assert run_cli(["simulate", "example1", "--reps", "0"], capsys)[0] == 4
    assert run_cli([], capsys)[0] == 4


def test_cli_seed_from_environment(tmp_path, capsys, monkeypatch):
    p = write(tmp_path, "t1.csv", SIMPSON_CSV)
    monkeypatch.setenv(cli.SEED_ENV, "17")
    assert json.loads(run_cli(["estimate", p, "--binary"], capsys)[1])["seed"] == 17
    assert json.loads(run_cli(["estimate", p, "--binary", "--seed", "3"], capsys)[1])["seed"] == 3
    monkeypatch.setenv(cli.SEED_ENV, "x")
    assert run_cli(["estimate", p, "--binary"], capsys)[0] == 4


def test_cli_export(tmp_path, capsys):
    p = write(tmp_path, "e.csv", events_csv([("c", "s", "u", 1.0), ("c", "s", "u", 3.0)]))
    code, out, _ = run_cli(["export", p], capsys)
    assert code == 0 and out == "group,segment,user_id,n,sum,sumsq\nc,s,u,2,4.0,10.0\n"


def test_cli_simulate_byte_identical(tmp_path, capsys):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli(["simulate", "example1", "--seed", "7", "--reps", "200", "-o", a], capsys)[0] == 0
    assert run_cli(["simulate", "example1", "--seed", "7", "--reps", "200", "-o", b], capsys)[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_cli_simulate_example2_shape(tmp_path, capsys):
    prefix = str(tmp_path / "e2")
    code, out, _ = run_cli(["simulate", "example2", "--reps", "1000", "-o", prefix], capsys)
    assert code == 0
    lines = (tmp_path / "e2.csv").read_text().splitlines()
    assert len(lines) == 1 + 27
    assert "corr_adjusted" in out


def test_cli_simulate_example3_shape(tmp_path, capsys):
    prefix = str(tmp_path / "e3")
    assert run_cli(["simulate", "example3", "--reps", "20", "-o", prefix], capsys)[0] == 0
    rows = json.loads((tmp_path / "e3.json").read_text())["rows"]
    assert len(rows) == 24
    assert sorted({r["param"] for r in rows}) == [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08]
    assert all(0 <= r["power"] <= 1 for r in rows)


def test_cli_simulate_custom(tmp_path, capsys):
    prefix = str(tmp_path / "c")
    args = ["simulate", "custom", "--segment", "0.5,2,0.3,0.04,0.2", "--segment", "0.5,4,0.6,0.05,0.4,ar1"]
    assert run_cli(args + ["--reps", "10", "--n-users", "200", "-o", prefix], capsys)[0] == 0
    assert run_cli(["simulate", "custom", "--segment", "1,2,3"], capsys)[0] == 4
