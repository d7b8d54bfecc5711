"""Reading event-level and pre-aggregated input files.

Formats:

``events-csv``
    header ``group,segment,user_id,value``; one row per observation.
``events-jsonl``
    one JSON object per line with keys ``group``, ``segment``, ``user_id``
    and ``value``.
``userstats-csv``
    header ``group,segment,user_id,n,sum,sumsq``. With ``binary=True`` the
    ``sumsq`` column may be omitted; it is then set equal to ``sum``, which
    holds for 0/1 data.

Users are aggregated per (group, segment, user_id) with exactly rounded
sums, and groups, segments and users are sorted by label, so the result
does not depend on row order.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from collections import defaultdict
from collections.abc import Iterable
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from ratiometrics.errors import DataFormatError, EmptyDataError
from ratiometrics.model import GroupData, SegmentData, UserTable, _cauchy_schwarz_ok

EVENTS_HEADER = ("group", "segment", "user_id", "value")
USERSTATS_HEADER = ("group", "segment", "user_id", "n", "sum", "sumsq")
FORMATS = ("events-csv", "events-jsonl", "userstats-csv")


@dataclass(frozen=True)
class IngestResult:
    groups: dict[str, GroupData]
    format: str
    rows: int
    users: int
    merged_duplicates: int

    def group(self, label: str) -> GroupData:
        try:
            return self.groups[label]
        except KeyError:
            raise DataFormatError(f"group {label!r} not found; available: {sorted(self.groups)}") from None

    def summary(self) -> dict:
        return {
            "format": self.format,
            "rows": self.rows,
            "users": self.users,
            "merged_duplicates": self.merged_duplicates,
            "groups": sorted(self.groups),
        }


@contextmanager
def _open(source):
    if source == "-":
        yield sys.stdin
    elif isinstance(source, (str, Path)):
        try:
            with open(source, newline="", encoding="utf-8") as fh:
                yield fh
        except FileNotFoundError:
            raise DataFormatError(f"no such file: {source}") from None
    else:
        yield source


def detect_format(source) -> str:
    """Guesses the format from the extension or the CSV header."""
    if isinstance(source, (str, Path)) and str(source) != "-":
        p = Path(source)
        if p.suffix in (".jsonl", ".ndjson"):
            return "events-jsonl"
        with _open(p) as fh:
            first = fh.readline()
        if first.lstrip().startswith("{"):
            return "events-jsonl"
        cols = tuple(c.strip() for c in first.strip().split(","))
        if cols[:5] == USERSTATS_HEADER[:5]:
            return "userstats-csv"
        return "events-csv"
    raise DataFormatError("cannot detect the format of a stream; pass it explicitly")


def _label(value, what: str, line: int) -> str:
    if value is None or (isinstance(value, str) and value == ""):
        raise DataFormatError(f"empty {what}", line)
    if isinstance(value, (dict, list, bool)) or (isinstance(value, float) and not math.isfinite(value)):
        raise DataFormatError(f"invalid {what}: {value!r}", line)
    return str(value)


def _finite(text, what: str, line: int) -> float:
    if isinstance(text, bool):
        raise DataFormatError(f"{what} must be a number", line)
    try:
        x = float(text)
    except (TypeError, ValueError):
        raise DataFormatError(f"{what} is not a number: {text!r}", line) from None
    if not math.isfinite(x):
        raise DataFormatError(f"non-finite {what}: {text!r}", line)
    return x


def _events_csv(fh) -> Iterable[tuple[int, str, str, str, float]]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != EVENTS_HEADER:
        raise DataFormatError(f"events-csv header must be exactly {','.join(EVENTS_HEADER)}", 1)
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != 4:
            raise DataFormatError(f"expected 4 fields, got {len(row)}", line)
        g, s, u, v = row
        yield line, _label(g, "group", line), _label(s, "segment", line), _label(u, "user_id", line), _finite(
            v, "value", line
        )


def _events_jsonl(fh):
    for line, text in enumerate(fh, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid JSON: {exc.msg}", line) from None
        if not isinstance(obj, dict) or set(obj) != set(EVENTS_HEADER):
            raise DataFormatError(f"object keys must be exactly {sorted(EVENTS_HEADER)}", line)
        yield (
            line,
            _label(obj["group"], "group", line),
            _label(obj["segment"], "segment", line),
            _label(obj["user_id"], "user_id", line),
            _finite(obj["value"], "value", line),
        )


def _build(tree: dict) -> dict[str, GroupData]:
    groups = {}
    for g in sorted(tree):
        segs = []
        for s in sorted(tree[g]):
            users = tree[g][s]
            ids = sorted(users)
            n = np.array([users[i][0] for i in ids], dtype=np.int64)
            sums = np.array([users[i][1] for i in ids], dtype=np.float64)
            sq = np.array([users[i][2] for i in ids], dtype=np.float64)
            segs.append(SegmentData(s, UserTable(n, sums, sq, tuple(ids))))
        groups[g] = GroupData(g, tuple(segs))
    return groups


def _ingest_events(rows) -> tuple[dict, int, int]:
    values: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    count = 0
    for _, g, s, u, v in rows:
        values[g][s][u].append(v)
        count += 1
    tree: dict = {}
    n_users = 0
    for g, segs in values.items():
        tree[g] = {}
        for s, users in segs.items():
            tree[g][s] = {
                u: (len(vs), math.fsum(vs), math.fsum(x * x for x in vs)) for u, vs in users.items()
            }
            n_users += len(users)
    return tree, count, n_users


def _ingest_userstats(fh, binary: bool) -> tuple[dict, int, int, int]:
    reader = csv.reader(fh)
    header = next(reader, None)
    header = tuple(h.strip() for h in header) if header is not None else ()
    has_sumsq = header == USERSTATS_HEADER
    if not has_sumsq and not (binary and header == USERSTATS_HEADER[:5]):
        expected = ",".join(USERSTATS_HEADER)
        hint = (
            " (or without sumsq when binary)"
            if binary
            else "; pass binary=True / --binary to derive sumsq for 0/1 data"
        )
        raise DataFormatError(f"userstats-csv header must be exactly {expected}{hint}", 1)
    width = len(header)
    parts: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    count = 0
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != width:
            raise DataFormatError(f"expected {width} fields, got {len(row)}", line)
        g = _label(row[0], "group", line)
        s = _label(row[1], "segment", line)
        u = _label(row[2], "user_id", line)
        n_val = _finite(row[3], "n", line)
        if n_val != int(n_val) or n_val < 1:
            raise DataFormatError(f"n must be a positive integer, got {row[3]!r}", line)
        total = _finite(row[4], "sum", line)
        sumsq = _finite(row[5], "sumsq", line) if has_sumsq else total
        if not _cauchy_schwarz_ok(int(n_val), total, sumsq):
            raise DataFormatError("inconsistent sufficient statistics (sumsq < sum^2/n)", line)
        parts[g][s][u].append((int(n_val), total, sumsq))
        count += 1
    tree: dict = {}
    n_users = merged = 0
    for g, segs in parts.items():
        tree[g] = {}
        for s, users in segs.items():
            out = {}
            for u, pieces in users.items():
                merged += len(pieces) - 1
                out[u] = (
                    sum(p[0] for p in pieces),
                    math.fsum(p[1] for p in pieces),
                    math.fsum(p[2] for p in pieces),
                )
            tree[g][s] = out
            n_users += len(out)
    return tree, count, n_users, merged


def ingest(source: str | Path | IO[str], format: str | None = None, binary: bool = False) -> IngestResult:
    """Reads a file (path, ``"-"`` for stdin, or open text stream) into groups.

    Raises:
        DataFormatError: malformed header or row (with its line number),
            non-finite values, or inconsistent sufficient statistics.
        EmptyDataError: the file has a valid header but no rows.
    """
    fmt = format or detect_format(source)
    if fmt not in FORMATS:
        raise DataFormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    merged = 0
    with _open(source) as fh:
        if fmt == "userstats-csv":
            tree, rows, users, merged = _ingest_userstats(fh, binary)
        else:
            reader = _events_csv(fh) if fmt == "events-csv" else _events_jsonl(fh)
            tree, rows, users = _ingest_events(reader)
    if rows == 0:
        raise EmptyDataError("no data")
    return IngestResult(_build(tree), fmt, rows, users, merged)


def export_userstats(groups: Iterable[GroupData] | dict, dest: IO[str]) -> None:
    """Writes groups as ``userstats-csv`` using round-trip float formatting."""
    if isinstance(groups, dict):
        groups = groups.values()
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(USERSTATS_HEADER)
    for g in groups:
        for seg in g.segments:
            t = seg.table
            ids = t.user_ids or tuple(str(i) for i in range(len(t)))
            for uid, n, s, q in zip(ids, t.n, t.sum, t.sumsq):
                w.writerow([g.group_label, seg.segment_id, uid, int(n), repr(float(s)), repr(float(q))])
