"""Data model: per-user sufficient statistics, segmented arms, analysis config.

Every estimator in the package is a function of three numbers per user:
the observation count ``n``, the value sum and the sum of squares. Raw
event values are aggregated once at ingestion and never retained.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Union

import numpy as np

from ratiometrics.errors import EmptyDataError, InvalidDataError

# Relative slack for the Cauchy-Schwarz check sumsq >= sum**2 / n.
_CS_RTOL = 1e-9


class RhoMethod(str, enum.Enum):
    S3_S1 = "s3s1"
    S3_S2 = "s3s2"
    EXACT_MOMENT = "exact-moment"


class WeightMode(str, enum.Enum):
    EXACT = "exact"
    POWER = "power"


class SEMethod(str, enum.Enum):
    MODEL = "model"
    DELTA = "delta"
    BOOTSTRAP = "bootstrap"


class SegmentWeighting(str, enum.Enum):
    USERS = "users"
    EVENTS = "events"


@dataclass(frozen=True)
class UserStat:
    """Aggregated repeated measures of one user.

    Values may be any finite reals (negative values such as refunds are
    allowed); nothing downstream assumes binary outcomes.
    """

    user_id: str
    n: int
    sum: float
    sumsq: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidDataError(f"user {self.user_id!r}: n must be a positive integer, got {self.n}")
        if not (math.isfinite(self.sum) and math.isfinite(self.sumsq)):
            raise InvalidDataError(f"user {self.user_id!r}: non-finite statistics")
        if not _cauchy_schwarz_ok(self.n, self.sum, self.sumsq):
            raise InvalidDataError(
                f"user {self.user_id!r}: inconsistent sufficient statistics "
                f"(sumsq={self.sumsq} < sum^2/n={self.sum * self.sum / self.n})"
            )

    @property
    def mean(self) -> float:
        return self.sum / self.n


def _cauchy_schwarz_ok(n, s, q) -> bool:
    floor = s * s / n
    return q >= floor - _CS_RTOL * max(abs(floor), abs(q), 1.0)


def user_stat_from_values(values: Iterable[float], user_id: str = "") -> UserStat:
    """Aggregates one user's observations into a :class:`UserStat`.

    Sums use ``math.fsum`` so the result does not depend on value order.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise EmptyDataError("empty user")
    return UserStat(
        user_id=str(user_id),
        n=len(vals),
        sum=math.fsum(vals),
        sumsq=math.fsum(v * v for v in vals),
    )


@dataclass(frozen=True, eq=False)
class UserTable:
    """Columnar view of a list of users.

    Estimators work on this form; lists of :class:`UserStat` are converted
    on entry. Arrays are made read-only.
    """

    n: np.ndarray
    sum: np.ndarray
    sumsq: np.ndarray
    user_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        n = np.ascontiguousarray(self.n, dtype=np.int64)
        s = np.ascontiguousarray(self.sum, dtype=np.float64)
        q = np.ascontiguousarray(self.sumsq, dtype=np.float64)
        if not (n.ndim == s.ndim == q.ndim == 1 and n.shape == s.shape == q.shape):
            raise InvalidDataError("n, sum and sumsq must be 1-D arrays of equal length")
        if self.user_ids is not None and len(self.user_ids) != n.shape[0]:
            raise InvalidDataError("user_ids length does not match the statistics")
        for a in (n, s, q):
            a.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "sum", s)
        object.__setattr__(self, "sumsq", q)

    @classmethod
    def from_users(cls, users: Sequence[UserStat]) -> UserTable:
        return cls(
            n=np.array([u.n for u in users], dtype=np.int64),
            sum=np.array([u.sum for u in users], dtype=np.float64),
            sumsq=np.array([u.sumsq for u in users], dtype=np.float64),
            user_ids=tuple(u.user_id for u in users),
        )

    @classmethod
    def concat(cls, tables: Sequence[UserTable]) -> UserTable:
        if not tables:
            return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0), ())
        ids = None
        if all(t.user_ids is not None for t in tables):
            ids = tuple(i for t in tables for i in t.user_ids)
        return cls(
            n=np.concatenate([t.n for t in tables]),
            sum=np.concatenate([t.sum for t in tables]),
            sumsq=np.concatenate([t.sumsq for t in tables]),
            user_ids=ids,
        )

    def validate(self) -> None:
        if np.any(self.n < 1):
            raise InvalidDataError("every user needs n >= 1")
        if not (np.all(np.isfinite(self.sum)) and np.all(np.isfinite(self.sumsq))):
            raise InvalidDataError("non-finite statistics")
        floor = self.sum**2 / self.n
        slack = _CS_RTOL * np.maximum(np.maximum(np.abs(floor), np.abs(self.sumsq)), 1.0)
        if np.any(self.sumsq < floor - slack):
            raise InvalidDataError("inconsistent sufficient statistics")

    def take(self, idx) -> UserTable:
        ids = None if self.user_ids is None else tuple(self.user_ids[i] for i in np.asarray(idx))
        return UserTable(self.n[idx], self.sum[idx], self.sumsq[idx], ids)

    def __len__(self) -> int:
        return int(self.n.shape[0])

    @property
    def n_users(self) -> int:
        return len(self)

    @property
    def n_events(self) -> int:
        return int(self.n.sum())

    @property
    def means(self) -> np.ndarray:
        return self.sum / self.n

    def users(self) -> list[UserStat]:
        ids = self.user_ids or tuple(str(i) for i in range(len(self)))
        return [
            UserStat(uid, int(n), float(s), float(q))
            for uid, n, s, q in zip(ids, self.n, self.sum, self.sumsq)
        ]


Users = Union[UserTable, Sequence[UserStat]]


def as_table(users: Users) -> UserTable:
    if isinstance(users, UserTable):
        return users
    return UserTable.from_users(list(users))


@dataclass(frozen=True, eq=False)
class SegmentData:
    segment_id: str
    table: UserTable

    def __post_init__(self):
        if not isinstance(self.table, UserTable):
            object.__setattr__(self, "table", as_table(self.table))
        ids = self.table.user_ids
        if ids is not None and len(set(ids)) != len(ids):
            raise InvalidDataError(f"segment {self.segment_id!r}: duplicate user_id")

    @property
    def users(self) -> list[UserStat]:
        return self.table.users()

    @property
    def n_users(self) -> int:
        return self.table.n_users

    @property
    def n_events(self) -> int:
        return self.table.n_events


@dataclass(frozen=True, eq=False)
class GroupData:
    group_label: str
    segments: tuple[SegmentData, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        ids = [s.segment_id for s in segs]
        if len(set(ids)) != len(ids):
            raise InvalidDataError(f"group {self.group_label!r}: duplicate segment_id")

    @classmethod
    def single(cls, label: str, users: Users, segment_id: str = "all") -> GroupData:
        return cls(label, (SegmentData(segment_id, as_table(users)),))

    def segment(self, segment_id: str) -> SegmentData:
        for s in self.segments:
            if s.segment_id == segment_id:
                return s
        raise KeyError(segment_id)

    @property
    def segment_ids(self) -> list[str]:
        return [s.segment_id for s in self.segments]

    def pooled(self) -> UserTable:
        return UserTable.concat([s.table for s in self.segments])

    def segment_codes(self) -> np.ndarray:
        """Segment index of every user in :meth:`pooled` order."""
        return np.repeat(np.arange(len(self.segments)), [s.n_users for s in self.segments])

    @property
    def n_users(self) -> int:
        return sum(s.n_users for s in self.segments)

    @property
    def n_events(self) -> int:
        return sum(s.n_events for s in self.segments)


@dataclass(frozen=True)
class AnalysisConfig:
    """Knobs shared by estimation, inference and the CLI.

    ``freeze_rho`` keeps the full-sample correlation inside bootstrap
    replicates instead of re-estimating it per replicate.
    """

    rho_method: RhoMethod = RhoMethod.S3_S1
    weight_mode: WeightMode = WeightMode.EXACT
    se_method: SEMethod = SEMethod.DELTA
    bootstrap_iters: int = 1000
    seed: int = 0
    alpha: float = 0.05
    segment_weighting: SegmentWeighting = SegmentWeighting.USERS
    rho_clamp: tuple[float, float] = (0.0, 1.0)
    freeze_rho: bool = False
    count_threshold: float = 0.05
    pooled_only: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rho_method", RhoMethod(self.rho_method))
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))
        object.__setattr__(self, "se_method", SEMethod(self.se_method))
        object.__setattr__(self, "segment_weighting", SegmentWeighting(self.segment_weighting))
        lo, hi = (float(x) for x in self.rho_clamp)
        object.__setattr__(self, "rho_clamp", (lo, hi))
        if not (-1.0 <= lo < hi <= 1.0):
            raise ValueError(f"rho_clamp must satisfy -1 <= lo < hi <= 1, got {self.rho_clamp}")
        if self.bootstrap_iters < 1 or (self.se_method is SEMethod.BOOTSTRAP and self.bootstrap_iters < 2):
            raise ValueError("bootstrap_iters must be >= 2 for bootstrap standard errors")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.count_threshold < 0:
            raise ValueError("count_threshold must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "rho_method": self.rho_method.value,
            "weight_mode": self.weight_mode.value,
            "se_method": self.se_method.value,
            "bootstrap_iters": self.bootstrap_iters,
            "seed": int(self.seed),
            "alpha": self.alpha,
            "segment_weighting": self.segment_weighting.value,
            "rho_clamp": list(self.rho_clamp),
            "freeze_rho": self.freeze_rho,
            "count_threshold": self.count_threshold,
            "pooled_only": self.pooled_only,
        }
