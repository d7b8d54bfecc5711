import numpy as np
import pytest

from ratiometrics.model import GroupData, SegmentData, UserTable


def table(n, s, q=None, prefix="u"):
    n = np.asarray(n, dtype=np.int64)
    s = np.asarray(s, dtype=np.float64)
    q = s.copy() if q is None else np.asarray(q, dtype=np.float64)
    return UserTable(n, s, q, tuple(f"{prefix}{i}" for i in range(len(n))))


def random_table(rng, n_users, binary=True, max_n=12):
    """Random sufficient statistics built from explicit observations."""
    n = rng.integers(1, max_n + 1, size=n_users)
    sums, sq = [], []
    for k in n:
        x = rng.integers(0, 2, size=k).astype(float) if binary else rng.normal(1.0, 2.0, size=k)
        sums.append(x.sum())
        sq.append((x * x).sum())
    return table(n, sums, sq)


def random_group(rng, label, n_segments=3, users=(5, 40)):
    segs = []
    for j in range(n_segments):
        t = random_table(rng, int(rng.integers(*users)))
        segs.append(SegmentData(f"s{j}", t))
    return GroupData(label, tuple(segs))


@pytest.fixture
def simpson_pair():
    """Two users, each its own segment; signs of naive and normalized lift disagree."""
    control = GroupData(
        "control",
        (
            SegmentData("s1", table([300], [200], prefix="c")),
            SegmentData("s2", table([30], [10], prefix="d")),
        ),
    )
    treatment = GroupData(
        "treatment",
        (
            SegmentData("s1", table([24], [20], prefix="c")),
            SegmentData("s2", table([200], [100], prefix="d")),
        ),
    )
    return treatment, control


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
