"""Ratings ingestion, train/test splitting and synthetic test problems."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .completion import ObservationSet
from .manifold import LowRankFactors
from .matcore import thin_qr

logger = logging.getLogger(__name__)


class FormatError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class RatingsFileSpec:
    """Layout of a user/item/rating[/timestamp] file.

    MovieLens 100K uses tabs (``u.data``); 1M and 10M use ``"::"``.
    """

    path: str
    delimiter: str = "\t"
    strict: bool = False


@dataclass
class RatingsData:
    observations: ObservationSet
    user_ids: np.ndarray
    item_ids: np.ndarray
    malformed_lines: list = field(default_factory=list)


def load_ratings(spec):
    """Read a ratings file into an :class:`ObservationSet`.

    External user/item ids are remapped to dense 0-based indices in
    ascending id order; ``user_ids[k]`` is the external id of row ``k``.
    A repeated (user, item) pair keeps its last value. Malformed lines are
    skipped and listed in ``malformed_lines`` unless ``spec.strict`` is set,
    in which case the first one raises :class:`FormatError`.
    """
    path = Path(spec.path)
    users, items, values = [], [], []
    bad = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(spec.delimiter)
            try:
                if len(parts) < 3:
                    raise ValueError("expected at least 3 fields")
                u, it, val = int(parts[0]), int(parts[1]), float(parts[2])
                if not math.isfinite(val):
                    raise ValueError("non-finite rating")
            except ValueError as exc:
                if spec.strict:
                    raise FormatError(f"malformed record ({exc})", path, lineno) from None
                bad.append(lineno)
                continue
            users.append(u)
            items.append(it)
            values.append(val)
    if not users:
        raise FormatError("no records", path)
    if bad:
        logger.warning("%s: skipped %d malformed lines (first at line %d)", path, len(bad), bad[0])

    users = np.array(users, dtype=np.int64)
    items = np.array(items, dtype=np.int64)
    values = np.array(values, dtype=np.float64)
    user_ids, rows = np.unique(users, return_inverse=True)
    item_ids, cols = np.unique(items, return_inverse=True)

    # Last occurrence wins: scan reversed, keep first of each key.
    key = rows.astype(np.int64) * len(item_ids) + cols
    _, first_rev = np.unique(key[::-1], return_index=True)
    keep = len(key) - 1 - first_rev
    obs = ObservationSet(len(user_ids), len(item_ids), rows[keep], cols[keep], values[keep])
    return RatingsData(obs, user_ids, item_ids, bad)


def split(obs, test_fraction, seed):
    """Seeded random train/test partition of the observed entries.

    Each entry goes to the test set with probability ``test_fraction``. A row
    with two or more entries always keeps at least one in train: if every
    entry of such a row was drawn for test, the one with the largest draw is
    moved back.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    draws = rng.random(len(obs))
    in_test = draws < test_fraction

    counts = np.bincount(obs.rows, minlength=obs.m)
    train_counts = np.bincount(obs.rows[~in_test], minlength=obs.m)
    for row in np.flatnonzero((counts >= 2) & (train_counts == 0)):
        idx = np.flatnonzero(obs.rows == row)
        in_test[idx[np.argmax(draws[idx])]] = False
    return obs.subset(~in_test), obs.subset(in_test)


def write_observations(obs, path):
    """Canonical text format: header ``m n count``, then ``row col value``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{obs.m} {obs.n} {len(obs)}\n")
        for i, j, v in zip(obs.rows.tolist(), obs.cols.tolist(), obs.values.tolist()):
            fh.write(f"{i} {j} {v!r}\n")


def read_observations(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise FormatError("header must be 'm n count'", path, 1)
        try:
            m, n, count = (int(x) for x in header)
        except ValueError:
            raise FormatError("header must hold three integers", path, 1) from None
        rows = np.empty(count, dtype=np.int64)
        cols = np.empty(count, dtype=np.int64)
        values = np.empty(count, dtype=np.float64)
        k = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3 or k >= count:
                raise FormatError("expected 'row col value' within the declared count", path, lineno)
            try:
                rows[k], cols[k], values[k] = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise FormatError("unparsable record", path, lineno) from None
            k += 1
    if k != count:
        raise FormatError(f"header declares {count} records, found {k}", path)
    try:
        return ObservationSet(m, n, rows, cols, values)
    except ValueError as exc:
        raise FormatError(str(exc), path) from None


def gapped_spectrum(size, r, top=(100.0, 10.0), tail=1.0, decay=0.98):
    """``r`` leading values spaced linearly over ``top`` followed by a
    geometrically decaying tail starting at ``tail``."""
    if not 1 <= r <= size:
        raise ValueError(f"need 1 <= r <= size, got r={r}, size={size}")
    head = np.linspace(top[0], top[1], r)
    rest = tail * decay ** np.arange(size - r)
    return np.concatenate([head, rest])


@dataclass(frozen=True)
class SyntheticSpec:
    m: int
    n: int
    spectrum: Sequence[float]
    noise: float = 0.0
    observed_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        spec = np.asarray(self.spectrum, dtype=np.float64)
        if spec.ndim != 1 or spec.size < 1 or spec.size > min(self.m, self.n):
            raise ValueError("spectrum length must lie in [1, min(m, n)]")
        if np.any(spec <= 0) or np.any(np.diff(spec) > 0):
            raise ValueError("spectrum must be positive and non-increasing")
        if not 0.0 < self.observed_fraction <= 1.0:
            raise ValueError("observed_fraction must lie in (0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @property
    def rank(self):
        return len(self.spectrum)


@dataclass
class SyntheticProblem:
    M: np.ndarray
    truth: LowRankFactors
    observations: Optional[ObservationSet]
    held_out: Optional[ObservationSet]


def make_synthetic(spec):
    """``M = U* diag(spectrum) V*^T + noise * G`` with random orthonormal
    ``U*, V*``. With ``observed_fraction < 1`` the entries are split by a
    seeded uniform mask into observed and held-out sets."""
    rng = np.random.default_rng(spec.seed)
    k = spec.rank
    U, _ = thin_qr(rng.standard_normal((spec.m, k)))
    V, _ = thin_qr(rng.standard_normal((spec.n, k)))
    sigma = np.asarray(spec.spectrum, dtype=np.float64)
    M = (U * sigma) @ V.T
    if spec.noise > 0:
        M = M + spec.noise * rng.standard_normal(M.shape)
    truth = LowRankFactors(U, np.diag(sigma), V)
    if spec.observed_fraction >= 1.0:
        return SyntheticProblem(M, truth, ObservationSet.from_dense(M), None)
    mask = rng.random(M.shape) < spec.observed_fraction
    return SyntheticProblem(
        M, truth, ObservationSet.from_dense(M, mask), ObservationSet.from_dense(M, ~mask)
    )


def truncated_svd(M, r):
    """Reference best rank-``r`` approximation by a full dense SVD."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return U[:, :r], s[:r], Vt[:r].T


def relative_error(Y, M_r):
    """``||Y - M_r||_F / ||M_r||_F``."""
    return float(np.linalg.norm(Y - M_r) / np.linalg.norm(M_r))
