"""Matrix completion with SNI on a set of observed entries.

The objective is ``f1(Y) = 1/2 * sum_{(i,j) in Omega} (M_ij - Y_ij)^2``; its
negative gradient is the residual restricted to ``Omega``, held as a CSR
matrix so that the two products per step cost O(|Omega| r).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .integrators import dense_residual, iterate, sni_step
from .manifold import LowRankFactors


class EmptyTestSet(ValueError):
    pass


@dataclass(frozen=True)
class ObservationSet:
    """Observed entries of an m x n matrix in canonical (row, col) order."""

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if self.m < 1 or self.n < 1:
            raise ValueError(f"invalid dimensions {self.m}x{self.n}")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.m or cols.min() < 0 or cols.max() >= self.n:
                raise ValueError("observation index out of range")
            if not np.all(np.isfinite(values)):
                raise ValueError("observation values must be finite")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1:
            same = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if same.any():
                k = int(np.argmax(same))
                raise ValueError(f"duplicate observation at ({rows[k]}, {cols[k]})")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dense(cls, M, mask=None):
        M = np.asarray(M, dtype=np.float64)
        if mask is None:
            mask = np.ones(M.shape, dtype=bool)
        rows, cols = np.nonzero(mask)
        return cls(M.shape[0], M.shape[1], rows, cols, M[rows, cols])

    def __len__(self):
        return int(self.rows.size)

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def is_full(self):
        return len(self) == self.m * self.n

    def to_dense(self, fill=0.0):
        out = np.full((self.m, self.n), fill, dtype=np.float64)
        out[self.rows, self.cols] = self.values
        return out

    def mask(self):
        out = np.zeros((self.m, self.n), dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def subset(self, selector):
        return ObservationSet(self.m, self.n, self.rows[selector], self.cols[selector], self.values[selector])


@dataclass(frozen=True)
class PredictionScore:
    rmse: float
    count: int


def _check_dims(obs, f):
    if obs.shape != f.shape:
        raise ValueError(f"observations are {obs.shape}, factors are {f.shape}")


def predict_entries(f, rows, cols):
    """``(U S V^T)_ij`` for the given positions, O(r) per entry."""
    US = f.U @ f.S
    return np.einsum("ij,ij->i", US[rows], f.V[cols])


def observed_residual(obs, f):
    """Residual values ``M_ij - Y_ij`` in the canonical order of ``obs``."""
    _check_dims(obs, f)
    if len(obs) == 0:
        return np.zeros(0)
    return obs.values - predict_entries(f, obs.rows, obs.cols)


def sparse_residual(obs, f):
    """The residual ``P_Omega(M - Y)`` as an m x n CSR matrix."""
    res = observed_residual(obs, f)
    return sp.csr_matrix((res, (obs.rows, obs.cols)), shape=obs.shape)


def objective_f1(obs, f):
    res = observed_residual(obs, f)
    return 0.5 * float(res @ res)


def _sparse_gradient(obs):
    # Keeps the residual of the latest factors: the monitor evaluates f1 at
    # the new iterate and the next step needs the same residual.
    cache = {}

    def residual(f):
        if cache.get("f") is not f:
            cache["f"] = f
            cache["res"] = observed_residual(obs, f)
        return cache["res"]

    def gradient(f):
        return sp.csr_matrix((residual(f), (obs.rows, obs.cols)), shape=obs.shape)

    def monitor(f, rec):
        res = residual(f)
        rec.error = 0.5 * float(res @ res)

    return gradient, monitor


def _dense_gradient(obs):
    M = obs.to_dense()
    gradient = dense_residual(M)

    def monitor(f, rec):
        res = gradient(f)
        rec.error = 0.5 * float(np.sum(res * res))

    return gradient, monitor


def objective_floor(rel_change=1e-9):
    """Secondary stop: relative change of f1 between iterations below a floor."""

    def stop(prev, rec):
        if rec.error == 0.0:
            return True
        return abs(prev.error - rec.error) / rec.error < rel_change

    return stop


def sni_complete(obs: ObservationSet, f0: LowRankFactors, cfg, rel_change=1e-9):
    """Fit rank-``cfg.rank`` factors to the observed entries with SNI.

    The trace ``error`` column holds ``f1`` at each iterate. A fully observed
    set goes through the dense residual so that it reproduces the
    full-observation solver bit for bit.
    """
    _check_dims(obs, f0)
    if obs.is_full:
        gradient, monitor = _dense_gradient(obs)
    else:
        gradient, monitor = _sparse_gradient(obs)
    return iterate(sni_step, gradient, f0, cfg, monitor=monitor, extra_stop=objective_floor(rel_change))


def evaluate_rmse(test, f, clamp=None):
    """Root-mean-square error of ``f`` on the entries of ``test``.

    ``clamp=(lo, hi)`` clips predictions to a rating scale before scoring.
    """
    _check_dims(test, f)
    if len(test) == 0:
        raise EmptyTestSet("test set has no entries")
    pred = predict_entries(f, test.rows, test.cols)
    if clamp is not None:
        pred = np.clip(pred, clamp[0], clamp[1])
    err = pred - test.values
    return PredictionScore(rmse=float(np.sqrt(np.mean(err * err))), count=len(test))
