"""Splitting numerical integration (SNI) and the DLRA gradient baseline.

One SNI step integrates the three pieces of the projected flow

    Ydot = U U^T A  -  U U^T A V V^T  +  A V V^T

in sequence, each exactly and with unit step:

* ``A V V^T`` keeps ``V`` fixed and moves ``U S`` by ``A V`` (the K-step);
* ``-U U^T A V V^T`` keeps both bases and moves ``S`` by ``-U^T A V``;
* ``U U^T A`` keeps ``U`` fixed and moves ``S V^T`` by ``U^T A`` (the L-step).

The K- and L-steps re-orthonormalize by thin QR. Here ``A`` is the negative
gradient of the objective, i.e. the residual ``M - Y`` for least squares.
"""

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .manifold import LowRankFactors, assemble, riemannian_gradient_components
from .matcore import RankDeficient, fro_norm, sigma_min, small_svd, thin_qr

logger = logging.getLogger(__name__)


class Mode(enum.Enum):
    FULL = "full"
    PARTIAL = "partial"


@dataclass(frozen=True)
class SolverConfig:
    rank: int
    tol: float = 1.0 - 1e-12
    max_iterations: int = 300
    seed: int = 0
    stepsize: float = 1e-3
    mode: Mode = Mode.FULL

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if int(self.max_iterations) < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.stepsize > 0.0:
            raise ValueError(f"stepsize must be positive, got {self.stepsize}")


@dataclass
class TraceRecord:
    iteration: int
    error: float = float("nan")
    u_error: float = float("nan")
    v_error: float = float("nan")
    sigma_min: float = float("nan")
    elapsed: float = 0.0


# (header, attribute) pairs for the delimited trace files.
FULL_COLUMNS = (
    ("iteration", "iteration"),
    ("residual_fro", "error"),
    ("u_subspace_error", "u_error"),
    ("v_subspace_error", "v_error"),
    ("sigma_min_VtV", "sigma_min"),
)
COMPLETION_COLUMNS = (
    ("iteration", "iteration"),
    ("f1", "error"),
    ("sigma_min_VtV", "sigma_min"),
)


@dataclass
class ConvergenceTrace:
    """Per-iteration solver history.

    ``initial`` describes the starting point (iteration 0); ``records`` holds
    one entry per executed iteration, starting at 1.
    """

    initial: Optional[TraceRecord] = None
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name, include_initial=True):
        rows = ([self.initial] if include_initial and self.initial else []) + self.records
        return np.array([getattr(rec, name) for rec in rows])

    def to_csv(self, columns=FULL_COLUMNS, delimiter=","):
        """Render as delimited text, one row per iterate including the start.

        Wall-clock times are left out so that the output is reproducible.
        """
        lines = [delimiter.join(header for header, _ in columns)]
        rows = ([self.initial] if self.initial else []) + self.records
        for rec in rows:
            values = []
            for _, attr in columns:
                value = getattr(rec, attr)
                values.append(str(value) if attr == "iteration" else repr(float(value)))
            lines.append(delimiter.join(values))
        return "\n".join(lines) + "\n"


@dataclass
class SvdResult:
    U: np.ndarray
    D: np.ndarray
    V: np.ndarray
    trace: ConvergenceTrace
    converged: bool
    iterations: int
    stop_reason: str = ""

    @property
    def factors(self):
        return LowRankFactors(self.U, np.diag(self.D), self.V)

    def matrix(self):
        return (self.U * self.D) @ self.V.T


def sni_step(f, dA):
    """One SNI iteration from ``f`` given the negative gradient ``dA``.

    ``dA`` may be a dense array or a scipy sparse matrix. The returned core
    is the transpose of the second QR's triangular factor.
    """
    if dA.shape != f.shape:
        raise ValueError(f"dA has shape {dA.shape}, expected {f.shape}")
    Q = np.asarray(dA @ f.V)
    K = f.U @ f.S + Q
    U_new, S_k = thin_qr(K)
    S_mid = S_k - U_new.T @ Q
    L = f.V @ S_mid.T + np.asarray(dA.T @ U_new)
    V_new, S_l = thin_qr(L)
    return LowRankFactors(U_new, S_l.T, V_new)


def dense_residual(M):
    """Gradient oracle for ``1/2 ||M - Y||_F^2``: returns ``M - Y``."""

    def residual(f):
        return M - assemble(f)

    return residual


def full_observation_monitor(M):
    """Trace metrics for the full-observation problem.

    Returns a callable that fills ``error`` (||Y - M||_F) and the two
    subspace errors ``||U U^T M - M||_F`` and ``||M V V^T - M||_F``.
    """

    def monitor(f, rec):
        rec.error = fro_norm(assemble(f) - M)
        rec.u_error = fro_norm(f.U @ (f.U.T @ M) - M)
        rec.v_error = fro_norm((M @ f.V) @ f.V.T - M)

    return monitor


def _finish(f, trace, converged, iterations, reason):
    Us, D, Vs = small_svd(f.S)
    return SvdResult(
        U=f.U @ Us,
        D=D,
        V=f.V @ Vs,
        trace=trace,
        converged=converged,
        iterations=iterations,
        stop_reason=reason,
    )


def iterate(step, gradient, f0, cfg, monitor=None, extra_stop=None):
    """Shared outer loop: step, sigma_min stopping test, final small SVD.

    ``step(f, dA)`` advances the factors, ``gradient(f)`` returns the negative
    gradient, ``monitor(f, record)`` may fill trace fields (it must not touch
    ``f``), and ``extra_stop(prev_record, record)`` is a secondary stopping
    rule.
    """
    f0.validate()
    if f0.rank != cfg.rank:
        raise ValueError(f"initial factors have rank {f0.rank}, config asks for {cfg.rank}")
    trace = ConvergenceTrace(initial=TraceRecord(iteration=0))
    if monitor is not None:
        monitor(f0, trace.initial)
    f = f0
    prev = trace.initial
    start = time.perf_counter()
    for i in range(1, cfg.max_iterations + 1):
        try:
            f_new = step(f, gradient(f))
        except RankDeficient as exc:
            exc.trace = trace
            raise
        rec = TraceRecord(iteration=i, sigma_min=sigma_min(f.V.T @ f_new.V))
        if monitor is not None:
            monitor(f_new, rec)
        rec.elapsed = time.perf_counter() - start
        trace.records.append(rec)
        f = f_new
        if rec.sigma_min > cfg.tol:
            logger.debug("sigma_min criterion met at iteration %d", i)
            return _finish(f, trace, True, i, "sigma_min")
        if extra_stop is not None and extra_stop(prev, rec):
            logger.debug("secondary stopping rule met at iteration %d", i)
            return _finish(f, trace, True, i, "objective_floor")
        prev = rec
    return _finish(f, trace, False, cfg.max_iterations, "max_iterations")


def sni_run(gradient: Callable, f0: LowRankFactors, cfg: SolverConfig, monitor=None, extra_stop=None):
    """Run SNI from ``f0`` until the sigma_min rule fires or ``cfg.max_iterations``.

    ``gradient(f)`` must return the negative gradient of the objective at
    ``assemble(f)``; use :func:`dense_residual` for the approximation problem.
    """
    return iterate(sni_step, gradient, f0, cfg, monitor=monitor, extra_stop=extra_stop)


def dlra_step(f, dA, stepsize):
    """Explicit Euler step along the Riemannian gradient components.

    ``U`` and ``V`` are re-orthonormalized by QR and the triangular factors
    are absorbed into ``S``, so the assembled matrix is left unchanged by
    the retraction.
    """
    if not stepsize > 0.0:
        raise ValueError(f"stepsize must be positive, got {stepsize}")
    comps = riemannian_gradient_components(f, dA)
    U = f.U + stepsize * comps.dU
    S = f.S + stepsize * comps.dS
    V = f.V + stepsize * comps.dV
    Qu, Ru = thin_qr(U)
    Qv, Rv = thin_qr(V)
    return LowRankFactors(Qu, Ru @ S @ Rv.T, Qv)


def dlra_run(gradient, f0, cfg, monitor=None):
    def step(f, dA):
        return dlra_step(f, dA, cfg.stepsize)

    return iterate(step, gradient, f0, cfg, monitor=monitor)


def run_with_trace(method, M, f0, cfg, record=True):
    """Solve the full-observation problem for ``M`` with SNI or DLRA.

    With ``record=True`` every trace field is filled; the iterates are the
    same either way.
    """
    M = np.asarray(M, dtype=np.float64)
    method = method.lower()
    runners = {"sni": sni_run, "dlra": dlra_run}
    if method not in runners:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(runners)}")
    monitor = full_observation_monitor(M) if record else None
    result = runners[method](dense_residual(M), f0, cfg, monitor=monitor)
    return result, result.trace
