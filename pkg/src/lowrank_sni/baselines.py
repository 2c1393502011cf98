"""Reference truncated-SVD methods: block power iteration and randomized SVD."""

import time

import numpy as np

from .integrators import ConvergenceTrace, SvdResult, TraceRecord
from .manifold import LowRankFactors, random_factors
from .matcore import as_matrix, sigma_min, small_svd, thin_qr


def _rayleigh_ritz(M, U, V):
    Us, D, Vs = small_svd(U.T @ (M @ V))
    return U @ Us, D, V @ Vs


def power_iteration(M, r, iters, seed=0, V0=None, tol=None, monitor=None):
    """Block power (subspace) iteration for the top-``r`` singular triplets.

    Each sweep sets ``U = orth(M V)`` then ``V = orth(M^T U)``; the final
    core ``U^T M V`` is diagonalized. Without ``V0`` the start is the ``V``
    factor of :func:`random_factors` for ``seed``, i.e. the same start SNI
    uses. If ``tol`` is given, sweeps stop once
    ``sigma_min(V_prev^T V) > tol``. ``monitor(f, record)`` receives the
    iterate ``(U, U^T M V, V)`` after each sweep.
    """
    M = as_matrix(M, "M")
    m, n = M.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for a {m}x{n} matrix")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    V = random_factors(m, n, r, seed).V if V0 is None else as_matrix(V0, "V0")
    if V.shape != (n, r):
        raise ValueError(f"V0 must have shape {(n, r)}, got {V.shape}")
    trace = ConvergenceTrace(initial=TraceRecord(iteration=0))
    start = time.perf_counter()
    converged = False
    for i in range(1, iters + 1):
        U, _ = thin_qr(M @ V)
        V_new, _ = thin_qr(M.T @ U)
        rec = TraceRecord(iteration=i, sigma_min=sigma_min(V.T @ V_new))
        if monitor is not None:
            monitor(LowRankFactors(U, U.T @ (M @ V_new), V_new), rec)
        rec.elapsed = time.perf_counter() - start
        trace.records.append(rec)
        V = V_new
        if tol is not None and rec.sigma_min > tol:
            converged = True
            break
    Uo, D, Vo = _rayleigh_ritz(M, U, V)
    reason = "sigma_min" if converged else "max_iterations"
    return SvdResult(Uo, D, Vo, trace, converged if tol is not None else True, i, reason)


def _orth(A):
    # No rank check: the sketch may legitimately exceed the rank of M.
    return np.linalg.qr(A, mode="reduced")[0]


def randomized_svd(M, r, oversample=10, power=1, seed=0):
    """Randomized range finder followed by an SVD of the projected matrix.

    The sketch spans ``(M M^T)^power M G`` for Gaussian ``G`` of width
    ``r + oversample``; it is re-orthonormalized between multiplications.
    """
    M = as_matrix(M, "M")
    m, n = M.shape
    k = r + oversample
    if r < 1 or oversample < 0 or power < 0:
        raise ValueError("need r >= 1, oversample >= 0, power >= 0")
    if k > min(m, n):
        raise ValueError(f"r + oversample = {k} exceeds min(m, n) = {min(m, n)}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, k))
    Q = _orth(M @ G)
    for _ in range(power):
        Q = _orth(M @ _orth(M.T @ Q))
    B = Q.T @ M
    # B^T = Qb Rb, so B = Rb^T Qb^T and only a k x k SVD is needed.
    Qb, Rb = np.linalg.qr(B.T, mode="reduced")
    Us, D, Vs = small_svd(Rb.T)
    U = Q @ Us[:, :r]
    V = Qb @ Vs[:, :r]
    trace = ConvergenceTrace(initial=TraceRecord(iteration=0))
    return SvdResult(U, D[:r], V, trace, True, 1, "one_pass")
