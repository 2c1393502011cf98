"""Dense linear-algebra kernels shared by the solvers.

Everything here is a pure function of its inputs. Matrices are plain
``numpy.ndarray`` objects of dtype float64.
"""

import numpy as np

SMALL_SVD_CAP = 4096


class RankDeficient(np.linalg.LinAlgError):
    """Raised when a factor that must have full column rank does not.

    ``trace`` is filled in by the iterative solvers so that callers can
    inspect the iterations that ran before the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SingularCore(np.linalg.LinAlgError):
    """The r x r core of a factorization is numerically singular."""


def as_matrix(A, name="matrix"):
    """Return ``A`` as a 2-D float64 array, rejecting NaN/Inf entries."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def rank_tol(spectral_norm, r):
    """Relative threshold below which a singular value counts as zero."""
    return 1e-12 * spectral_norm * r


def thin_qr(K):
    """Thin QR factorization with a positive diagonal in ``R``.

    Parameters
    ----------
    K : (m, r) array with m >= r.

    Returns
    -------
    Q : (m, r) array with orthonormal columns.
    R : (r, r) upper triangular array, strictly positive diagonal.

    Raises
    ------
    RankDeficient
        If the numerical rank of ``K`` is below ``r``.
    """
    K = as_matrix(K, "K")
    m, r = K.shape
    if m < r:
        raise ValueError(f"thin_qr needs m >= r, got {K.shape}")
    Q, R = np.linalg.qr(K, mode="reduced")
    # R carries the singular values of K, so its r x r SVD gives the rank test.
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= rank_tol(sv[0], r):
        raise RankDeficient(
            f"matrix of shape {K.shape} has numerical rank < {r} "
            f"(sigma_min={sv[-1]:.3e}, sigma_max={sv[0]:.3e})"
        )
    signs = np.sign(np.diag(R))
    Q = Q * signs
    R = R * signs[:, None]
    return Q, R


def _fix_svd_signs(Us, Vs):
    # Largest-magnitude entry of each left singular vector made positive.
    idx = np.argmax(np.abs(Us), axis=0)
    signs = np.sign(Us[idx, np.arange(Us.shape[1])])
    signs[signs == 0] = 1.0
    return Us * signs, Vs * signs


def small_svd(S, cap=SMALL_SVD_CAP):
    """SVD of a small square core matrix.

    Returns ``(Us, D, Vs)`` with ``S = Us @ diag(D) @ Vs.T``, ``D`` descending.
    A sign convention (largest entry of each column of ``Us`` positive) makes
    the output deterministic.
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"small_svd expects a square matrix, got {S.shape}")
    if S.shape[0] > cap:
        raise ValueError(f"small_svd dimension {S.shape[0]} exceeds cap {cap}")
    Us, D, Vt = np.linalg.svd(S)
    Us, Vs = _fix_svd_signs(Us, Vt.T)
    return Us, D, Vs


def sigma_min(A):
    """Smallest singular value of a square matrix."""
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"sigma_min expects a square matrix, got {A.shape}")
    return float(np.linalg.svd(A, compute_uv=False)[-1])


def fro_norm(A):
    return float(np.linalg.norm(A, "fro"))


def spectral_norm(A):
    return float(np.linalg.norm(A, 2))
