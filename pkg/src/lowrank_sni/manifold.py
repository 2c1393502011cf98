"""Rank-r matrices stored as ``Y = U @ S @ V.T`` and their tangent spaces.

``S`` is any nonsingular r x r core; it is not assumed to be diagonal.
"""

from dataclasses import dataclass

import numpy as np

from .matcore import SingularCore, as_matrix, rank_tol, thin_qr

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class LowRankFactors:
    """The triple ``(U, S, V)`` of a point on the fixed-rank manifold.

    Construction checks shapes and finiteness only. Call :meth:`validate`
    to also check column orthonormality of ``U`` and ``V``.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = as_matrix(self.U, "U")
        S = as_matrix(self.S, "S")
        V = as_matrix(self.V, "V")
        r = U.shape[1]
        if S.shape != (r, r) or V.shape[1] != r:
            raise ValueError(
                f"inconsistent factor shapes U{U.shape} S{S.shape} V{V.shape}"
            )
        if U.shape[0] < r or V.shape[0] < r:
            raise ValueError(f"rank {r} exceeds matrix dimensions {U.shape[0]}x{V.shape[0]}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "V", V)

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def orthonormality_defect(self):
        """Largest of ``||U^T U - I||_F`` and ``||V^T V - I||_F``."""
        eye = np.eye(self.rank)
        return max(
            np.linalg.norm(self.U.T @ self.U - eye),
            np.linalg.norm(self.V.T @ self.V - eye),
        )

    def validate(self, tol=ORTHO_TOL):
        defect = self.orthonormality_defect()
        if defect > tol:
            raise ValueError(f"factors are not column-orthonormal (defect {defect:.2e})")
        return self


@dataclass(frozen=True)
class TangentComponents:
    """Gauge-fixed parameters ``(dS, dU, dV)`` of a tangent vector.

    Satisfy ``U.T @ dU = 0`` and ``V.T @ dV = 0``.
    """

    dS: np.ndarray
    dU: np.ndarray
    dV: np.ndarray


def random_factors(m, n, r, rng):
    """Gaussian ``U`` and ``V`` orthonormalized by QR, with ``S = I``.

    ``rng`` is a Generator or anything ``numpy.random.default_rng`` accepts.
    """
    rng = np.random.default_rng(rng)
    U, _ = thin_qr(rng.standard_normal((m, r)))
    V, _ = thin_qr(rng.standard_normal((n, r)))
    return LowRankFactors(U, np.eye(r), V)


def assemble(f):
    return (f.U @ f.S) @ f.V.T


def tangent_project(f, B):
    """Orthogonal projection of ``B`` onto the tangent space at ``f``.

    Evaluates ``U U^T B - U U^T B V V^T + B V V^T`` with thin products only.
    """
    B = np.asarray(B, dtype=np.float64)
    if B.shape != f.shape:
        raise ValueError(f"B has shape {B.shape}, expected {f.shape}")
    UtB = f.U.T @ B
    BV = B @ f.V
    return f.U @ UtB - f.U @ ((UtB @ f.V) @ f.V.T) + BV @ f.V.T


def _check_core(S):
    sv = np.linalg.svd(S, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= rank_tol(sv[0], S.shape[0]):
        raise SingularCore(f"core matrix is singular (sigma_min={sv[-1]:.3e})")


def riemannian_gradient_components(f, dA):
    """Split the tangent projection of ``dA`` into ``(dS, dU, dV)``.

    ``dA`` is the negative Euclidean gradient (for least squares, the
    residual ``M - Y``). ``S^{-1}`` is applied through linear solves.
    """
    if dA.shape != f.shape:
        raise ValueError(f"dA has shape {dA.shape}, expected {f.shape}")
    _check_core(f.S)
    AV = dA @ f.V
    AtU = dA.T @ f.U
    dS = f.U.T @ AV
    # X S^{-1} == solve(S^T, X^T)^T
    dU = np.linalg.solve(f.S.T, (AV - f.U @ dS).T).T
    dV = np.linalg.solve(f.S, (AtU - f.V @ dS.T).T).T
    return TangentComponents(dS=dS, dU=dU, dV=dV)


def tangent_vector(f, comps):
    """Assemble ``dU S V^T + U dS V^T + U S dV^T``."""
    return (
        comps.dU @ f.S @ f.V.T
        + f.U @ comps.dS @ f.V.T
        + f.U @ f.S @ comps.dV.T
    )
