"""
Complex linear-algebra helpers shared by the channel, rate and Fisher services.
"""

import logging

import numpy as np
from scipy import linalg

from app.utils.errors import (
    AsymmetricMatrixError,
    InvalidParameterError,
    NoJammingSubspaceError,
    NotPositiveDefiniteError,
)

logger = logging.getLogger(__name__)

DEFAULT_RANK_TOL = 1e-10
SYMMETRY_TOL = 1e-10


def _check_finite(A: np.ndarray, name: str) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise InvalidParameterError(f"{name} must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return A


def null_space(A: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """
    Orthonormal basis (columns) of the null space of A.

    Rank is decided against tol * largest singular value. Raises
    NoJammingSubspaceError when nothing is left.
    """
    if tol < 0:
        raise InvalidParameterError(f"tol must be non-negative, got {tol}")
    A = _check_finite(A, "A").astype(np.complex128)
    rows, cols = A.shape

    _, s, vh = linalg.svd(A, full_matrices=True)
    threshold = tol * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > threshold))
    if rank >= cols:
        raise NoJammingSubspaceError(rows, cols, rank)

    return vh[rank:].conj().T


def null_projector(A: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    basis = null_space(A, tol)
    return basis @ basis.conj().T


def psd_project(S: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (eigenvalues clipped at exactly 0)"""
    S = _check_finite(S, "S").astype(np.float64)
    if S.shape[0] != S.shape[1]:
        raise AsymmetricMatrixError(f"expected a square matrix, got {S.shape}")
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(S))):
        raise AsymmetricMatrixError("matrix is not symmetric")

    S = 0.5 * (S + S.T)
    w, V = linalg.eigh(S)
    if np.all(w >= 0):
        return S
    projected = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (projected + projected.T)


def logdet_hermitian(A: np.ndarray) -> float:
    """Natural log-determinant of a Hermitian positive definite matrix"""
    A = _check_finite(A, "A")
    if A.shape[0] != A.shape[1]:
        raise NotPositiveDefiniteError(f"expected a square matrix, got {A.shape}")
    A = 0.5 * (A + A.conj().T)
    w = linalg.eigvalsh(A)
    if w[0] <= 0:
        raise NotPositiveDefiniteError(f"minimum eigenvalue {w[0]:.3e} is not positive")
    # Cholesky is exact for PD input; eigenvalues only gate it
    L = linalg.cholesky(A, lower=True)
    return float(2.0 * np.sum(np.log(np.real(np.diag(L)))))


def random_unitary(T: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed T x T unitary (QR of a Ginibre matrix with phase fix)"""
    if T < 1:
        raise InvalidParameterError(f"T must be >= 1, got {T}")
    Z = (rng.standard_normal((T, T)) + 1j * rng.standard_normal((T, T))) / np.sqrt(2.0)
    Q, R = linalg.qr(Z)
    phases = np.diag(R) / np.abs(np.diag(R))
    return Q * phases[np.newaxis, :]


def unit_vector(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise InvalidParameterError("cannot normalise a zero vector")
    return v / norm


def crandn(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples CN(0, variance)"""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
