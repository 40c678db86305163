import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.sparse as sps

from .config import DEFAULT_MAX_ITER, DEFAULT_OVERSAMPLING, DEFAULT_SEED, DEFAULT_TOL
from .errors import ConvergenceError, DataError, RankDeficiencyError, UsageError
from .ratingMatrix import SparseInteractions

_log = logging.getLogger(__name__)

# eigenvalues at or below this fraction of the largest one count as zero
RANK_EPS = 1e-10
SYMMETRY_TOL = 1e-10

MatrixLike = Union[SparseInteractions, sps.spmatrix, np.ndarray]


@dataclass(frozen=True)
class SvdTriplet:
    """Leading singular triplets: M ~ U diag(sigma) V with U m x k, V k x n."""
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    residuals: np.ndarray
    rank: int
    iterations: int = 0

    @property
    def k(self) -> int:
        return len(self.sigma)


def _operator(matrix: MatrixLike):
    if isinstance(matrix, SparseInteractions):
        return matrix.csr
    if sps.issparse(matrix):
        return sps.csr_matrix(matrix, dtype=np.float64)
    return np.atleast_2d(np.asarray(matrix, dtype=np.float64))


def _orthonormal(block: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(block)
    return q


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    """Make the largest-magnitude entry of every left vector positive"""
    for i in range(U.shape[1]):
        pivot = np.argmax(np.abs(U[:, i]))
        if U[pivot, i] < 0:
            U[:, i] *= -1
            V[i, :] *= -1


def truncated_svd(
    matrix: MatrixLike,
    k: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
    oversampling: int = DEFAULT_OVERSAMPLING,
) -> SvdTriplet:
    """Leading k singular triplets by randomized block subspace iteration.

    The block carries ``k + oversampling`` vectors (capped at min(m, n)) and
    is re-orthonormalized after every product. Iteration stops once every
    triplet satisfies ``|M v_i - sigma_i u_i| <= tol * sigma_1``.
    """
    A = _operator(matrix)
    m, n = A.shape
    if not 1 <= k <= min(m, n):
        raise UsageError(f"Rank k={k} out of range for a {m}x{n} matrix")
    if max_iter < 1:
        raise UsageError(f"max_iter must be at least 1, got {max_iter}")

    block = min(k + oversampling, min(m, n))
    rng = np.random.default_rng(seed)
    Q = _orthonormal(A @ rng.standard_normal((n, block)))

    for iteration in range(1, max_iter + 1):
        W = A.T @ Q
        Ub, sigma, Vt = np.linalg.svd(W.T, full_matrices=False)
        U = Q @ Ub[:, :k]
        sigma = sigma[:k]
        V = Vt[:k, :]
        residuals = np.linalg.norm(A @ V.T - U * sigma, axis=0)
        if sigma[0] == 0 or np.all(residuals <= tol * sigma[0]):
            break
        Q = _orthonormal(A @ _orthonormal(W))
    else:
        raise ConvergenceError(
            f"Truncated SVD (k={k}) did not converge in {max_iter} iterations, "
            f"worst relative residual {np.max(residuals) / sigma[0]:.3e}",
            residuals=residuals,
        )

    U = np.array(U)
    V = np.array(V)
    _fix_signs(U, V)
    rank = int(np.count_nonzero(sigma > max(m, n) * np.finfo(np.float64).eps * sigma[0])) if sigma[0] > 0 else 0
    if rank < k:
        _log.warning("Matrix has numerical rank %d below the requested k=%d", rank, k)
    _log.debug("Truncated SVD k=%d converged after %d iterations", k, iteration)
    return SvdTriplet(U=U, sigma=np.array(sigma), V=V, residuals=residuals, rank=rank, iterations=iteration)


def inv_sqrt_psd(S: np.ndarray) -> np.ndarray:
    """Inverse square root of a symmetric positive definite matrix (eigh based)."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[0] != S.shape[1]:
        raise UsageError(f"Expected a square matrix, got shape {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        raise DataError("Matrix is not symmetric")
    S = (S + S.T) / 2

    eigenvalues, eigenvectors = np.linalg.eigh(S)
    largest = float(eigenvalues[-1])
    threshold = RANK_EPS * largest
    if largest <= 0 or eigenvalues[0] <= threshold:
        raise RankDeficiencyError(
            f"Smallest eigenvalue {eigenvalues[0]:.3e} is below the rank threshold {threshold:.3e}",
            smallest_eigenvalue=float(eigenvalues[0]),
            threshold=threshold,
        )
    X = (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T
    return (X + X.T) / 2


def orthogonalize_columns(A: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal columns (polar factor): A (A^T A)^{-1/2}"""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] < A.shape[1]:
        raise UsageError(f"Column orthogonalization needs n_rows >= n_cols, got {A.shape}")
    return A @ inv_sqrt_psd(A.T @ A)


def orthogonalize_rows(A: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal rows: (A A^T)^{-1/2} A"""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] > A.shape[1]:
        raise UsageError(f"Row orthogonalization needs n_rows <= n_cols, got {A.shape}")
    return inv_sqrt_psd(A @ A.T) @ A
