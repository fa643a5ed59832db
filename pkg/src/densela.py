# src/densela.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import scipy.linalg

from src.errors import EigenvalueConvergenceError, NotPositiveDefiniteError


SYMMETRY_RTOL = 1e-12


# ============================================================
# Symmetric matrix container
# ============================================================

@dataclass(frozen=True, eq=False)
class SymMatrix:
    """
    Dense symmetric matrix (Q, Q + rho*I, reduced KKT blocks).

    The entries are copied and frozen (read-only) on construction so the
    object can be shared between threads.
    """
    entries: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
        if a.size and float(np.max(np.abs(a - a.T))) > SYMMETRY_RTOL * scale:
            raise ValueError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    def shifted(self, shift: float) -> "SymMatrix":
        """Return A + shift * I."""
        return SymMatrix(self.entries + shift * np.eye(self.n))

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return self.entries @ other


MatrixLike = Union[SymMatrix, np.ndarray]


def as_array(A: MatrixLike) -> np.ndarray:
    return A.entries if isinstance(A, SymMatrix) else np.asarray(A, dtype=float)


# ============================================================
# Positive-definite solves
# ============================================================

def cholesky(A: MatrixLike) -> Tuple[np.ndarray, bool]:
    """
    Cholesky factor of a positive-definite matrix, in scipy's (c, lower) form.

    Raises:
        NotPositiveDefiniteError if a pivot is not positive.
    """
    try:
        return scipy.linalg.cho_factor(as_array(A), lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError() from exc


def cho_solve(factor: Tuple[np.ndarray, bool], b: np.ndarray) -> np.ndarray:
    """Solve with a factor returned by `cholesky` (b may be a vector or a matrix)."""
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def spd_solve(A: MatrixLike, b: np.ndarray) -> np.ndarray:
    """
    Solve A x = b for a symmetric positive-definite A.

    The residual ||Ax - b|| stays below 1e-10 * (1 + ||b||) for the
    well-conditioned systems built here (Q + rho*I with rho > 0).
    """
    return cho_solve(cholesky(A), np.asarray(b, dtype=float))


# ============================================================
# Eigenvalue extremes
# ============================================================

def eig_extremes(A: MatrixLike) -> Tuple[float, float]:
    """
    Smallest and largest eigenvalue of a symmetric matrix.

    Returns:
        (lambda_min, lambda_max)
    """
    a = as_array(A)
    n = a.shape[0]
    if n < 1:
        raise ValueError("eig_extremes needs a matrix of size >= 1")
    try:
        lo = scipy.linalg.eigh(a, eigvals_only=True, subset_by_index=[0, 0])
        hi = scipy.linalg.eigh(a, eigvals_only=True, subset_by_index=[n - 1, n - 1])
    except np.linalg.LinAlgError as exc:
        # LAPACK gives up after 30*n QR sweeps
        raise EigenvalueConvergenceError(30 * n) from exc
    return float(lo[0]), float(hi[0])


def rayleigh_quotient(A: MatrixLike, u: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    return float(u @ (as_array(A) @ u) / (u @ u))
