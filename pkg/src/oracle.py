# src/oracle.py
"""
Brute-force references for tests. Nothing here imports a solver module.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from typing import Callable, List, Optional

import numpy as np

from src.densela import MatrixLike, as_array
from src.errors import PreconditionError


MAX_SIMPLEX_DIMS = 3
MAX_VERTEX_VARS = 8


@dataclass(frozen=True)
class GridSpec:
    dims: int
    lo: float = 0.0
    hi: float = 1.0
    points_per_dim: int = 201

    def __post_init__(self) -> None:
        if self.points_per_dim < 3:
            raise PreconditionError(f"points_per_dim must be >= 3, got {self.points_per_dim}")
        if not self.lo < self.hi:
            raise PreconditionError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.points_per_dim - 1)


@dataclass(frozen=True, eq=False)
class GridMinimum:
    lam: np.ndarray
    value: float
    spacing: float
    value_error_bound: float


def brute_simplex_qp(M: MatrixLike, d: np.ndarray, grid: GridSpec) -> GridMinimum:
    """
    Minimum of 1/2 lam^T M lam + d^T lam over the lattice points of the simplex
    with the grid's spacing (the grid is taken on [0, 1]).

    value_error_bound bounds how far the grid value can sit above the true
    minimum: ||grad||_inf * k * h + 1/2 ||M|| * (k * h)^2.
    """
    M = as_array(M)
    d = np.asarray(d, dtype=float)
    k = d.shape[0]
    if k > MAX_SIMPLEX_DIMS or grid.dims != k:
        raise PreconditionError(f"brute force supports at most {MAX_SIMPLEX_DIMS} simplex dimensions, got {k}")

    steps = grid.points_per_dim - 1
    best_val, best_lam = np.inf, None
    for head in product(range(steps + 1), repeat=k - 1):
        rest = steps - sum(head)
        if rest < 0:
            continue
        lam = np.array(list(head) + [rest], dtype=float) / steps
        val = 0.5 * lam @ M @ lam + d @ lam
        if val < best_val:
            best_val, best_lam = float(val), lam

    h = 1.0 / steps
    grad_inf = float(np.max(np.abs(M @ best_lam + d)))
    bound = grad_inf * k * h + 0.5 * float(np.linalg.norm(M, 2)) * (k * h) ** 2
    return GridMinimum(best_lam, best_val, h, bound)


def finite_diff_grad(fn: Callable[[np.ndarray], float], z: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for i in range(z.shape[0]):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (fn(z + e) - fn(z - e)) / (2.0 * h)
    return g


def enumerate_polytope_vertices(
    A: np.ndarray,
    b: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = 1e-9,
) -> List[np.ndarray]:
    """
    All vertices of {A z <= b, lower <= z <= upper} by trying every set of p
    tight constraints among rows and bounds.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    p = lower.shape[0]
    if p > MAX_VERTEX_VARS:
        raise PreconditionError(f"vertex enumeration supports at most {MAX_VERTEX_VARS} variables, got {p}")
    A = np.asarray(A, dtype=float).reshape(-1, p)
    b = np.asarray(b, dtype=float).reshape(-1)

    I = np.eye(p)
    # Every constraint as a row of  C z <= e.
    C = np.vstack([A, I, -I])
    e = np.concatenate([b, upper, -lower])

    vertices: List[np.ndarray] = []
    for tight in combinations(range(C.shape[0]), p):
        Ct = C[list(tight)]
        if abs(np.linalg.det(Ct)) < 1e-12:
            continue
        z = np.linalg.solve(Ct, e[list(tight)])
        if np.all(C @ z <= e + tol) and not _seen(vertices, z, tol):
            vertices.append(z)
    return vertices


def _seen(points: List[np.ndarray], z: np.ndarray, tol: float) -> bool:
    return any(np.max(np.abs(p - z)) <= 1e3 * tol for p in points)


def brute_max_over(points: List[np.ndarray], c: np.ndarray) -> Optional[float]:
    """max c^T z over an enumerated vertex list (None when empty)."""
    if not points:
        return None
    return max(float(np.asarray(c) @ z) for z in points)
