# src/lmo.py
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from src.errors import InstanceError, LmoError
from src.lp import LpProblem, LpStatus, feasibility_check, solve_lp
from src.model import Cut


@dataclass(frozen=True)
class Diameters:
    """
    D = diam(V), D_w = diam of the slopes, D_b = diam of the intercepts.

    exact is False when the values are conservative bounds (polytope variant).
    """
    D: float
    D_w: float
    D_b: float
    exact: bool = True


# ============================================================
# Oracle descriptors
# ============================================================

class LmoDescriptor(ABC):
    """
    Access to f(x) = max_{(v, b) in V} v^T x + b through argmax queries.

    Descriptors are immutable; lmo_max is re-entrant.
    """
    variant: str

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @abstractmethod
    def lmo_max(self, x: np.ndarray) -> Cut:
        """Return a cut (v, b) in V maximizing v^T x + b (id -1)."""

    def f_of(self, x: np.ndarray) -> float:
        return self.lmo_max(x).value_at(np.asarray(x, dtype=float))

    @abstractmethod
    def lipschitz_bound(self) -> float:
        ...

    @abstractmethod
    def diameter_bounds(self) -> Diameters:
        ...

    def _check_point(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim or not np.all(np.isfinite(x)):
            raise LmoError(f"query point must be a finite vector of length {self.dim}")
        return x


class ExplicitLmo(LmoDescriptor):
    """V given as an explicit list of cuts; ties go to the lowest list index."""
    variant = "explicit"

    def __init__(self, cuts: Iterable[Cut]) -> None:
        cuts = tuple(cuts)
        if not cuts:
            raise InstanceError("explicit LMO needs at least one cut")
        dims = {c.dim for c in cuts}
        if len(dims) != 1:
            raise InstanceError(f"explicit cuts have inconsistent dimensions {sorted(dims)}")
        self.cuts: Tuple[Cut, ...] = tuple(Cut(c.v, c.b) for c in cuts)
        self._V = np.vstack([c.v for c in self.cuts])
        self._b = np.array([c.b for c in self.cuts])
        self._V.flags.writeable = False
        self._b.flags.writeable = False

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Sequence[float], float]]) -> "ExplicitLmo":
        return cls(Cut(v, b) for v, b in pairs)

    @property
    def dim(self) -> int:
        return int(self._V.shape[1])

    @property
    def slopes(self) -> np.ndarray:
        return self._V

    @property
    def intercepts(self) -> np.ndarray:
        return self._b

    def argmax_index(self, x: np.ndarray) -> int:
        x = self._check_point(x)
        return int(np.argmax(self._V @ x + self._b))

    def lmo_max(self, x: np.ndarray) -> Cut:
        return self.cuts[self.argmax_index(x)]

    def lipschitz_bound(self) -> float:
        return float(np.max(np.linalg.norm(self._V, axis=1)))

    def diameter_bounds(self) -> Diameters:
        if len(self.cuts) < 2:
            return Diameters(0.0, 0.0, 0.0)
        points = np.hstack([self._V, self._b[:, None]])
        return Diameters(
            D=float(np.max(pdist(points))),
            D_w=float(np.max(pdist(self._V))),
            D_b=float(np.max(self._b) - np.min(self._b)),
        )


class BoxLmo(LmoDescriptor):
    """
    V = vertices of {|v_i| <= half_width_i} x [lo, hi]; argmax in closed form.

    Zero components of x pick +half_width.
    """
    variant = "box"

    def __init__(self, half_width: Iterable[float], intercept_range: Tuple[float, float]) -> None:
        hw = np.array(list(half_width), dtype=float)
        lo, hi = (float(t) for t in intercept_range)
        if hw.ndim != 1 or hw.size == 0 or np.any(hw < 0) or not np.all(np.isfinite(hw)):
            raise InstanceError("box half_width must be a nonempty vector of finite nonnegative entries")
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise InstanceError(f"invalid intercept_range [{lo}, {hi}]")
        hw.flags.writeable = False
        self.half_width = hw
        self.intercept_range = (lo, hi)

    @property
    def dim(self) -> int:
        return int(self.half_width.shape[0])

    def lmo_max(self, x: np.ndarray) -> Cut:
        x = self._check_point(x)
        return Cut(np.where(x >= 0, self.half_width, -self.half_width), self.intercept_range[1])

    def lipschitz_bound(self) -> float:
        return float(np.linalg.norm(self.half_width))

    def diameter_bounds(self) -> Diameters:
        D_w = 2.0 * float(np.linalg.norm(self.half_width))
        D_b = self.intercept_range[1] - self.intercept_range[0]
        return Diameters(float(np.hypot(D_w, D_b)), D_w, D_b)


class PolytopeLmo(LmoDescriptor):
    """
    V = vertices of {(y, d) : A [y; d] <= b, lower <= (y, d) <= upper}.

    Each query is one LP with objective (x, 1); nonemptiness is checked at
    construction.
    """
    variant = "polytope"

    def __init__(
        self,
        A: np.ndarray,
        b: np.ndarray,
        lower: Optional[np.ndarray] = None,
        upper: Optional[np.ndarray] = None,
    ) -> None:
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[1] < 2:
            raise InstanceError(f"polytope A must be m x (n+1) with n >= 1, got shape {A.shape}")
        p = A.shape[1]
        lower = -np.ones(p) if lower is None else np.array(lower, dtype=float)
        upper = np.ones(p) if upper is None else np.array(upper, dtype=float)
        try:
            self._lp = LpProblem(np.zeros(p), A, b, lower, upper)
        except ValueError as exc:
            raise InstanceError(f"invalid polytope: {exc}") from exc
        if not feasibility_check(self._lp):
            raise InstanceError("polytope is empty")

    @property
    def A(self) -> np.ndarray:
        return self._lp.A

    @property
    def b(self) -> np.ndarray:
        return self._lp.b_up

    @property
    def lower(self) -> np.ndarray:
        return self._lp.lower

    @property
    def upper(self) -> np.ndarray:
        return self._lp.upper

    @property
    def dim(self) -> int:
        return self._lp.num_vars - 1

    def lmo_max(self, x: np.ndarray) -> Cut:
        x = self._check_point(x)
        res = solve_lp(self._lp.with_objective(np.append(x, 1.0)))
        if res.status is not LpStatus.OPTIMAL or res.z is None:
            raise LmoError(f"polytope LMO failed with status {res.status.value}")
        return Cut(res.z[:-1], res.z[-1])

    def lipschitz_bound(self) -> float:
        radius = np.maximum(np.abs(self.lower), np.abs(self.upper))[:-1]
        return float(np.linalg.norm(radius))

    def diameter_bounds(self) -> Diameters:
        width = self.upper - self.lower
        return Diameters(
            D=float(np.linalg.norm(width)),
            D_w=float(np.linalg.norm(width[:-1])),
            D_b=float(width[-1]),
            exact=False,
        )


# ============================================================
# Functional surface
# ============================================================

def lmo_max(desc: LmoDescriptor, x: np.ndarray) -> Cut:
    return desc.lmo_max(x)


def f_of(desc: LmoDescriptor, x: np.ndarray) -> float:
    """f(x): value of the cut returned by lmo_max at x."""
    return desc.f_of(x)


def lipschitz_bound(desc: LmoDescriptor) -> float:
    """M_f = max ||v|| over V (a conservative bound for polytopes)."""
    return desc.lipschitz_bound()


def diameter_bounds(desc: LmoDescriptor) -> Diameters:
    return desc.diameter_bounds()
