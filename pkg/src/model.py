# src/model.py
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import TYPE_CHECKING, Any, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from src.densela import SymMatrix, eig_extremes
from src.errors import EmptyModelError, InstanceError, PreconditionError

if TYPE_CHECKING:
    from src.lmo import LmoDescriptor


PSD_TOL = 1e-10
REFERENCE_TOL = 1e-8
DEFAULT_ACTIVE_TOL = 1e-9


def _frozen_vector(x: Iterable[float], name: str) -> np.ndarray:
    a = np.array(x, dtype=float, copy=True).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise InstanceError(f"{name} has non-finite entries")
    a.flags.writeable = False
    return a


# ============================================================
# Cuts and bundles
# ============================================================

@dataclass(frozen=True, eq=False)
class Cut:
    """
    One affine minorant x -> v^T x + b of f (an element of the vertex set V).

    `id` is assigned by the Bundle on insertion; cuts straight out of an
    oracle carry id -1.
    """
    v: np.ndarray
    b: float
    id: int = -1

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", _frozen_vector(self.v, "cut slope"))
        b = float(self.b)
        if not math.isfinite(b):
            raise InstanceError("cut intercept is not finite")
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return int(self.v.shape[0])

    def value_at(self, x: np.ndarray) -> float:
        return float(self.v @ x + self.b)

    def same_pair(self, other: "Cut") -> bool:
        """Exact equality of (v, b); ids are ignored."""
        return self.b == other.b and np.array_equal(self.v, other.v)

    def with_id(self, cut_id: int) -> "Cut":
        return Cut(self.v, self.b, cut_id)

    def as_vector(self) -> np.ndarray:
        """The point (v, b) in R^{n+1}."""
        return np.append(self.v, self.b)


@dataclass(frozen=True)
class ModelValue:
    value: float
    argmax_ids: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Bundle:
    """
    Ordered collection of cuts defining the model f_k(x) = max_i v_i^T x + b_i.

    Immutable: `add` and `keep` return new bundles. `next_id` carries the id
    counter so ids stay unique and increasing across policy pruning.
    """
    dim: int
    cuts: Tuple[Cut, ...] = ()
    next_id: int = 0

    @classmethod
    def from_pairs(cls, dim: int, pairs: Iterable[Tuple[Iterable[float], float]]) -> "Bundle":
        bundle = cls(dim)
        for v, b in pairs:
            bundle, _, _ = bundle.add(Cut(v, b))
        return bundle

    def __len__(self) -> int:
        return len(self.cuts)

    def __iter__(self) -> Iterator[Cut]:
        return iter(self.cuts)

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(c.id for c in self.cuts)

    @property
    def slopes(self) -> np.ndarray:
        """k x n matrix whose rows are the cut slopes."""
        if not self.cuts:
            return np.zeros((0, self.dim))
        return np.vstack([c.v for c in self.cuts])

    @property
    def intercepts(self) -> np.ndarray:
        return np.array([c.b for c in self.cuts], dtype=float)

    def find(self, cut: Cut) -> Optional[Cut]:
        for c in self.cuts:
            if c.same_pair(cut):
                return c
        return None

    def add(self, cut: Cut) -> Tuple["Bundle", Cut, bool]:
        """
        Insert a cut, deduplicating on exact (v, b) equality.

        Returns:
            (new_bundle, stored_cut, added) where stored_cut carries its id and
            added is False when an identical cut was already present.
        """
        if cut.dim != self.dim:
            raise InstanceError(f"cut dimension {cut.dim} does not match bundle dimension {self.dim}")
        existing = self.find(cut)
        if existing is not None:
            return self, existing, False
        stored = cut.with_id(self.next_id)
        return replace(self, cuts=self.cuts + (stored,), next_id=self.next_id + 1), stored, True

    def keep(self, ids: Iterable[int]) -> "Bundle":
        """Keep the cuts whose id is in `ids`, in bundle order."""
        wanted = set(ids)
        return replace(self, cuts=tuple(c for c in self.cuts if c.id in wanted))

    def values_at(self, x: np.ndarray) -> np.ndarray:
        if not self.cuts:
            raise EmptyModelError()
        return self.slopes @ np.asarray(x, dtype=float) + self.intercepts


def model_value(bundle: Bundle, x: np.ndarray, active_tol: float = DEFAULT_ACTIVE_TOL) -> ModelValue:
    """
    Evaluate the cutting-plane model at x.

    Ties are kept: every cut within active_tol * (1 + |value|) of the maximum
    is reported in argmax_ids.
    """
    vals = bundle.values_at(x)
    top = float(np.max(vals))
    thr = active_tol * (1.0 + abs(top))
    ids = tuple(c.id for c, val in zip(bundle.cuts, vals) if top - val <= thr)
    return ModelValue(top, ids)


# ============================================================
# Smooth part g
# ============================================================

@dataclass(frozen=True, eq=False)
class QuadraticObjective:
    """
    g(x) = 1/2 x^T Q x + q^T x + r with Q symmetric positive semidefinite.

    L_g and mu_g are the extreme eigenvalues of Q (mu_g clipped at 0).
    """
    Q: SymMatrix
    q: np.ndarray
    r: float = 0.0
    L_g: float = field(init=False)
    mu_g: float = field(init=False)

    def __post_init__(self) -> None:
        Q = self.Q if isinstance(self.Q, SymMatrix) else SymMatrix(np.asarray(self.Q, dtype=float))
        q = _frozen_vector(self.q, "q")
        if q.shape[0] != Q.n:
            raise InstanceError(f"q has length {q.shape[0]}, expected {Q.n}")
        lo, hi = eig_extremes(Q)
        if lo < -PSD_TOL:
            raise InstanceError(f"Q is not positive semidefinite (smallest eigenvalue {lo:.3e})")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "L_g", float(hi))
        object.__setattr__(self, "mu_g", float(max(lo, 0.0)))

    @classmethod
    def identity(cls, n: int, q: Optional[Iterable[float]] = None, r: float = 0.0) -> "QuadraticObjective":
        return cls(SymMatrix(np.eye(n)), np.zeros(n) if q is None else q, r)

    @property
    def n(self) -> int:
        return self.Q.n

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.r)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.q


# ============================================================
# Problem instance
# ============================================================

@dataclass(frozen=True, eq=False)
class ReferenceOpt:
    x_star: np.ndarray
    h_star: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_star", _frozen_vector(self.x_star, "x_star"))
        object.__setattr__(self, "h_star", float(self.h_star))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """
    Composite instance min_x g(x) + f(x): quadratic g, f reached through an LMO.
    """
    objective: QuadraticObjective
    lmo: "LmoDescriptor"
    x0: np.ndarray
    reference_opt: Optional[ReferenceOpt] = None
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        x0 = _frozen_vector(self.x0, "x0")
        n = self.objective.n
        if x0.shape[0] != n:
            raise InstanceError(f"x0 has length {x0.shape[0]}, expected {n}")
        if self.lmo.dim != n:
            raise InstanceError(f"LMO dimension {self.lmo.dim} does not match objective dimension {n}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))
        ref = self.reference_opt
        if ref is not None:
            if ref.x_star.shape[0] != n:
                raise InstanceError(f"reference x_star has length {ref.x_star.shape[0]}, expected {n}")
            h = evaluate_h(self, ref.x_star)
            if abs(h - ref.h_star) > REFERENCE_TOL:
                raise InstanceError(f"reference h_star={ref.h_star!r} does not match h(x_star)={h!r}")

    @property
    def n(self) -> int:
        return self.objective.n

    def with_reference(self, ref: ReferenceOpt) -> "ProblemInstance":
        return replace(self, reference_opt=ref)

    def with_x0(self, x0: np.ndarray) -> "ProblemInstance":
        return replace(self, x0=x0)


def evaluate_h(instance: ProblemInstance, x: np.ndarray) -> float:
    """h(x) = g(x) + f(x), f evaluated through the instance LMO."""
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.n,) or not np.all(np.isfinite(x)):
        raise PreconditionError(f"x must be a finite vector of length {instance.n}")
    return instance.objective.value(x) + instance.lmo.f_of(x)


# ============================================================
# Solver configuration
# ============================================================

class PolicyKind(str, Enum):
    ALL_CUT = "all_cut"
    SINGLE_CUT = "single_cut"
    ACTIVE_CUT = "active_cut"


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters shared by the drivers.

    Attributes:
        epsilon       -> target accuracy
        delta         -> null-step accuracy (None -> epsilon / 2)
        rho           -> proximal parameter, fixed for the whole run
        max_iter      -> iteration cap
        inner_tol     -> subproblem KKT tolerance (None -> min(delta * 1e-3, 1e-10))
        active_tol    -> relative tolerance deciding cut activity
        policy        -> bundle management policy
        diagnostics   -> check the primal-dual identities at every iteration
        radius_bound  -> R in the stopping certificate (None -> 2 ||x0|| + 10)
    """
    epsilon: float = 2e-3
    delta: Optional[float] = None
    rho: float = 1.0
    max_iter: int = 10_000
    inner_tol: Optional[float] = None
    active_tol: float = DEFAULT_ACTIVE_TOL
    policy: PolicyKind = PolicyKind.ACTIVE_CUT
    diagnostics: bool = False
    radius_bound: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "policy", PolicyKind(self.policy))
        if not self.epsilon > 0:
            raise PreconditionError(f"epsilon must be > 0, got {self.epsilon}")
        if self.delta is not None and not self.delta > 0:
            raise PreconditionError(f"delta must be > 0, got {self.delta}")
        if not self.rho > 0:
            raise PreconditionError(f"rho must be > 0, got {self.rho}")
        if self.max_iter < 1:
            raise PreconditionError(f"max_iter must be positive, got {self.max_iter}")
        if self.radius_bound is not None and not self.radius_bound > 0:
            raise PreconditionError(f"radius_bound must be > 0, got {self.radius_bound}")
        if self.inner_tol is not None and not self.inner_tol < self.effective_delta:
            raise PreconditionError(f"inner_tol {self.inner_tol} must be < delta {self.effective_delta}")

    @property
    def effective_delta(self) -> float:
        return self.epsilon / 2.0 if self.delta is None else float(self.delta)

    @property
    def effective_inner_tol(self) -> float:
        if self.inner_tol is not None:
            return float(self.inner_tol)
        return min(self.effective_delta * 1e-3, 1e-10)

    def resolved(self, x0: Optional[np.ndarray] = None) -> "SolverConfig":
        """Copy with delta and inner_tol (and R when x0 is given) materialised."""
        radius = self.radius_bound
        if radius is None and x0 is not None:
            radius = self.effective_radius(x0)[0]
        return replace(
            self,
            delta=self.effective_delta,
            inner_tol=self.effective_inner_tol,
            radius_bound=radius,
        )

    def effective_radius(self, x0: np.ndarray) -> Tuple[float, bool]:
        """Return (R, heuristic) where heuristic is True when R was defaulted."""
        if self.radius_bound is not None:
            return float(self.radius_bound), False
        return 2.0 * float(np.linalg.norm(x0)) + 10.0, True


# ============================================================
# Trace records
# ============================================================

class StepType(str, Enum):
    SERIOUS = "serious"
    NULL = "null"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class DualityResiduals:
    """Residuals of the primal-dual identities at one iteration (None = not checked)."""
    moreau_correspondence: float
    fw_gap_identity: float
    prox_dual_identity: float
    gradient_link: float
    strong_duality: float
    lower_model: float
    alm_update: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {
            "moreau_correspondence": self.moreau_correspondence,
            "fw_gap_identity": self.fw_gap_identity,
            "prox_dual_identity": self.prox_dual_identity,
            "gradient_link": self.gradient_link,
            "strong_duality": self.strong_duality,
            "lower_model": self.lower_model,
            "alm_update": self.alm_update,
        }


TRACE_COLUMNS: List[str] = [
    "iter",
    "step_type",
    "model_gap",
    "obj_value",
    "bundle_size_pre",
    "bundle_size_post",
    "prox_move",
    "fw_gap_dual",
    "wall_time_ns",
]


@dataclass(frozen=True)
class IterationRecord:
    """
    Per-iteration observables of a driver.

    model_gap is f(y) - f_k(y) at the candidate point; obj_value is h(y).
    """
    iter: int
    step_type: StepType
    model_gap: float
    obj_value: float
    bundle_size_pre: int
    bundle_size_post: int
    prox_move: float
    wall_time_ns: int
    fw_gap_dual: Optional[float] = None
    duality_residuals: Optional[DualityResiduals] = None
    cut_id: int = -1
    lower_bound: Optional[float] = None
    serious_count_so_far: int = 0
    certificate_bound: Optional[float] = None
    subproblem_value: Optional[float] = None

    def as_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "iter": self.iter,
            "step_type": self.step_type.value,
            "model_gap": self.model_gap,
            "obj_value": self.obj_value,
            "bundle_size_pre": self.bundle_size_pre,
            "bundle_size_post": self.bundle_size_post,
            "prox_move": self.prox_move,
            "fw_gap_dual": self.fw_gap_dual,
            "wall_time_ns": self.wall_time_ns,
            "serious_count_so_far": self.serious_count_so_far,
            "certificate_bound": self.certificate_bound,
        }
        return row


def ensure_nonempty(bundle: Bundle) -> None:
    if len(bundle) == 0:
        raise EmptyModelError()
