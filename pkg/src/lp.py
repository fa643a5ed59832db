# src/lp.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from src.errors import BundleKitError


LOGGER = logging.getLogger(__name__)

REFACTOR_EVERY = 50
COST_TOL = 1e-9
PIVOT_TOL = 1e-11
RATIO_TIE_TOL = 1e-12
FEAS_TOL = 1e-9
MAX_PIVOTS = 100_000


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LpProblem:
    """
    maximize c^T z  s.t.  A z <= b_up,  lower <= z <= upper.

    Box bounds are finite; rows may be empty (A of shape 0 x p).
    """
    c: np.ndarray
    A: np.ndarray
    b_up: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.c, dtype=float).reshape(-1)
        p = c.shape[0]
        A = np.array(self.A, dtype=float).reshape(-1, p) if np.size(self.A) else np.zeros((0, p))
        b = np.array(self.b_up, dtype=float).reshape(-1)
        lo = np.array(self.lower, dtype=float).reshape(-1)
        up = np.array(self.upper, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b_up has {b.shape[0]} entries")
        if lo.shape[0] != p or up.shape[0] != p:
            raise ValueError(f"bounds must have length {p}")
        for name, arr in (("c", c), ("A", A), ("b_up", b), ("lower", lo), ("upper", up)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"LP field {name} has non-finite entries")
        if np.any(lo > up):
            raise ValueError("LP bounds violate lower <= upper")
        for name, arr in (("c", c), ("A", A), ("b_up", b), ("lower", lo), ("upper", up)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def num_vars(self) -> int:
        return int(self.c.shape[0])

    @property
    def num_rows(self) -> int:
        return int(self.A.shape[0])

    def with_objective(self, c: np.ndarray) -> "LpProblem":
        return LpProblem(c, self.A, self.b_up, self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class LpResult:
    status: LpStatus
    z: Optional[np.ndarray]
    value: float
    basis: Tuple[int, ...]
    pivots: int = 0


# ============================================================
# Bounded-variable primal simplex (dense, explicit basis inverse)
# ============================================================

class _BoundedSimplex:
    """
    Per-call simplex state over the columns [A | I | -E] where the slack block
    turns rows into equalities and -E holds phase-1 artificials for rows the
    starting point violates.

    Entering and leaving variables follow Bland's rule (lowest index), which
    also breaks ratio-test ties.
    """

    def __init__(self, problem: LpProblem, start_cost: np.ndarray) -> None:
        p, m = problem.num_vars, problem.num_rows
        self.p, self.m = p, m

        # Nonbasic structurals start at the bound favoured by start_cost.
        z0 = np.where(start_cost > 0, problem.upper, problem.lower)
        resid = problem.b_up - problem.A @ z0
        art_rows = np.flatnonzero(resid < 0)
        self.n_art = int(art_rows.size)

        E = np.zeros((m, self.n_art))
        E[art_rows, np.arange(self.n_art)] = -1.0
        self.M = np.hstack([problem.A, np.eye(m), E])
        self.rhs = problem.b_up.copy()
        total = p + m + self.n_art
        self.lo = np.concatenate([problem.lower, np.zeros(m + self.n_art)])
        self.up = np.concatenate([problem.upper, np.full(m + self.n_art, np.inf)])

        self.x = np.zeros(total)
        self.x[:p] = z0
        self.at_upper = np.zeros(total, dtype=bool)
        self.at_upper[:p] = start_cost > 0
        self.is_basic = np.zeros(total, dtype=bool)

        basis = np.arange(p, p + m)
        for k, row in enumerate(art_rows):
            basis[row] = p + m + k
        self.basis = basis
        self.is_basic[basis] = True
        self.pivots = 0
        self._since_refactor = 0
        self._refactor()

    @property
    def art_slice(self) -> slice:
        return slice(self.p + self.m, self.p + self.m + self.n_art)

    def _nonbasic_values(self) -> None:
        nb = ~self.is_basic
        self.x[nb] = np.where(self.at_upper[nb], self.up[nb], self.lo[nb])

    def _refactor(self) -> None:
        self.Binv = np.linalg.inv(self.M[:, self.basis]) if self.m else np.zeros((0, 0))
        self._nonbasic_values()
        nb = ~self.is_basic
        self.x[self.basis] = self.Binv @ (self.rhs - self.M[:, nb] @ self.x[nb])
        self._since_refactor = 0

    def fix_artificials(self) -> None:
        self.up[self.art_slice] = 0.0
        basic_art = self.is_basic[self.art_slice]
        idx = np.arange(self.p + self.m, self.p + self.m + self.n_art)[basic_art]
        self.x[idx] = np.minimum(self.x[idx], 0.0)

    def run(self, cost: np.ndarray) -> LpStatus:
        """Maximize cost^T x from the current basic feasible solution."""
        while True:
            if self._since_refactor >= REFACTOR_EVERY:
                self._refactor()
            if self.pivots >= MAX_PIVOTS:
                raise BundleKitError(f"simplex exceeded {MAX_PIVOTS} pivots")

            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.M
            movable = (~self.is_basic) & (self.up > self.lo)
            eligible = movable & np.where(self.at_upper, d < -COST_TOL, d > COST_TOL)
            candidates = np.flatnonzero(eligible)
            if candidates.size == 0:
                return LpStatus.OPTIMAL
            j = int(candidates[0])
            sigma = -1.0 if self.at_upper[j] else 1.0

            alpha = self.Binv @ self.M[:, j]
            rate = -sigma * alpha
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            upb = self.up[self.basis]

            steps = np.full(self.m, np.inf)
            dec = rate < -PIVOT_TOL
            inc = rate > PIVOT_TOL
            steps[dec] = (xb[dec] - lob[dec]) / (-rate[dec])
            finite_up = inc & np.isfinite(upb)
            steps[finite_up] = (upb[finite_up] - xb[finite_up]) / rate[finite_up]
            steps = np.maximum(steps, 0.0)

            flip = self.up[j] - self.lo[j]
            t_min = min(float(np.min(steps)) if self.m else np.inf, flip)
            if not np.isfinite(t_min):
                return LpStatus.UNBOUNDED

            # Bland: among (near-)ties pick the lowest variable index.
            tied_rows = np.flatnonzero(steps <= t_min + RATIO_TIE_TOL)
            best_row: Optional[int] = None
            best_var = j if flip <= t_min + RATIO_TIE_TOL else None
            for r in tied_rows:
                var = int(self.basis[r])
                if best_var is None or var < best_var:
                    best_var, best_row = var, int(r)

            self.x[j] += sigma * t_min
            self.x[self.basis] = xb - sigma * t_min * alpha
            self.pivots += 1

            if best_row is None:
                self.at_upper[j] = not self.at_upper[j]
                self.x[j] = self.up[j] if self.at_upper[j] else self.lo[j]
                continue

            leaving = int(self.basis[best_row])
            self.at_upper[leaving] = bool(rate[best_row] > 0)
            self.x[leaving] = self.up[leaving] if self.at_upper[leaving] else self.lo[leaving]
            self.is_basic[leaving] = False
            self.is_basic[j] = True
            self.at_upper[j] = False
            self.basis[best_row] = j

            piv = alpha[best_row]
            row = self.Binv[best_row] / piv
            self.Binv -= np.outer(alpha, row)
            self.Binv[best_row] = row
            self._since_refactor += 1

    def phase_one(self) -> bool:
        """Drive the artificials to zero; True iff the polytope is nonempty."""
        if self.n_art == 0:
            return True
        cost = np.zeros(self.M.shape[1])
        cost[self.art_slice] = -1.0
        self.run(cost)
        self._refactor()
        infeas = float(np.sum(self.x[self.art_slice]))
        scale = 1.0 + float(np.max(np.abs(self.rhs))) if self.m else 1.0
        return infeas <= FEAS_TOL * scale


def solve_lp(problem: LpProblem) -> LpResult:
    """
    Maximize c^T z over {A z <= b_up, lower <= z <= upper}.

    Returns a vertex (basic solution) on OPTIMAL; INFEASIBLE and UNBOUNDED
    are reported through the status, never raised. Deterministic given the input.
    """
    engine = _BoundedSimplex(problem, problem.c)
    if not engine.phase_one():
        return LpResult(LpStatus.INFEASIBLE, None, float("nan"), (), engine.pivots)
    engine.fix_artificials()

    cost = np.zeros(engine.M.shape[1])
    cost[: problem.num_vars] = problem.c
    status = engine.run(cost)
    if status is LpStatus.UNBOUNDED:
        return LpResult(status, None, float("inf"), (), engine.pivots)
    engine._refactor()

    z = np.clip(engine.x[: problem.num_vars], problem.lower, problem.upper)
    basis = tuple(sorted(int(i) for i in engine.basis if i < problem.num_vars + problem.num_rows))
    LOGGER.debug("LP solved: %d pivots, value %.6g", engine.pivots, float(problem.c @ z))
    return LpResult(LpStatus.OPTIMAL, z, float(problem.c @ z), basis, engine.pivots)


def feasibility_check(problem: LpProblem) -> bool:
    """True iff {A z <= b_up, lower <= z <= upper} is nonempty (phase-1 simplex)."""
    return _BoundedSimplex(problem, np.zeros(problem.num_vars)).phase_one()
