# src/subqp.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Protocol, Tuple

import numpy as np
import scipy.linalg

from src.densela import cho_solve, cholesky
from src.errors import NotPositiveDefiniteError, PreconditionError, SubproblemError
from src.model import Bundle, Cut, QuadraticObjective, ensure_nonempty


LOGGER = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12
DEFAULT_TOL = 1e-10
NULL_SPACE_RCOND = 1e-12
MIN_CYCLE_CAP = 100
AFW_ITERS_PER_CUT = 200


@dataclass(frozen=True)
class ProxCenter:
    """Proximal term rho/2 ||x - x_c||^2 added to g."""
    x_c: np.ndarray
    rho: float

    def __post_init__(self) -> None:
        x_c = np.array(self.x_c, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x_c)):
            raise PreconditionError("prox center has non-finite entries")
        if not self.rho > 0:
            raise PreconditionError(f"rho must be > 0, got {self.rho}")
        x_c.flags.writeable = False
        object.__setattr__(self, "x_c", x_c)
        object.__setattr__(self, "rho", float(self.rho))


@dataclass(frozen=True, eq=False)
class DualSolution:
    """
    Optimal weights over the bundle and the primal point they induce.

    dual_value is beta - g_hat*(-w) (the maximised dual, equal to the primal
    optimum); dual_objective = g_hat*(-w) - beta is the minimised form.
    """
    ids: Tuple[int, ...]
    lam: np.ndarray
    w: np.ndarray
    beta: float
    x_next: np.ndarray
    primal_value: float
    dual_value: float
    model_at_x: float
    kkt_residual: float
    iterations: int = 0
    used_fallback: bool = False
    support: Tuple[int, ...] = field(default=())

    @property
    def dual_objective(self) -> float:
        return -self.dual_value

    @property
    def duality_gap(self) -> float:
        return abs(self.primal_value - self.dual_value)

    def weights(self) -> Dict[int, float]:
        return {i: float(l) for i, l in zip(self.ids, self.lam) if l > SUPPORT_TOL}


class LmoLike(Protocol):
    def lmo_max(self, x: np.ndarray) -> Cut: ...


@dataclass(frozen=True)
class FwDirection:
    cut: Cut
    fw_gap: float


# ============================================================
# Active-set solver on the simplex
# ============================================================

class BundleSubproblem:
    """
    Solves  min_x g(x) + f_k(x) + rho/2 ||x - x_c||^2  through its dual

        min_{lam in simplex}  g_hat*(-V^T lam) - b^T lam

    with H = Q + rho*I factored once. Columns H^{-1} v are cached by cut id, so
    a driver reuses one instance for a whole run (center moves only change
    H^{-1} c). rho = 0 is Kelley mode and needs mu_g > 0.

    The last optimal weights are kept as the warm start of the next solve.
    """

    def __init__(self, objective: QuadraticObjective, rho: float = 0.0) -> None:
        if rho < 0:
            raise PreconditionError(f"rho must be >= 0, got {rho}")
        if rho == 0 and not objective.mu_g > 0:
            raise SubproblemError("subproblem not strongly convex")
        self.objective = objective
        self.rho = float(rho)
        H = objective.Q.entries + self.rho * np.eye(objective.n)
        try:
            self._factor = cholesky(H)
        except NotPositiveDefiniteError as exc:
            raise SubproblemError("subproblem not strongly convex") from exc
        self._columns: Dict[int, np.ndarray] = {}
        self._warm: Dict[int, float] = {}

    @property
    def n(self) -> int:
        return self.objective.n

    def h_solve(self, rhs: np.ndarray) -> np.ndarray:
        """H^{-1} rhs with the cached factor."""
        return cho_solve(self._factor, rhs)

    def _column(self, cut: Cut) -> np.ndarray:
        col = self._columns.get(cut.id)
        if col is None:
            col = self.h_solve(cut.v)
            self._columns[cut.id] = col
        return col

    def forget(self, keep_ids: Optional[List[int]] = None) -> None:
        """Drop cached columns (and warm weights) of cuts not in keep_ids."""
        if keep_ids is None:
            self._columns.clear()
            self._warm.clear()
            return
        keep = set(keep_ids)
        self._columns = {i: c for i, c in self._columns.items() if i in keep}
        self._warm = {i: w for i, w in self._warm.items() if i in keep}

    def solve(
        self,
        bundle: Bundle,
        x_c: Optional[np.ndarray] = None,
        tol: float = DEFAULT_TOL,
        warm: Optional[Mapping[int, float]] = None,
    ) -> DualSolution:
        ensure_nonempty(bundle)
        n, k = self.n, len(bundle)
        if bundle.dim != n:
            raise PreconditionError(f"bundle dimension {bundle.dim} does not match objective dimension {n}")
        x_c = np.zeros(n) if x_c is None else np.asarray(x_c, dtype=float)
        if self.rho == 0 and np.any(x_c != 0):
            raise PreconditionError("a prox center needs rho > 0")

        V = bundle.slopes
        b = bundle.intercepts
        U = np.column_stack([self._column(c) for c in bundle.cuts])
        c = self.objective.q - self.rho * x_c
        h_c = self.h_solve(c)

        lam = self._initial_weights(bundle, V, b, U, h_c, self._warm if warm is None else warm)
        state = _ActiveSet(V, b, U, h_c, lam, tol)
        ok = state.run(cycle_cap=max(10 * k, MIN_CYCLE_CAP))
        used_fallback = False
        if not ok:
            LOGGER.warning(
                "active-set cycle cap hit on a bundle of %d cuts (residual %.3e); switching to away-step FW",
                k, state.residual(),
            )
            used_fallback = True
            if not state.away_step_fw(max_iter=AFW_ITERS_PER_CUT * k + 1000):
                raise SubproblemError(
                    "active-set cycle cap exceeded and away-step fallback did not converge",
                    state=state.dump(bundle.ids),
                )

        lam = state.lam
        solution = self._finish(bundle, V, b, lam, c, x_c, state.iterations, used_fallback)
        self._warm = solution.weights()
        return solution

    def _initial_weights(
        self,
        bundle: Bundle,
        V: np.ndarray,
        b: np.ndarray,
        U: np.ndarray,
        h_c: np.ndarray,
        warm: Mapping[int, float],
    ) -> np.ndarray:
        k = len(bundle)
        lam = np.array([max(float(warm.get(i, 0.0)), 0.0) for i in bundle.ids])
        total = float(lam.sum())
        if total > 0:
            return lam / total
        # Cold start: the vertex with the smallest dual objective.
        G_diag = np.einsum("ij,ji->i", V, U)
        phi = 0.5 * G_diag + V @ h_c - b
        lam = np.zeros(k)
        lam[int(np.argmin(phi))] = 1.0
        return lam

    def _finish(
        self,
        bundle: Bundle,
        V: np.ndarray,
        b: np.ndarray,
        lam: np.ndarray,
        c: np.ndarray,
        x_c: np.ndarray,
        iterations: int,
        used_fallback: bool,
    ) -> DualSolution:
        w = V.T @ lam
        beta = float(b @ lam)
        x = -self.h_solve(w + c)
        vals = V @ x + b
        model = float(np.max(vals))
        support_mask = lam > SUPPORT_TOL
        residual = float(model - np.min(vals[support_mask]))

        r_hat = self.objective.r + 0.5 * self.rho * float(x_c @ x_c)
        primal = self.objective.value(x) + 0.5 * self.rho * float((x - x_c) @ (x - x_c)) + model
        # g_hat*(-w) = -1/2 (w + c)^T x - r_hat at x = -H^{-1}(w + c)
        dual = beta + r_hat + 0.5 * float((w + c) @ x)

        for arr in (lam, w, x):
            arr.flags.writeable = False
        return DualSolution(
            ids=bundle.ids,
            lam=lam,
            w=w,
            beta=beta,
            x_next=x,
            primal_value=float(primal),
            dual_value=float(dual),
            model_at_x=model,
            kkt_residual=residual,
            iterations=iterations,
            used_fallback=used_fallback,
            support=tuple(i for i, m in zip(bundle.ids, support_mask) if m),
        )


class _ActiveSet:
    """
    Scratch state of one active-set run.

    Every cut value v_j^T x + b_j equals minus the dual gradient, so the most
    violated cut is the one with the largest value at x(lam).
    """

    def __init__(
        self,
        V: np.ndarray,
        b: np.ndarray,
        U: np.ndarray,
        h_c: np.ndarray,
        lam: np.ndarray,
        tol: float,
    ) -> None:
        self.V, self.b, self.U, self.h_c = V, b, U, h_c
        self.lam = lam.astype(float).copy()
        self.tol = float(tol)
        self.iterations = 0

    def x_of(self, lam: np.ndarray) -> np.ndarray:
        return -(self.U @ lam + self.h_c)

    def values(self, lam: Optional[np.ndarray] = None) -> np.ndarray:
        return self.V @ self.x_of(self.lam if lam is None else lam) + self.b

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.lam > 0)

    def residual(self) -> float:
        vals = self.values()
        return float(np.max(vals) - np.min(vals[self.support()]))

    def threshold(self, vals: np.ndarray) -> float:
        scale = 1.0 + float(np.max(np.abs(vals)))
        return max(self.tol, 1e2 * np.finfo(float).eps * scale)

    def _drop_to_boundary(self, S: np.ndarray, direction: np.ndarray) -> None:
        """Move lam_S along direction until the first weight hits zero, then drop it."""
        neg = direction < 0
        if not np.any(neg):
            raise SubproblemError("degenerate direction without a decreasing weight", state={"support": S.tolist()})
        ratios = np.full(S.size, np.inf)
        ratios[neg] = self.lam[S][neg] / (-direction[neg])
        t = float(np.min(ratios))
        hit = int(np.flatnonzero(ratios <= t)[0])
        new = self.lam[S] + t * direction
        new[hit] = 0.0
        new[new < SUPPORT_TOL] = 0.0
        self.lam[S] = new
        self.lam /= self.lam.sum()

    def run(self, cycle_cap: int) -> bool:
        """Active-set iterations; False if the cycle cap trips."""
        while self.iterations < cycle_cap:
            self.iterations += 1
            S = self.support()
            A_S = np.vstack([self.V[S].T, np.ones(S.size)])
            null = scipy.linalg.null_space(A_S, rcond=NULL_SPACE_RCOND)
            if null.shape[1] > 0:
                # The dual is linear along d (V_S^T d = 0, 1^T d = 0) with slope -b_S^T d.
                d = null[:, 0]
                if -self.values()[S] @ d > 0:
                    d = -d
                self._drop_to_boundary(S, d)
                continue

            G_SS = self.V[S] @ self.U[:, S]
            e_S = self.V[S] @ self.h_c - self.b[S]
            m = S.size
            K = np.zeros((m + 1, m + 1))
            K[:m, :m] = G_SS
            K[:m, m] = 1.0
            K[m, :m] = 1.0
            rhs = np.append(-e_S, 1.0)
            try:
                mu = scipy.linalg.solve(K, rhs, assume_a="sym")[:m]
            except np.linalg.LinAlgError:
                return False

            if np.any(mu < -SUPPORT_TOL):
                self._drop_to_boundary(S, mu - self.lam[S])
                continue

            self.lam[S] = np.clip(mu, 0.0, None)
            self.lam /= self.lam.sum()
            vals = self.values()
            outside = np.setdiff1d(np.arange(self.lam.size), S)
            low = float(np.min(vals[S]))
            if outside.size == 0:
                return True
            j = int(outside[np.argmax(vals[outside])])
            if vals[j] - low <= self.threshold(vals):
                return True
            # Entering cut starts at weight zero and joins the support on the next solve.
            self.lam[j] = np.finfo(float).tiny
        return False

    def away_step_fw(self, max_iter: int) -> bool:
        """Away-step Frank-Wolfe with exact line search on the dual quadratic."""
        G = self.V @ self.U
        e = self.V @ self.h_c - self.b
        lam = np.clip(self.lam, 0.0, None)
        lam /= lam.sum()
        for _ in range(max_iter):
            self.iterations += 1
            grad = G @ lam + e
            s = int(np.argmin(grad))
            active = np.flatnonzero(lam > SUPPORT_TOL)
            a = int(active[np.argmax(grad[active])])
            gap = float(grad @ lam - grad[s])
            if gap <= max(self.tol, 1e2 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(grad))))):
                self.lam = lam
                return True
            fw_dir = -lam.copy()
            fw_dir[s] += 1.0
            away_dir = lam.copy()
            away_dir[a] -= 1.0
            if -grad @ fw_dir >= -grad @ away_dir or lam[a] >= 1.0:
                d, t_max = fw_dir, 1.0
            else:
                d, t_max = away_dir, lam[a] / (1.0 - lam[a])
            curv = float(d @ G @ d)
            slope = float(grad @ d)
            t = t_max if curv <= 0 else min(t_max, -slope / curv)
            lam = lam + max(t, 0.0) * d
            lam[lam < SUPPORT_TOL] = 0.0
            lam /= lam.sum()
        self.lam = lam
        return False

    def dump(self, ids: Tuple[int, ...]) -> Dict[str, object]:
        return {
            "ids": list(ids),
            "lambda": self.lam.tolist(),
            "support": [ids[i] for i in self.support()],
            "residual": self.residual(),
            "iterations": self.iterations,
        }


# ============================================================
# Functional surface
# ============================================================

def solve_bundle_subproblem(
    objective: QuadraticObjective,
    bundle: Bundle,
    center: Optional[ProxCenter] = None,
    tol: float = DEFAULT_TOL,
) -> DualSolution:
    """
    One-shot solve of the bundle subproblem (no caching across calls).

    With center=None the subproblem is Kelley's min g + f_k and g must be
    strongly convex.
    """
    if center is None:
        return BundleSubproblem(objective, 0.0).solve(bundle, None, tol)
    return BundleSubproblem(objective, center.rho).solve(bundle, center.x_c, tol)


def primal_point(objective: QuadraticObjective, w: np.ndarray, center: Optional[ProxCenter] = None) -> np.ndarray:
    """x = grad g_hat*(-w), i.e. the solution of (Q + rho I) x = -w - q + rho x_c."""
    rho = 0.0 if center is None else center.rho
    rhs = -np.asarray(w, dtype=float) - objective.q
    if center is not None:
        rhs = rhs + rho * center.x_c
    H = objective.Q.entries + rho * np.eye(objective.n)
    return cho_solve(cholesky(H), rhs)


def fw_direction(
    objective: QuadraticObjective,
    solution: DualSolution,
    lmo: LmoLike,
    center: Optional[ProxCenter] = None,
) -> FwDirection:
    """
    Frank-Wolfe vertex at x = grad g_hat*(-w) and the gap
    (v^T x + b) - (w^T x + beta) = f(x) - f_k(x).
    """
    x = primal_point(objective, solution.w, center)
    cut = lmo.lmo_max(x)
    gap = cut.value_at(x) - (float(solution.w @ x) + solution.beta)
    return FwDirection(cut, float(gap))

