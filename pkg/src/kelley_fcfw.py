# src/kelley_fcfw.py
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg

from src.densela import spd_solve
from src.duality import phi_value
from src.errors import PreconditionError
from src.lmo import ExplicitLmo, LmoDescriptor
from src.model import (
    Bundle,
    IterationRecord,
    ProblemInstance,
    QuadraticObjective,
    StepType,
    ensure_nonempty,
    model_value,
)
from src.subqp import BundleSubproblem, primal_point


LOGGER = logging.getLogger(__name__)

GAP_CRITERION = "gap_criterion"
MAX_ITER = "max_iter"
CORRECTION_TOL = 1e-13
CORRECTION_MAX_ITER = 50_000
POLISH_EVERY = 25
POLISH_NEG_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class KelleyResult:
    x: np.ndarray
    iterations: int
    trace: List[IterationRecord]
    terminated_by: str
    bundle: Bundle
    iterates: List[np.ndarray] = field(default_factory=list)
    added_ids: List[int] = field(default_factory=list)

    @property
    def final_gap(self) -> float:
        return self.trace[-1].model_gap if self.trace else float("nan")


@dataclass(frozen=True, eq=False)
class FcfwResult:
    """Dual iterate (w, beta) of the last fully corrective step and x = -grad phi(w)."""
    w: np.ndarray
    beta: float
    x: np.ndarray
    iterations: int
    trace: List[IterationRecord]
    terminated_by: str
    bundle: Bundle
    dual_objective: float = float("nan")
    iterates: List[np.ndarray] = field(default_factory=list)
    added_ids: List[int] = field(default_factory=list)


@dataclass(frozen=True)
class EquivalenceReport:
    max_x_residual: float
    max_cut_id_mismatch: int
    iterations_compared: int
    kelley_iterations: int
    fcfw_iterations: int

    @property
    def ok(self) -> bool:
        return self.max_x_residual <= 1e-8 and self.max_cut_id_mismatch == 0


def _require_strong_convexity(objective: QuadraticObjective) -> None:
    if not objective.mu_g > 0:
        raise PreconditionError("Kelley requires strong convexity")


def initial_bundle(lmo: LmoDescriptor, x0: np.ndarray, V0: Optional[Bundle] = None) -> Bundle:
    """V0 as given, or the single LMO cut at x0."""
    if V0 is not None:
        if len(V0) == 0:
            raise PreconditionError("initial bundle must be nonempty")
        return V0
    bundle, _, _ = Bundle(lmo.dim).add(lmo.lmo_max(x0))
    return bundle


# ============================================================
# Kelley's cutting-plane method
# ============================================================

def run_kelley(
    instance: ProblemInstance,
    epsilon: float,
    V0: Optional[Bundle] = None,
    max_iter: int = 1000,
    tol: float = 1e-12,
) -> KelleyResult:
    """
    x_{k+1} = argmin g + f_k, then add the LMO cut at x_{k+1}; stop once
    f(x_{k+1}) - f_k(x_{k+1}) <= epsilon.

    The new cut is added before the test, so every iteration grows the bundle
    by at most one cut.
    """
    objective = instance.objective
    _require_strong_convexity(objective)
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be > 0, got {epsilon}")
    lmo = instance.lmo
    bundle = initial_bundle(lmo, instance.x0, V0)
    engine = BundleSubproblem(objective, 0.0)

    trace: List[IterationRecord] = []
    iterates: List[np.ndarray] = []
    added: List[int] = []
    x_prev = instance.x0
    x = x_prev
    terminated_by = MAX_ITER
    for k in range(1, max_iter + 1):
        t0 = time.perf_counter_ns()
        sol = engine.solve(bundle, tol=tol)
        x = sol.x_next
        model = model_value(bundle, x).value
        cut = lmo.lmo_max(x)
        f_x = cut.value_at(x)
        gap = f_x - model
        size_pre = len(bundle)
        bundle, stored, _ = bundle.add(cut)
        added.append(stored.id)
        iterates.append(x)

        done = gap <= epsilon
        trace.append(
            IterationRecord(
                iter=k,
                step_type=StepType.TERMINAL if done else StepType.NULL,
                model_gap=gap,
                obj_value=objective.value(x) + f_x,
                bundle_size_pre=size_pre,
                bundle_size_post=len(bundle),
                prox_move=float(np.linalg.norm(x - x_prev)),
                wall_time_ns=time.perf_counter_ns() - t0,
                cut_id=stored.id,
                lower_bound=objective.value(x) + model,
            )
        )
        LOGGER.debug("kelley it %d: gap=%.3e bundle=%d", k, gap, len(bundle))
        x_prev = x
        if done:
            terminated_by = GAP_CRITERION
            break

    LOGGER.info("kelley stopped by %s after %d iterations", terminated_by, len(trace))
    return KelleyResult(x, len(trace), trace, terminated_by, bundle, iterates, added)


# ============================================================
# Fully corrective Frank-Wolfe on the dual
# ============================================================

@dataclass(frozen=True, eq=False)
class VertexWeights:
    """Minimizer of phi(V^T lam) - b^T lam over the simplex on a bundle's vertices."""
    ids: Tuple[int, ...]
    lam: np.ndarray
    w: np.ndarray
    beta: float
    inner_gap: float
    iterations: int
    polished: bool

    def weights(self) -> Dict[int, float]:
        return {i: float(l) for i, l in zip(self.ids, self.lam) if l > 0}


def _inner_gap(grad: np.ndarray, lam: np.ndarray) -> float:
    return float(grad @ lam - np.min(grad))


def _gap_floor(grad: np.ndarray, tol: float) -> float:
    return max(tol, 1e2 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(grad)))))


def _polish(M: np.ndarray, d: np.ndarray, lam: np.ndarray) -> Optional[np.ndarray]:
    """Stationary point of the dual on the current support; None if a weight goes negative."""
    S = np.flatnonzero(lam > 0)
    m = S.size
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = M[np.ix_(S, S)]
    K[:m, m] = 1.0
    K[m, :m] = 1.0
    mu = scipy.linalg.lstsq(K, np.append(-d[S], 1.0))[0][:m]
    if np.any(mu < -POLISH_NEG_TOL):
        return None
    out = np.zeros_like(lam)
    out[S] = np.clip(mu, 0.0, None)
    total = float(out.sum())
    return out / total if total > 0 else None


def fully_corrective_step(
    objective: QuadraticObjective,
    bundle: Bundle,
    warm: Optional[Mapping[int, float]] = None,
    tol: float = CORRECTION_TOL,
    max_iter: int = CORRECTION_MAX_ITER,
) -> VertexWeights:
    """
    Minimize phi(w) - beta over conv of the bundle's vertices, in the weights lam
    with w = V^T lam and beta = b^T lam:

        min_{lam in simplex}  1/2 lam^T M lam + d^T lam,   M = V Q^{-1} V^T,  d = V Q^{-1} q - b

    Pairwise Frank-Wolfe steps with exact line search, and every
    POLISH_EVERY steps an equality-constrained solve on the current support
    that is accepted once its inner FW gap is at roundoff level.
    """
    ensure_nonempty(bundle)
    V, b = bundle.slopes, bundle.intercepts
    QiVt = spd_solve(objective.Q, V.T)
    M = V @ QiVt
    M = 0.5 * (M + M.T)
    d = V @ spd_solve(objective.Q, objective.q) - b

    lam = np.array([max(float((warm or {}).get(i, 0.0)), 0.0) for i in bundle.ids])
    if lam.sum() > 0:
        lam /= lam.sum()
    else:
        lam[int(np.argmin(0.5 * np.diag(M) + d))] = 1.0

    it = 0
    polished = False
    while True:
        if it % POLISH_EVERY == 0:
            cand = _polish(M, d, lam)
            if cand is not None:
                g_c = M @ cand + d
                if _inner_gap(g_c, cand) <= _gap_floor(g_c, tol):
                    lam, polished = cand, True
                    break
        grad = M @ lam + d
        if _inner_gap(grad, lam) <= _gap_floor(grad, tol):
            break
        if it >= max_iter:
            LOGGER.warning(
                "fully corrective step stopped after %d iterations with inner gap %.3e",
                it, _inner_gap(grad, lam),
            )
            break
        it += 1
        s = int(np.argmin(grad))
        active = np.flatnonzero(lam > 0)
        a = int(active[np.argmax(grad[active])])
        if a == s:
            break
        slope = float(grad[s] - grad[a])
        curv = float(M[s, s] - 2.0 * M[s, a] + M[a, a])
        t_max = float(lam[a])
        t = t_max if curv <= 0 else min(t_max, -slope / curv)
        lam[s] += t
        if t >= t_max:
            lam[a] = 0.0
        else:
            lam[a] -= t

    grad = M @ lam + d
    w = V.T @ lam
    for arr in (lam, w):
        arr.flags.writeable = False
    return VertexWeights(bundle.ids, lam, w, float(b @ lam), _inner_gap(grad, lam), it, polished)


def run_fcfw(
    objective: QuadraticObjective,
    V: ExplicitLmo,
    epsilon: float,
    V0: Optional[Bundle] = None,
    max_iter: int = 1000,
    x0: Optional[np.ndarray] = None,
    tol: float = CORRECTION_TOL,
) -> FcfwResult:
    """
    Minimize phi(w) - beta over conv(V): minimize exactly over the active
    vertices, then take the Frank-Wolfe vertex at -grad phi(w). Stops when the
    FW gap is at most epsilon and returns x = -grad phi(w).

    Works on the dual only; the primal subproblem solver is never called.
    """
    _require_strong_convexity(objective)
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be > 0, got {epsilon}")
    x0 = np.zeros(objective.n) if x0 is None else np.asarray(x0, dtype=float)
    bundle = initial_bundle(V, x0, V0)

    trace: List[IterationRecord] = []
    iterates: List[np.ndarray] = []
    added: List[int] = []
    w = np.zeros(objective.n)
    beta = 0.0
    dual_obj = float("nan")
    weights: Dict[int, float] = {}
    x = x0
    x_prev = x0
    terminated_by = MAX_ITER
    for k in range(1, max_iter + 1):
        t0 = time.perf_counter_ns()
        corr = fully_corrective_step(objective, bundle, weights, tol)
        w, beta = corr.w, corr.beta
        weights = corr.weights()
        x = primal_point(objective, w)
        cut = V.lmo_max(x)
        f_x = cut.value_at(x)
        fw_gap = f_x - (float(w @ x) + beta)
        dual_obj = phi_value(objective, w) - beta
        size_pre = len(bundle)
        bundle, stored, _ = bundle.add(cut)
        added.append(stored.id)
        iterates.append(x)

        done = fw_gap <= epsilon
        trace.append(
            IterationRecord(
                iter=k,
                step_type=StepType.TERMINAL if done else StepType.NULL,
                model_gap=fw_gap,
                obj_value=objective.value(x) + f_x,
                bundle_size_pre=size_pre,
                bundle_size_post=len(bundle),
                prox_move=float(np.linalg.norm(x - x_prev)),
                wall_time_ns=time.perf_counter_ns() - t0,
                fw_gap_dual=fw_gap,
                cut_id=stored.id,
                lower_bound=-dual_obj,
            )
        )
        LOGGER.debug("fcfw it %d: gap=%.3e inner=%d polished=%s", k, fw_gap, corr.iterations, corr.polished)
        x_prev = x
        if done:
            terminated_by = GAP_CRITERION
            break

    LOGGER.info("fcfw stopped by %s after %d iterations", terminated_by, len(trace))
    return FcfwResult(w, beta, x, len(trace), trace, terminated_by, bundle, dual_obj, iterates, added)


def verify_kelley_fcfw_equivalence(
    instance: ProblemInstance,
    V0: Optional[Bundle] = None,
    iters: int = 15,
    epsilon: float = 1e-12,
) -> EquivalenceReport:
    """
    Run both drivers from the same V0 and compare x_{k+1} with grad g*(-w_{k+1})
    and the sequences of added cut ids. Mismatches are reported, never raised.
    """
    if not isinstance(instance.lmo, ExplicitLmo):
        raise PreconditionError("Kelley/FCFW equivalence needs an explicit vertex set")
    V0 = initial_bundle(instance.lmo, instance.x0, V0)
    kel = run_kelley(instance, epsilon, V0, iters)
    fw = run_fcfw(instance.objective, instance.lmo, epsilon, V0, iters, instance.x0)

    common = min(kel.iterations, fw.iterations)
    residual = max(
        (float(np.linalg.norm(a - b)) for a, b in zip(kel.iterates[:common], fw.iterates[:common])),
        default=0.0,
    )
    mismatch = sum(1 for a, b in zip(kel.added_ids, fw.added_ids) if a != b)
    mismatch += abs(len(kel.added_ids) - len(fw.added_ids))
    return EquivalenceReport(residual, mismatch, common, kel.iterations, fw.iterations)

