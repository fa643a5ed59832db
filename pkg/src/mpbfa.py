# src/mpbfa.py
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from src.duality import (
    ConstantsReport,
    alm_decomposition,
    check_identities,
    iteration_residuals,
    moreau_phi,
    verify_serious_update_alm,
)
from src.data import load_reference, save_reference
from src.errors import PreconditionError, SubproblemError
from src.kelley_fcfw import initial_bundle
from src.lmo import ExplicitLmo
from src.model import (
    Bundle,
    Cut,
    IterationRecord,
    PolicyKind,
    ProblemInstance,
    ReferenceOpt,
    SolverConfig,
    StepType,
    evaluate_h,
    model_value,
)
from src.subqp import BundleSubproblem


LOGGER = logging.getLogger(__name__)

CERTIFICATE = "certificate"
EPSILON_REACHED = "epsilon_reached"
MAX_ITER = "max_iter"
REFERENCE_EPSILON = 1e-9
REFERENCE_MAX_ITER = 200_000


@dataclass(frozen=True)
class Certificate:
    """bound = delta + rho * prox_move * R; stop iff bound <= epsilon."""
    stop: bool
    bound: float
    delta_term: float
    gradient_term: float

    @property
    def total(self) -> float:
        return self.bound


@dataclass(frozen=True, eq=False)
class MpbfaResult:
    best_serious_x: np.ndarray
    best_serious_value: float
    serious_count: int
    null_count: int
    longest_null_run: int
    trace: List[IterationRecord]
    certificate: Optional[Certificate]
    terminated_by: str
    policy: PolicyKind
    radius_bound: float
    radius_heuristic: bool
    final_center: np.ndarray
    bundle: Bundle = field(repr=False)
    epsilon: float = float("nan")
    h_star: Optional[float] = None

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def reached_epsilon(self) -> Optional[bool]:
        """best_serious_value - h* <= epsilon; None when no reference optimum is known."""
        if self.h_star is None:
            return None
        return bool(self.best_serious_value - self.h_star <= self.epsilon)

    @property
    def converged(self) -> bool:
        """Certificate stop, or epsilon reached against the reference optimum."""
        return self.terminated_by == CERTIFICATE or bool(self.reached_epsilon)

    def summary(self) -> dict:
        return {
            "best_serious_value": self.best_serious_value,
            "best_serious_x": self.best_serious_x.tolist(),
            "serious_count": self.serious_count,
            "null_count": self.null_count,
            "longest_null_run": self.longest_null_run,
            "iterations": self.iterations,
            "terminated_by": self.terminated_by,
            "reached_epsilon": self.reached_epsilon,
            "h_star": self.h_star,
            "policy": self.policy.value,
            "radius_bound": self.radius_bound,
            "radius_heuristic": self.radius_heuristic,
            "certificate": None if self.certificate is None else {
                "delta_term": self.certificate.delta_term,
                "gradient_term": self.certificate.gradient_term,
                "total": self.certificate.total,
                "stop": self.certificate.stop,
            },
        }


@dataclass(frozen=True)
class BoundMonitor:
    serious_ok: bool
    observed_serious: int
    serious_bound: float
    longest_null_run: int
    null_bound_note: str
    reached_epsilon: bool


# ============================================================
# Policies and certificate
# ============================================================

def apply_policy(
    bundle: Bundle,
    step: StepType,
    policy: PolicyKind,
    active_ids: Iterable[int],
    newest: Cut,
) -> Bundle:
    """
    all_cut keeps everything; single_cut keeps {newest} after a serious step
    and active + newest after a null step; active_cut keeps active + newest
    after both.
    """
    policy = PolicyKind(policy)
    if policy is PolicyKind.ALL_CUT:
        return bundle
    if policy is PolicyKind.SINGLE_CUT and step is StepType.SERIOUS:
        return bundle.keep([newest.id])
    return bundle.keep(set(active_ids) | {newest.id})


def stopping_certificate(
    model_gap: float,
    prox_move: float,
    rho: float,
    delta: float,
    radius_bound: float,
    epsilon: float,
) -> Certificate:
    """
    rho * (x_k - y) is an approximate subgradient at y, so
    h(y) - h* <= delta + rho * ||y - x_k|| * R whenever ||y - x*|| <= R.
    """
    if not radius_bound > 0:
        raise PreconditionError(f"radius bound must be > 0, got {radius_bound}")
    if model_gap > delta:
        raise PreconditionError(f"certificate needs a serious step (model gap {model_gap:.3e} > delta {delta:.3e})")
    grad_term = rho * prox_move * radius_bound
    bound = delta + grad_term
    return Certificate(bound <= epsilon, bound, delta, grad_term)


# ============================================================
# Driver
# ============================================================

def run_mpbfa(
    instance: ProblemInstance,
    config: SolverConfig,
    V0: Optional[Bundle] = None,
    stop_at_reference: bool = False,
) -> MpbfaResult:
    """
    Proximal bundle method with a fixed absolute null-step test.

    Each iteration solves the centered subproblem, classifies the step by
    f(y) - f_k(y) <= delta, adds the LMO cut at y and prunes the bundle with the
    configured policy. Serious steps are checked against the stopping
    certificate. With config.diagnostics every primal-dual identity is checked
    and a violation raises IdentityViolationError.

    With stop_at_reference and a known reference optimum the run also stops
    once the best serious value is within epsilon of h*. Under single_cut the
    prox moves need not shrink and the certificate may never fire.
    """
    objective, lmo = instance.objective, instance.lmo
    rho, eps = config.rho, config.epsilon
    delta = config.effective_delta
    tol = config.effective_inner_tol
    R, heuristic = config.effective_radius(instance.x0)
    h_star = None if instance.reference_opt is None else instance.reference_opt.h_star
    engine = BundleSubproblem(objective, rho)
    bundle = initial_bundle(lmo, instance.x0, V0)

    x_c = instance.x0
    best_x, best_h = instance.x0, evaluate_h(instance, instance.x0)
    serious = null = null_run = longest_null = 0
    certificate: Optional[Certificate] = None
    trace: List[IterationRecord] = []
    terminated_by = MAX_ITER

    for k in range(1, config.max_iter + 1):
        t0 = time.perf_counter_ns()
        try:
            sol = engine.solve(bundle, x_c, tol)
        except SubproblemError as exc:
            raise SubproblemError(str(exc), state=exc.state, iteration=k) from exc
        y = sol.x_next
        mv = model_value(bundle, y, config.active_tol)
        cut = lmo.lmo_max(y)
        f_y = cut.value_at(y)
        gap = f_y - mv.value
        step = StepType.SERIOUS if gap <= delta else StepType.NULL
        prox_move = float(np.linalg.norm(y - x_c))

        residuals = None
        fw_gap_dual = None
        if config.diagnostics:
            alm = None
            if step is StepType.SERIOUS and not np.array_equal(y, x_c):
                v, u = alm_decomposition(objective, rho, x_c, sol.w)
                alm = verify_serious_update_alm(x_c, y, v, u, rho)
            y_dual = -moreau_phi(objective, rho, x_c, sol.w).grad
            f_dual = lmo.f_of(y_dual)
            residuals = iteration_residuals(objective, bundle, sol, x_c, rho, f_y, gap, alm, f_at_dual=f_dual)
            fw_gap_dual = f_dual - (float(sol.w @ y_dual) + sol.beta)
            check_identities(residuals, sol.primal_value, k)

        size_pre = len(bundle)
        bundle, stored, _ = bundle.add(cut)
        bundle = apply_policy(bundle, step, config.policy, mv.argmax_ids, stored)
        engine.forget(list(bundle.ids))

        cert_bound = None
        h_y = objective.value(y) + f_y
        if step is StepType.SERIOUS:
            serious += 1
            null_run = 0
            certificate = stopping_certificate(gap, prox_move, rho, delta, R, eps)
            cert_bound = certificate.bound
            x_c = y
            if h_y < best_h or serious == 1:
                best_x, best_h = y, h_y
            LOGGER.debug("it %d serious #%d: h=%.8g gap=%.3e bound=%.3e", k, serious, h_y, gap, cert_bound)
        else:
            null += 1
            null_run += 1
            longest_null = max(longest_null, null_run)

        trace.append(
            IterationRecord(
                iter=k,
                step_type=step,
                model_gap=gap,
                obj_value=h_y,
                bundle_size_pre=size_pre,
                bundle_size_post=len(bundle),
                prox_move=prox_move,
                wall_time_ns=time.perf_counter_ns() - t0,
                fw_gap_dual=fw_gap_dual,
                duality_residuals=residuals,
                cut_id=stored.id,
                serious_count_so_far=serious,
                certificate_bound=cert_bound,
                subproblem_value=sol.primal_value,
            )
        )
        if certificate is not None and step is StepType.SERIOUS and certificate.stop:
            terminated_by = CERTIFICATE
            break
        if stop_at_reference and h_star is not None and serious and best_h - h_star <= eps:
            terminated_by = EPSILON_REACHED
            break

    LOGGER.info(
        "mpbfa (%s) stopped by %s after %d iterations: %d serious, %d null, best h=%.10g",
        config.policy.value, terminated_by, len(trace), serious, null, best_h,
    )
    return MpbfaResult(
        best_serious_x=best_x,
        best_serious_value=best_h,
        serious_count=serious,
        null_count=null,
        longest_null_run=longest_null,
        trace=trace,
        certificate=certificate,
        terminated_by=terminated_by,
        policy=config.policy,
        radius_bound=R,
        radius_heuristic=heuristic,
        final_center=x_c,
        bundle=bundle,
        epsilon=eps,
        h_star=h_star,
    )


# ============================================================
# Monitors and reference optimum
# ============================================================

def monitor_bounds(
    result: MpbfaResult,
    constants: ConstantsReport,
    h_star: float,
    epsilon: float,
) -> BoundMonitor:
    """
    Count serious steps until the first epsilon-optimal serious iterate and
    compare with rho ||x* - x0||^2 / epsilon + 1. The null-run bound holds the
    pyramidal width and is reported only.
    """
    observed = 0
    reached = False
    for rec in result.trace:
        if rec.step_type is not StepType.SERIOUS:
            continue
        observed += 1
        if rec.obj_value - h_star <= epsilon:
            reached = True
            break
    note = (
        f"longest null run {result.longest_null_run}; the null-run bound depends on the "
        f"pyramidal width (unknown), log argument {constants.null_bound_log_arg:.3e}"
    )
    return BoundMonitor(
        serious_ok=reached and observed <= constants.serious_bound,
        observed_serious=observed,
        serious_bound=constants.serious_bound,
        longest_null_run=result.longest_null_run,
        null_bound_note=note,
        reached_epsilon=reached,
    )


def compute_reference_opt(
    instance: ProblemInstance,
    cache_path: Optional[Path] = None,
) -> ReferenceOpt:
    """
    Reference optimum (x*, h*): exact dual solve over the whole vertex set when V
    is explicit and g strongly convex, otherwise MPB-FA at epsilon = 1e-9 with
    all_cut. Cached as JSON at cache_path when given.
    """
    if cache_path is not None and Path(cache_path).exists():
        ref = load_reference(cache_path, instance.n)
        LOGGER.info("reference optimum loaded from %s", cache_path)
        return ref

    lmo = instance.lmo
    if isinstance(lmo, ExplicitLmo) and instance.objective.mu_g > 0:
        bundle = Bundle.from_pairs(lmo.dim, ((c.v, c.b) for c in lmo.cuts))
        x_star = BundleSubproblem(instance.objective, 0.0).solve(bundle, tol=1e-13).x_next
    else:
        config = SolverConfig(
            epsilon=REFERENCE_EPSILON,
            policy=PolicyKind.ALL_CUT,
            max_iter=REFERENCE_MAX_ITER,
        )
        result = run_mpbfa(instance, config)
        if not result.converged:
            LOGGER.warning("reference solve hit max_iter; using the best serious iterate")
        x_star = result.best_serious_x
    ref = ReferenceOpt(x_star, evaluate_h(instance, x_star))

    if cache_path is not None:
        save_reference(cache_path, ref)
    return ref


def with_reference(instance: ProblemInstance, cache_path: Optional[Path] = None) -> ProblemInstance:
    if instance.reference_opt is not None:
        return instance
    return replace(instance, reference_opt=compute_reference_opt(instance, cache_path))
