# src/duality.py
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.densela import eig_extremes, spd_solve
from src.errors import IdentityViolationError, PreconditionError
from src.lmo import LmoDescriptor
from src.model import Bundle, DualityResiduals, QuadraticObjective
from src.subqp import DualSolution, ProxCenter, solve_bundle_subproblem


LOGGER = logging.getLogger(__name__)

RANGE_TOL = 1e-9

# Contract limit per identity; "relative" ones are scaled by 1 + |primal value|.
IDENTITY_LIMITS: Dict[str, Tuple[float, bool]] = {
    "moreau_correspondence": (1e-8, False),
    "fw_gap_identity": (1e-7, False),
    "prox_dual_identity": (1e-8, True),
    "gradient_link": (1e-8, False),
    "strong_duality": (1e-8, True),
    "lower_model": (1e-8, False),
    "alm_update": (1e-7, False),
}


@dataclass(frozen=True, eq=False)
class MoreauEval:
    value: float
    grad: np.ndarray
    prox_point: np.ndarray


# ============================================================
# Conjugates and the Moreau envelope of phi = g*(-.)
# ============================================================

def conjugate_value(objective: QuadraticObjective, s: np.ndarray) -> float:
    """
    g*(s) = sup_x s^T x - g(x) = 1/2 (s - q)^T Q^+ (s - q) - r,
    +inf when s - q is outside range(Q).
    """
    t = np.asarray(s, dtype=float) - objective.q
    Q = objective.Q.entries
    x, *_ = np.linalg.lstsq(Q, t, rcond=None)
    if np.linalg.norm(Q @ x - t) > RANGE_TOL * (1.0 + np.linalg.norm(t)):
        return math.inf
    return float(0.5 * t @ x - objective.r)


def phi_value(objective: QuadraticObjective, u: np.ndarray) -> float:
    """phi(u) = g*(-u)."""
    return conjugate_value(objective, -np.asarray(u, dtype=float))


def moreau_envelope(objective: QuadraticObjective, rho: float, z: np.ndarray) -> MoreauEval:
    """
    M(z) = min_u phi(u) + ||u - z||^2 / (2 rho)
         = 1/2 (z + q)^T (Q + rho I)^{-1} (z + q) - r.
    """
    if not rho > 0:
        raise PreconditionError(f"rho must be > 0, got {rho}")
    z = np.asarray(z, dtype=float)
    t = z + objective.q
    grad = spd_solve(objective.Q.shifted(rho), t)
    value = 0.5 * float(t @ grad) - objective.r
    return MoreauEval(value, grad, z - rho * grad)


def moreau_phi(objective: QuadraticObjective, rho: float, x_c: np.ndarray, w: np.ndarray) -> MoreauEval:
    """Moreau envelope of phi at z = w - rho * x_c; y = -grad is the bundle step."""
    z = np.asarray(w, dtype=float) - rho * np.asarray(x_c, dtype=float)
    return moreau_envelope(objective, rho, z)


def g_hat_conjugate(objective: QuadraticObjective, rho: float, x_c: np.ndarray, w: np.ndarray) -> float:
    """g_hat*(-w) = M(w - rho x_c) - rho/2 ||x_c||^2 for g_hat = g + rho/2 ||. - x_c||^2."""
    x_c = np.asarray(x_c, dtype=float)
    return moreau_phi(objective, rho, x_c, w).value - 0.5 * rho * float(x_c @ x_c)


# ============================================================
# Identity checks
# ============================================================

def verify_prox_dual_identity(
    objective: QuadraticObjective,
    bundle: Bundle,
    x_c: np.ndarray,
    rho: float,
    solution: Optional[DualSolution] = None,
) -> float:
    """
    |min primal - (beta - M(w - rho x_c) + rho/2 ||x_c||^2)| at the subproblem
    optimum. The primal side is re-evaluated at x_next from g, the model and
    the prox term.
    """
    x_c = np.asarray(x_c, dtype=float)
    if solution is None:
        solution = solve_bundle_subproblem(objective, bundle, ProxCenter(x_c, rho))
    x = solution.x_next
    primal = objective.value(x) + float(np.max(bundle.values_at(x))) + 0.5 * rho * float((x - x_c) @ (x - x_c))
    dual = solution.beta - g_hat_conjugate(objective, rho, x_c, solution.w)
    return abs(primal - dual)


def alm_decomposition(
    objective: QuadraticObjective,
    rho: float,
    x_c: np.ndarray,
    w: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split of a serious step as a multiplier update with A = -I:
    returns (v, u) with v the prox point of phi at w - rho x_c and u = w.
    """
    ev = moreau_phi(objective, rho, x_c, w)
    return ev.prox_point, np.asarray(w, dtype=float)


def verify_serious_update_alm(
    x_prev: np.ndarray,
    x_new: np.ndarray,
    prox_point: np.ndarray,
    w: np.ndarray,
    rho: float,
) -> float:
    """Residual of x_new = x_prev + (A u + v) / rho with A = -I, u = w, v = prox_point."""
    x_prev = np.asarray(x_prev, dtype=float)
    x_new = np.asarray(x_new, dtype=float)
    if np.array_equal(x_prev, x_new):
        raise PreconditionError("ALM update check needs a serious step (x_new == x_prev)")
    if not rho > 0:
        raise PreconditionError(f"rho must be > 0, got {rho}")
    rebuilt = x_prev + (np.asarray(prox_point, dtype=float) - np.asarray(w, dtype=float)) / rho
    return float(np.linalg.norm(x_new - rebuilt))


def iteration_residuals(
    objective: QuadraticObjective,
    bundle: Bundle,
    solution: DualSolution,
    x_c: np.ndarray,
    rho: float,
    f_at_y: float,
    model_gap: float,
    alm_update: Optional[float] = None,
    f_at_dual: Optional[float] = None,
) -> DualityResiduals:
    """
    Residuals of every primal-dual identity at one bundle step.

    f_at_y is f at the candidate, from the LMO; everything dual-side is
    recomputed from (w, beta) through the Moreau envelope. f_at_dual is f at
    the dual-side point -grad of the envelope, from its own LMO call (defaults
    to f_at_y).
    """
    x_c = np.asarray(x_c, dtype=float)
    y = solution.x_next
    w, beta = solution.w, solution.beta
    env = moreau_phi(objective, rho, x_c, w)
    y_dual = -env.grad

    f_dual = f_at_y if f_at_dual is None else float(f_at_dual)
    fw_gap = f_dual - (float(w @ y_dual) + beta)
    model_at_y = float(np.max(bundle.values_at(y)))
    primal = objective.value(y) + model_at_y + 0.5 * rho * float((y - x_c) @ (y - x_c))
    dual_from_env = beta - (env.value - 0.5 * rho * float(x_c @ x_c))
    grad_hat = objective.grad(y) + rho * (y - x_c)

    return DualityResiduals(
        moreau_correspondence=float(np.linalg.norm(y - y_dual)),
        fw_gap_identity=abs(model_gap - fw_gap),
        prox_dual_identity=abs(primal - dual_from_env),
        gradient_link=float(np.linalg.norm(w + grad_hat)),
        strong_duality=abs(solution.primal_value - solution.dual_value),
        lower_model=abs(model_at_y - (float(w @ y) + beta)),
        alm_update=alm_update,
    )


def identity_limit(name: str, primal_value: float = 0.0) -> float:
    limit, relative = IDENTITY_LIMITS[name]
    return limit * (1.0 + abs(primal_value)) if relative else limit


def check_identities(residuals: DualityResiduals, primal_value: float, iteration: Optional[int] = None) -> None:
    """Raise IdentityViolationError on the first residual above its contract."""
    for name, value in residuals.as_dict().items():
        if value is None:
            continue
        limit = identity_limit(name, primal_value)
        if not value <= limit:
            LOGGER.warning("identity %s violated at iteration %s: %.3e > %.1e", name, iteration, value, limit)
            raise IdentityViolationError(name, value, limit)


# ============================================================
# Rate constants
# ============================================================

def alpha_constant(L_g: float, rho: float) -> float:
    """Strong convexity modulus of the two-projection dual: smallest eigenvalue of its Hessian."""
    if not (L_g > 0 and rho > 0):
        raise PreconditionError(f"alpha needs L_g > 0 and rho > 0, got L_g={L_g}, rho={rho}")
    return -0.5 * math.sqrt(1.0 / L_g ** 2 + 4.0 / rho ** 2) + 1.0 / (2.0 * L_g) + 1.0 / rho


def two_projection_hessian(L_g: float, rho: float, n: int = 1) -> np.ndarray:
    """(1/L_g) diag(I, 0) + (1/rho) [[I, -I], [-I, I]] of size 2n."""
    I = np.eye(n)
    Z = np.zeros((n, n))
    return np.block([[I, Z], [Z, Z]]) / L_g + np.block([[I, -I], [-I, I]]) / rho


def alpha_eigen_residual(L_g: float, rho: float, n: int = 1) -> float:
    lo, _ = eig_extremes(two_projection_hessian(L_g, rho, n))
    return abs(lo - alpha_constant(L_g, rho))


@dataclass(frozen=True)
class ConstantsReport:
    D: float
    D_w: float
    D_b: float
    diameters_exact: bool
    M_f: float
    L_g: float
    mu_g: float
    rho: float
    epsilon: float
    alpha: Optional[float]
    mu_bar_psi_rho: float
    serious_bound: float
    null_bound_log_arg: float
    kelley_mu_bar_psi: Optional[float]
    kelley_log_arg: Optional[float]
    x_star_estimate: bool
    gamma: str = "unknown"

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def constants_report(
    lmo: LmoDescriptor,
    objective: QuadraticObjective,
    rho: float,
    epsilon: float,
    x0: np.ndarray,
    x_star_est: Optional[np.ndarray] = None,
) -> ConstantsReport:
    """
    Closed-form constants of the convergence analysis. The pyramidal width is
    never computed; without a reference optimum x0 stands in for x* and the
    dependent entries are flagged as estimates.
    """
    diam = lmo.diameter_bounds()
    M_f = lmo.lipschitz_bound()
    L_g, mu_g = objective.L_g, objective.mu_g
    x0 = np.asarray(x0, dtype=float)
    estimate = x_star_est is None
    x_star = x0 if estimate else np.asarray(x_star_est, dtype=float)
    norm_star = float(np.linalg.norm(x_star))
    dist = float(np.linalg.norm(x_star - x0))

    X = norm_star + 2.0 * math.sqrt(1.0 + rho ** 2) * dist + 2.0 * math.sqrt(rho * epsilon)
    half_inv = diam.D_b + 24.0 * M_f ** 2 / rho + 6.0 * M_f * X + 2.0 * L_g * ((4.0 * M_f / rho + X) ** 2 + 1.0)
    mu_bar = 1.0 / (2.0 * half_inv)

    kelley_mu_bar = kelley_log = None
    if mu_g > 0:
        s = diam.D_b + 24.0 * M_f ** 2 / mu_g + 6.0 * M_f * norm_star + 2.0 * L_g * ((4.0 * M_f / mu_g + norm_star) ** 2 + 1.0)
        kelley_mu_bar = 0.5 / s
        kelley_log = diam.D ** 2 / (2.0 * epsilon * mu_g)

    return ConstantsReport(
        D=diam.D,
        D_w=diam.D_w,
        D_b=diam.D_b,
        diameters_exact=diam.exact,
        M_f=M_f,
        L_g=L_g,
        mu_g=mu_g,
        rho=float(rho),
        epsilon=float(epsilon),
        alpha=alpha_constant(L_g, rho) if L_g > 0 else None,
        mu_bar_psi_rho=mu_bar,
        serious_bound=rho * dist ** 2 / epsilon + 1.0,
        null_bound_log_arg=4.0 * diam.D ** 4 / (epsilon ** 2 * rho ** 2),
        kelley_mu_bar_psi=kelley_mu_bar,
        kelley_log_arg=kelley_log,
        x_star_estimate=estimate,
    )
