import math
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.densela import SymMatrix, eig_extremes  # noqa: E402
from src.duality import (  # noqa: E402
    alm_decomposition,
    alpha_constant,
    alpha_eigen_residual,
    check_identities,
    conjugate_value,
    constants_report,
    iteration_residuals,
    moreau_envelope,
    moreau_phi,
    phi_value,
    two_projection_hessian,
    verify_prox_dual_identity,
    verify_serious_update_alm,
)
from src.errors import IdentityViolationError, PreconditionError  # noqa: E402
from src.lmo import ExplicitLmo  # noqa: E402
from src.model import Bundle, DualityResiduals, QuadraticObjective, model_value  # noqa: E402
from src.oracle import finite_diff_grad  # noqa: E402
from src.subqp import BundleSubproblem  # noqa: E402
from src.synth import random_explicit_instance, rng_for  # noqa: E402


def one_dim_g() -> QuadraticObjective:
    return QuadraticObjective(SymMatrix([[1.0]]), [-3.0], 4.5)


def abs_bundle() -> Bundle:
    return Bundle.from_pairs(1, [([1.0], 0.0), ([-1.0], 0.0)])


def test_moreau_of_half_norm_at_zero():
    ev = moreau_envelope(QuadraticObjective.identity(2), 1.0, np.zeros(2))
    assert ev.value == 0.0
    np.testing.assert_allclose(ev.grad, [0.0, 0.0])


def test_moreau_of_half_norm_by_hand():
    ev = moreau_envelope(QuadraticObjective.identity(2), 1.0, np.array([2.0, 0.0]))
    assert ev.value == pytest.approx(1.0)
    np.testing.assert_allclose(ev.grad, [1.0, 0.0])
    np.testing.assert_allclose(ev.prox_point, [1.0, 0.0])


@pytest.mark.parametrize("rho", [0.25, 1.0, 3.0])
def test_moreau_of_half_norm_closed_form(rho):
    z = np.array([1.0, -2.0, 0.5])
    ev = moreau_envelope(QuadraticObjective.identity(3), rho, z)
    assert ev.value == pytest.approx(float(z @ z) / (2.0 * (1.0 + rho)))


@pytest.mark.parametrize("seed", range(5))
def test_moreau_grad_matches_finite_differences(seed):
    g = random_explicit_instance(4, 3, seed).objective
    z = rng_for(seed, 20).uniform(-1.0, 1.0, size=4)
    ev = moreau_envelope(g, 0.7, z)
    fd = finite_diff_grad(lambda t: moreau_envelope(g, 0.7, t).value, z)
    np.testing.assert_allclose(ev.grad, fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_envelope_sits_below_phi(seed):
    g = random_explicit_instance(3, 3, seed).objective
    for z in rng_for(seed, 21).uniform(-2.0, 2.0, size=(5, 3)):
        assert moreau_envelope(g, 1.0, z).value <= phi_value(g, z) + 1e-10


@pytest.mark.parametrize("rho", [0.1, 1.0, 5.0])
def test_envelope_gradient_is_one_over_rho_lipschitz(rho):
    rng = rng_for(int(10 * rho), 22)
    g = random_explicit_instance(4, 3, int(10 * rho), mu=0.0).objective
    for z1, z2 in rng.uniform(-3.0, 3.0, size=(10, 2, 4)):
        d_grad = moreau_envelope(g, rho, z1).grad - moreau_envelope(g, rho, z2).grad
        assert np.linalg.norm(d_grad) <= (1.0 / rho + 1e-8) * np.linalg.norm(z1 - z2)


def test_conjugate_is_infinite_off_the_range():
    g = QuadraticObjective(SymMatrix(np.diag([1.0, 0.0])), [0.0, 0.0])
    assert conjugate_value(g, np.array([1.0, 0.0])) == pytest.approx(0.5)
    assert math.isinf(conjugate_value(g, np.array([0.0, 1.0])))


def test_moreau_needs_positive_rho():
    with pytest.raises(PreconditionError):
        moreau_envelope(QuadraticObjective.identity(1), 0.0, np.zeros(1))


def test_prox_dual_identity_on_abs_example():
    assert verify_prox_dual_identity(QuadraticObjective.identity(1), abs_bundle(), np.zeros(1), 1.0) <= 1e-12


def test_prox_dual_identity_single_cut():
    g = QuadraticObjective.identity(2)
    bundle = Bundle.from_pairs(2, [([1.0, 2.0], 0.5)])
    assert verify_prox_dual_identity(g, bundle, np.array([0.3, -0.2]), 2.0) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_prox_dual_identity_random(seed):
    inst = random_explicit_instance(4, 10, seed)
    bundle = Bundle.from_pairs(4, ((c.v, c.b) for c in inst.lmo.cuts))
    x_c = rng_for(seed, 22).uniform(-1.0, 1.0, size=4)
    assert verify_prox_dual_identity(inst.objective, bundle, x_c, 1.0) < 1e-8


def test_alm_replays_the_one_dim_serious_step():
    g = one_dim_g()
    bundle = Bundle.from_pairs(1, [([1.0], 0.0)])
    x_c = np.zeros(1)
    sol = BundleSubproblem(g, 1.0).solve(bundle, x_c)
    np.testing.assert_allclose(sol.x_next, [1.0])
    v, u = alm_decomposition(g, 1.0, x_c, sol.w)
    assert verify_serious_update_alm(x_c, sol.x_next, v, u, 1.0) <= 1e-10


def test_alm_rejects_null_steps():
    with pytest.raises(PreconditionError):
        verify_serious_update_alm(np.ones(2), np.ones(2), np.zeros(2), np.zeros(2), 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_iteration_residuals_random(seed):
    inst = random_explicit_instance(5, 20, seed)
    bundle = Bundle.from_pairs(5, ((c.v, c.b) for c in inst.lmo.cuts[:6]))
    x_c = rng_for(seed, 23).uniform(-1.0, 1.0, size=5)
    sol = BundleSubproblem(inst.objective, 1.0).solve(bundle, x_c)
    y = sol.x_next
    f_y = inst.lmo.f_of(y)
    gap = f_y - model_value(bundle, y).value
    res = iteration_residuals(inst.objective, bundle, sol, x_c, 1.0, f_y, gap)
    assert res.moreau_correspondence <= 1e-8
    assert res.fw_gap_identity <= 1e-7
    assert res.gradient_link <= 1e-8
    assert res.lower_model <= 1e-8
    assert res.strong_duality <= 1e-8 * (1.0 + abs(sol.primal_value))
    assert res.alm_update is None
    check_identities(res, sol.primal_value, 1)
    # moreau_phi's y agrees with the subproblem's
    np.testing.assert_allclose(-moreau_phi(inst.objective, 1.0, x_c, sol.w).grad, y, atol=1e-8)


def test_fw_gap_identity_uses_f_at_the_dual_point():
    inst = random_explicit_instance(4, 12, 1)
    bundle = Bundle.from_pairs(4, ((c.v, c.b) for c in inst.lmo.cuts[:5]))
    x_c = np.zeros(4)
    sol = BundleSubproblem(inst.objective, 1.0).solve(bundle, x_c)
    f_y = inst.lmo.f_of(sol.x_next)
    gap = f_y - model_value(bundle, sol.x_next).value
    y_dual = -moreau_phi(inst.objective, 1.0, x_c, sol.w).grad
    exact = iteration_residuals(inst.objective, bundle, sol, x_c, 1.0, f_y, gap, f_at_dual=inst.lmo.f_of(y_dual))
    assert exact.fw_gap_identity <= 1e-7
    off = iteration_residuals(inst.objective, bundle, sol, x_c, 1.0, f_y, gap, f_at_dual=f_y + 1e-3)
    assert off.fw_gap_identity == pytest.approx(1e-3, abs=1e-9)


def test_check_identities_raises_on_violation():
    res = DualityResiduals(0.0, 0.0, 0.0, 0.0, 0.0, 1e-3)
    with pytest.raises(IdentityViolationError) as info:
        check_identities(res, 0.0, 7)
    assert info.value.identity == "lower_model"
    assert info.value.residual == pytest.approx(1e-3)


def test_alpha_analytic_point():
    assert alpha_constant(1.0, 2.0) == pytest.approx(1.0 - math.sqrt(2.0) / 2.0, abs=1e-12)
    lo, _ = eig_extremes(two_projection_hessian(1.0, 2.0))
    assert lo == pytest.approx(1.0 - math.sqrt(2.0) / 2.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_alpha_matches_hessian_eigenvalue(seed):
    L_g, rho = 10.0 ** rng_for(seed, 24).uniform(-1.0, 1.0, size=2)
    assert alpha_eigen_residual(float(L_g), float(rho), n=2) <= 1e-9


def test_alpha_needs_positive_inputs():
    with pytest.raises(PreconditionError):
        alpha_constant(0.0, 1.0)


def test_serious_bound():
    lmo = ExplicitLmo.from_pairs([([1.0], 0.0), ([-1.0], 0.0)])
    rep = constants_report(lmo, QuadraticObjective.identity(1), 1.0, 2e-3, np.zeros(1), np.ones(1))
    assert rep.serious_bound == pytest.approx(501.0)
    assert rep.D == pytest.approx(2.0)
    assert 0.0 < rep.mu_bar_psi_rho < math.inf
    assert rep.kelley_mu_bar_psi is not None and rep.kelley_mu_bar_psi > 0
    assert rep.kelley_log_arg == pytest.approx(4.0 / (2.0 * 2e-3))
    assert rep.null_bound_log_arg == pytest.approx(4.0 * 16.0 / (2e-3) ** 2)
    assert rep.gamma == "unknown"
    assert not rep.x_star_estimate


def test_constants_without_reference_flag_estimate():
    lmo = ExplicitLmo.from_pairs([([1.0], 0.0), ([-1.0], 0.0)])
    flat = QuadraticObjective(SymMatrix([[0.0]]), [0.0])
    rep = constants_report(lmo, flat, 1.0, 1e-3, np.zeros(1))
    assert rep.x_star_estimate
    assert rep.serious_bound == pytest.approx(1.0)
    assert rep.kelley_mu_bar_psi is None
    assert rep.alpha is None
    assert set(rep.as_dict()) >= {"D", "D_w", "D_b", "M_f", "alpha", "mu_bar_psi_rho", "serious_bound", "null_bound_log_arg"}
