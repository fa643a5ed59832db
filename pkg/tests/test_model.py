import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.densela import SymMatrix  # noqa: E402
from src.errors import EmptyModelError, InstanceError, PreconditionError  # noqa: E402
from src.lmo import ExplicitLmo  # noqa: E402
from src.model import (  # noqa: E402
    Bundle,
    Cut,
    IterationRecord,
    PolicyKind,
    ProblemInstance,
    QuadraticObjective,
    ReferenceOpt,
    SolverConfig,
    StepType,
    TRACE_COLUMNS,
    evaluate_h,
    model_value,
)
from src.synth import rng_for  # noqa: E402


def abs_bundle() -> Bundle:
    return Bundle.from_pairs(1, [([1.0], 0.0), ([-1.0], 0.0)])


def test_model_value_of_abs_at_two():
    mv = model_value(abs_bundle(), np.array([2.0]))
    assert mv.value == 2.0
    assert mv.argmax_ids == (0,)


def test_model_value_keeps_ties():
    mv = model_value(abs_bundle(), np.array([0.0]))
    assert mv.value == 0.0
    assert mv.argmax_ids == (0, 1)


@pytest.mark.parametrize("seed", range(5))
def test_model_built_from_lmo_answers_stays_below_f(seed):
    rng = rng_for(seed, 30)
    lmo = ExplicitLmo.from_pairs((v, b) for v, b in zip(rng.uniform(-1.0, 1.0, size=(20, 3)), rng.uniform(-1.0, 1.0, size=20)))
    bundle = Bundle(3)
    for z in rng.uniform(-2.0, 2.0, size=(6, 3)):
        bundle, _, _ = bundle.add(lmo.lmo_max(z))
    for x in rng.uniform(-3.0, 3.0, size=(50, 3)):
        assert model_value(bundle, x).value <= lmo.f_of(x) + 1e-9


def test_model_value_on_empty_bundle_raises():
    with pytest.raises(EmptyModelError, match="empty model"):
        model_value(Bundle(1), np.array([0.0]))


def test_bundle_add_deduplicates_and_keeps_ids_increasing():
    bundle = abs_bundle()
    same, stored, added = bundle.add(Cut([1.0], 0.0))
    assert not added
    assert stored.id == 0
    assert len(same) == 2

    pruned = bundle.keep([1])
    grown, stored, added = pruned.add(Cut([0.5], 1.0))
    assert added
    assert stored.id == 2
    assert grown.ids == (1, 2)


def test_bundle_rejects_wrong_dimension():
    with pytest.raises(InstanceError):
        abs_bundle().add(Cut([1.0, 0.0], 0.0))


def test_cut_is_frozen():
    cut = Cut([1.0, 2.0], 3.0)
    with pytest.raises(ValueError):
        cut.v[0] = 5.0
    assert cut.value_at(np.array([1.0, 1.0])) == 6.0


def test_quadratic_objective_constants():
    g = QuadraticObjective(SymMatrix(np.diag([1.0, 4.0])), [0.0, 0.0])
    assert g.L_g == pytest.approx(4.0)
    assert g.mu_g == pytest.approx(1.0)
    np.testing.assert_allclose(g.grad(np.array([1.0, 1.0])), [1.0, 4.0])


def test_quadratic_objective_rejects_indefinite_q():
    with pytest.raises(InstanceError, match="positive semidefinite"):
        QuadraticObjective(SymMatrix(np.diag([1.0, -1.0])), [0.0, 0.0])


def test_evaluate_h_on_one_dim_example():
    inst = ProblemInstance(
        QuadraticObjective(SymMatrix([[1.0]]), [-3.0], 4.5),
        ExplicitLmo.from_pairs([([1.0], 0.0), ([-1.0], 0.0)]),
        [0.0],
    )
    assert evaluate_h(inst, np.array([2.0])) == pytest.approx(2.5)
    assert evaluate_h(inst, np.array([0.0])) == pytest.approx(4.5)
    with pytest.raises(PreconditionError):
        evaluate_h(inst, np.array([np.nan]))


def test_instance_rejects_inconsistent_reference():
    g = QuadraticObjective(SymMatrix([[1.0]]), [-3.0], 4.5)
    lmo = ExplicitLmo.from_pairs([([1.0], 0.0), ([-1.0], 0.0)])
    ProblemInstance(g, lmo, [0.0], ReferenceOpt([2.0], 2.5))
    with pytest.raises(InstanceError, match="h_star"):
        ProblemInstance(g, lmo, [0.0], ReferenceOpt([2.0], 3.0))


def test_reference_check_is_absolute_even_for_large_values():
    g = QuadraticObjective(SymMatrix([[1.0]]), [-3.0], 1004.5)
    lmo = ExplicitLmo.from_pairs([([1.0], 0.0), ([-1.0], 0.0)])
    ProblemInstance(g, lmo, [0.0], ReferenceOpt([2.0], 1002.5 + 5e-9))
    with pytest.raises(InstanceError, match="h_star"):
        ProblemInstance(g, lmo, [0.0], ReferenceOpt([2.0], 1002.5 + 5e-8))


def test_instance_rejects_dimension_mismatch():
    g = QuadraticObjective.identity(2)
    with pytest.raises(InstanceError):
        ProblemInstance(g, ExplicitLmo.from_pairs([([1.0, 0.0], 0.0)]), [0.0])


def test_solver_config_defaults_resolve():
    cfg = SolverConfig()
    assert cfg.policy is PolicyKind.ACTIVE_CUT
    assert cfg.effective_delta == pytest.approx(1e-3)
    assert cfg.effective_inner_tol == pytest.approx(1e-10)
    r = cfg.resolved(np.array([3.0, 4.0]))
    assert r.delta == pytest.approx(1e-3)
    assert r.radius_bound == pytest.approx(20.0)
    assert cfg.effective_radius(np.zeros(2)) == (10.0, True)
    assert SolverConfig(radius_bound=5.0).effective_radius(np.zeros(2)) == (5.0, False)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"epsilon": 0.0},
        {"rho": 0.0},
        {"delta": -1.0},
        {"max_iter": 0},
        {"radius_bound": 0.0},
        {"epsilon": 1e-3, "inner_tol": 1e-3},
    ],
)
def test_solver_config_validates(kwargs):
    with pytest.raises(PreconditionError):
        SolverConfig(**kwargs)


def test_solver_config_accepts_policy_strings():
    assert SolverConfig(policy="single_cut").policy is PolicyKind.SINGLE_CUT


def test_iteration_record_row_has_stable_columns():
    rec = IterationRecord(
        iter=1,
        step_type=StepType.SERIOUS,
        model_gap=0.0,
        obj_value=2.5,
        bundle_size_pre=2,
        bundle_size_post=2,
        prox_move=1.0,
        wall_time_ns=10,
    )
    row = rec.as_row()
    assert list(row)[: len(TRACE_COLUMNS)] == TRACE_COLUMNS
    assert row["step_type"] == "serious"
