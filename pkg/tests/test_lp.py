import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from scipy.optimize import linprog  # noqa: E402

from src.lp import LpProblem, LpStatus, feasibility_check, solve_lp  # noqa: E402
from src.oracle import brute_max_over, enumerate_polytope_vertices  # noqa: E402
from src.synth import rng_for  # noqa: E402


def box_lp(c, A, b, p):
    return LpProblem(np.asarray(c, dtype=float), np.asarray(A, dtype=float).reshape(-1, p), b, -np.ones(p), np.ones(p))


def test_single_variable_no_rows():
    res = solve_lp(box_lp([1.0], np.zeros((0, 1)), [], 1))
    assert res.status is LpStatus.OPTIMAL
    np.testing.assert_allclose(res.z, [1.0])
    assert res.value == pytest.approx(1.0)


def test_tight_row():
    res = solve_lp(box_lp([1.0, 1.0], [[1.0, 1.0]], [1.0], 2))
    assert res.status is LpStatus.OPTIMAL
    assert res.value == pytest.approx(1.0)
    assert res.z.sum() == pytest.approx(1.0)


def test_infeasible_is_reported_not_raised():
    p = box_lp([1.0], [[1.0]], [-2.0], 1)
    assert not feasibility_check(p)
    res = solve_lp(p)
    assert res.status is LpStatus.INFEASIBLE
    assert res.z is None


def test_feasibility_of_box_only():
    assert feasibility_check(box_lp([0.0, 0.0], np.zeros((0, 2)), [], 2))


def test_rejects_crossed_bounds():
    with pytest.raises(ValueError):
        LpProblem(np.zeros(1), np.zeros((0, 1)), [], [1.0], [-1.0])


@pytest.mark.parametrize("seed", range(10))
def test_random_polytopes_match_vertex_enumeration(seed):
    rng = rng_for(seed, 0)
    A = rng.uniform(-1.0, 1.0, size=(3, 4))
    b = rng.uniform(0.0, 1.0, size=3)
    c = rng.uniform(-1.0, 1.0, size=4)
    res = solve_lp(box_lp(c, A, b, 4))
    assert res.status is LpStatus.OPTIMAL

    vertices = enumerate_polytope_vertices(A, b, -np.ones(4), np.ones(4))
    assert res.value == pytest.approx(brute_max_over(vertices, c), abs=1e-9)
    assert np.all(A @ res.z <= b + 1e-9)
    assert np.all(np.abs(res.z) <= 1.0 + 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_random_lps_match_highs(seed):
    rng = rng_for(seed, 1)
    p, m = 8, 5
    A = rng.uniform(-1.0, 1.0, size=(m, p))
    b = rng.uniform(-0.5, 1.0, size=m)
    c = rng.uniform(-1.0, 1.0, size=p)
    ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(-1.0, 1.0)] * p, method="highs")
    res = solve_lp(box_lp(c, A, b, p))
    if ref.status == 2:
        assert res.status is LpStatus.INFEASIBLE
    else:
        assert ref.status == 0
        assert res.status is LpStatus.OPTIMAL
        assert res.value == pytest.approx(-ref.fun, abs=1e-7)


def test_solve_is_deterministic():
    rng = rng_for(3, 2)
    A = rng.uniform(-1.0, 1.0, size=(4, 6))
    b = rng.uniform(0.0, 1.0, size=4)
    c = rng.uniform(-1.0, 1.0, size=6)
    first = solve_lp(box_lp(c, A, b, 6))
    second = solve_lp(box_lp(c, A, b, 6))
    assert np.array_equal(first.z, second.z)
    assert first.basis == second.basis


def _tight_count(lp: LpProblem, z: np.ndarray, tol: float = 1e-9) -> int:
    rows = int(np.sum(np.abs(lp.A @ z - lp.b_up) <= tol))
    bounds = int(np.sum(np.abs(z - lp.lower) <= tol) + np.sum(np.abs(z - lp.upper) <= tol))
    return rows + bounds


@pytest.mark.parametrize("seed", range(10))
def test_optimal_vertex_is_basic(seed):
    rng = rng_for(seed, 3)
    p, m = 6, 4
    lp = box_lp(rng.uniform(-1.0, 1.0, size=p), rng.uniform(-1.0, 1.0, size=(m, p)), rng.uniform(0.0, 1.0, size=m), p)
    res = solve_lp(lp)
    assert res.status is LpStatus.OPTIMAL
    assert _tight_count(lp, res.z) >= p


@pytest.mark.parametrize("seed", range(10))
def test_row_order_does_not_change_the_value(seed):
    rng = rng_for(seed, 4)
    p, m = 7, 5
    A = rng.uniform(-1.0, 1.0, size=(m, p))
    b = rng.uniform(0.0, 1.0, size=m)
    c = rng.uniform(-1.0, 1.0, size=p)
    perm = rng.permutation(m)
    first = solve_lp(box_lp(c, A, b, p))
    second = solve_lp(box_lp(c, A[perm], b[perm], p))
    assert first.status is second.status is LpStatus.OPTIMAL
    assert second.value == pytest.approx(first.value, abs=1e-9)
