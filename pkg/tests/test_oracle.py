import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.errors import PreconditionError  # noqa: E402
from src.oracle import (  # noqa: E402
    GridSpec,
    brute_simplex_qp,
    enumerate_polytope_vertices,
    finite_diff_grad,
)


def test_linear_over_simplex():
    res = brute_simplex_qp(np.zeros((2, 2)), np.array([0.0, 1.0]), GridSpec(2))
    np.testing.assert_allclose(res.lam, [1.0, 0.0])
    assert res.value == 0.0


def test_abs_dual_is_symmetric():
    M = np.array([[0.5, -0.5], [-0.5, 0.5]])
    res = brute_simplex_qp(M, np.zeros(2), GridSpec(2))
    np.testing.assert_allclose(res.lam, [0.5, 0.5])
    assert res.value == pytest.approx(0.0)


def test_grid_limits():
    with pytest.raises(PreconditionError):
        GridSpec(2, points_per_dim=2)
    with pytest.raises(PreconditionError):
        brute_simplex_qp(np.eye(4), np.zeros(4), GridSpec(4))


def test_finite_diff_of_half_norm():
    g = finite_diff_grad(lambda z: 0.5 * float(z @ z), np.array([1.0, 2.0]))
    np.testing.assert_allclose(g, [1.0, 2.0], atol=1e-8)


def test_finite_diff_of_constant():
    np.testing.assert_allclose(finite_diff_grad(lambda z: 3.0, np.array([1.0, -1.0])), [0.0, 0.0])


def test_square_vertices():
    vs = enumerate_polytope_vertices(np.zeros((0, 2)), np.zeros(0), -np.ones(2), np.ones(2))
    assert len(vs) == 4


def test_square_cut_by_diagonal():
    vs = enumerate_polytope_vertices(np.array([[1.0, 1.0]]), np.array([1.0]), -np.ones(2), np.ones(2))
    got = sorted(tuple(np.round(v, 9)) for v in vs)
    assert got == sorted([(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 0.0), (0.0, 1.0)])


def test_vertex_enumeration_cap():
    with pytest.raises(PreconditionError):
        enumerate_polytope_vertices(np.zeros((0, 9)), np.zeros(0), -np.ones(9), np.ones(9))
