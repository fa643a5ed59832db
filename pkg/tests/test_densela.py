import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.densela import (  # noqa: E402
    SymMatrix,
    cholesky,
    cho_solve,
    eig_extremes,
    rayleigh_quotient,
    spd_solve,
)
from src.errors import NotPositiveDefiniteError  # noqa: E402
from src.synth import rng_for  # noqa: E402


def random_spd(n: int, seed: int) -> np.ndarray:
    M = rng_for(seed, 0).uniform(-1.0, 1.0, size=(n, n))
    return M @ M.T + np.eye(n)


def test_symmatrix_rejects_asymmetric():
    with pytest.raises(ValueError, match="not symmetric"):
        SymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_symmatrix_shifted():
    A = SymMatrix(np.eye(2)).shifted(2.0)
    np.testing.assert_allclose(A.entries, 3.0 * np.eye(2))
    assert not A.entries.flags.writeable


def test_spd_solve_identity_plus_rho():
    x = spd_solve(SymMatrix(2.0 * np.eye(2)), np.array([2.0, 4.0]))
    np.testing.assert_allclose(x, [1.0, 2.0])


@pytest.mark.parametrize("seed", range(5))
def test_spd_solve_residual(seed):
    A = random_spd(6, seed)
    b = rng_for(seed, 1).uniform(-1.0, 1.0, size=6)
    x = spd_solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * (1.0 + np.linalg.norm(b))


def test_cholesky_factor_reused_for_matrix_rhs():
    A = random_spd(4, 3)
    factor = cholesky(A)
    X = cho_solve(factor, np.eye(4))
    np.testing.assert_allclose(A @ X, np.eye(4), atol=1e-10)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(np.diag([1.0, -1.0]))


def test_eig_extremes_diagonal():
    assert eig_extremes(np.diag([3.0, 1.0, 2.0])) == pytest.approx((1.0, 3.0))


@pytest.mark.parametrize("seed", range(5))
def test_eig_extremes_bracket_rayleigh_quotients(seed):
    A = random_spd(5, seed)
    lo, hi = eig_extremes(A)
    np.testing.assert_allclose([lo, hi], np.linalg.eigvalsh(A)[[0, -1]], rtol=1e-10)
    for u in rng_for(seed, 2).normal(size=(10, 5)):
        rq = rayleigh_quotient(A, u)
        assert lo - 1e-10 <= rq <= hi + 1e-10
