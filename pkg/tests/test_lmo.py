import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.errors import InstanceError, LmoError  # noqa: E402
from src.lmo import BoxLmo, ExplicitLmo, PolytopeLmo, diameter_bounds, f_of, lipschitz_bound, lmo_max  # noqa: E402
from src.model import Cut  # noqa: E402
from src.oracle import brute_max_over, enumerate_polytope_vertices  # noqa: E402
from src.synth import SynthSpec, generate, rng_for  # noqa: E402


def abs_lmo() -> ExplicitLmo:
    return ExplicitLmo.from_pairs([([1.0], 0.0), ([-1.0], 0.0)])


def test_explicit_argmax():
    cut = lmo_max(abs_lmo(), np.array([2.0]))
    np.testing.assert_allclose(cut.v, [1.0])
    assert cut.b == 0.0
    assert f_of(abs_lmo(), np.array([-3.0])) == pytest.approx(3.0)


def test_explicit_ties_go_to_first_cut():
    assert abs_lmo().argmax_index(np.array([0.0])) == 0


def test_explicit_needs_cuts_of_one_dimension():
    with pytest.raises(InstanceError):
        ExplicitLmo([])
    with pytest.raises(InstanceError):
        ExplicitLmo([Cut([1.0], 0.0), Cut([1.0, 2.0], 0.0)])


def test_explicit_constants():
    assert lipschitz_bound(abs_lmo()) == pytest.approx(1.0)
    d = diameter_bounds(abs_lmo())
    assert (d.D, d.D_w, d.D_b) == pytest.approx((2.0, 2.0, 0.0))
    assert d.exact


def test_box_sign_rule():
    lmo = BoxLmo([1.0, 1.0], (-1.0, 1.0))
    cut = lmo.lmo_max(np.array([3.0, -1.0]))
    np.testing.assert_allclose(cut.v, [1.0, -1.0])
    assert cut.b == 1.0
    np.testing.assert_allclose(lmo.lmo_max(np.zeros(2)).v, [1.0, 1.0])


def test_box_constants():
    lmo = BoxLmo([3.0, 4.0], (0.0, 2.0))
    assert lipschitz_bound(lmo) == pytest.approx(5.0)
    d = diameter_bounds(lmo)
    assert d.D_w == pytest.approx(10.0)
    assert d.D_b == pytest.approx(2.0)
    assert d.D == pytest.approx(np.hypot(10.0, 2.0))


@pytest.mark.parametrize("seed", range(5))
def test_box_argmax_is_scale_invariant(seed):
    rng = rng_for(seed, 51)
    lmo = BoxLmo(rng.uniform(0.5, 2.0, size=4), (-1.0, 0.5))
    for x in rng.uniform(-2.0, 2.0, size=(5, 4)):
        cut = lmo.lmo_max(x)
        for t in (1e-3, 0.5, 7.0):
            scaled = lmo.lmo_max(t * x)
            np.testing.assert_array_equal(scaled.v, cut.v)
            assert scaled.b == cut.b


@pytest.mark.parametrize("seed", range(5))
def test_explicit_lmo_agrees_with_brute_force_and_bounds_its_cuts(seed):
    rng = rng_for(seed, 52)
    lmo = ExplicitLmo.from_pairs((v, b) for v, b in zip(rng.uniform(-1.0, 1.0, size=(12, 3)), rng.uniform(-1.0, 1.0, size=12)))
    points = [c.as_vector() for c in lmo.cuts]
    xs = rng.uniform(-2.0, 2.0, size=(8, 3))
    returned = [lmo.lmo_max(x) for x in xs]
    for x in xs:
        assert lmo.f_of(x) == pytest.approx(brute_max_over(points, np.append(x, 1.0)), abs=1e-12)
        assert all(lmo.f_of(x) >= c.value_at(x) - 1e-12 for c in returned)


def test_bad_query_point():
    with pytest.raises(LmoError):
        abs_lmo().lmo_max(np.array([1.0, 2.0]))
    with pytest.raises(LmoError):
        BoxLmo([1.0], (0.0, 1.0)).lmo_max(np.array([np.inf]))


def test_empty_polytope_is_rejected():
    with pytest.raises(InstanceError, match="polytope is empty"):
        PolytopeLmo(np.array([[1.0, 0.0]]), np.array([-2.0]))


@pytest.mark.parametrize("seed", range(5))
def test_polytope_lmo_matches_vertex_enumeration(seed):
    inst = generate(SynthSpec(n=3, seed=seed, m=2))
    lmo = inst.lmo
    vertices = enumerate_polytope_vertices(lmo.A, lmo.b, lmo.lower, lmo.upper)
    for x in rng_for(seed, 50).uniform(-2.0, 2.0, size=(5, 3)):
        cut = lmo.lmo_max(x)
        assert cut.value_at(x) == pytest.approx(brute_max_over(vertices, np.append(x, 1.0)), abs=1e-9)
        z = cut.as_vector()
        assert np.all(lmo.A @ z <= lmo.b + 1e-9)


def test_polytope_bounds_are_flagged_conservative():
    lmo = PolytopeLmo(np.array([[1.0, 1.0, 0.0]]), np.array([1.0]))
    d = lmo.diameter_bounds()
    assert not d.exact
    assert d.D_b == pytest.approx(2.0)
    assert lmo.lipschitz_bound() == pytest.approx(np.sqrt(2.0))
    assert lmo.dim == 2
