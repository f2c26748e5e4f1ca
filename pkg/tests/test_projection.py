import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggtrack.errors import DimensionMismatch, NonConvergent
from aggtrack.projection import Box, Halfspace, Intersection, WholeSpace, axis_aligned_box, contains, project


def test_box_clamps():
    np.testing.assert_allclose(project(Box([0, 0], [1, 1]), [1.5, 0.5]), [1.0, 0.5])


def test_halfspace_drop():
    np.testing.assert_allclose(project(Halfspace([1, 0], 0), [2, 3]), [0, 3])


def test_box_halfspace_intersection_kkt():
    # minimize |x - (2,2)|^2 s.t. x + y <= 1 inside [0,2]^2: symmetric point on the line
    s = Intersection((Box([0, 0], [2, 2]), Halfspace([1, 1], 1)))
    np.testing.assert_allclose(project(s, [2, 2]), [0.5, 0.5], atol=1e-9)


def test_contains_tolerances():
    assert contains(Box([0], [1]), [0.5], tol=0)
    assert contains(Box([0], [1]), [1 + 1e-12], tol=1e-9)
    assert not contains(Halfspace([1], 0), [1e-3], tol=1e-9)


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        project(Box([0, 0], [1, 1]), [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        contains(Halfspace([1, 0], 0), [1.0])


def test_empty_intersection_signals():
    with pytest.raises(NonConvergent):
        project(Intersection((Halfspace([1.0, 0.0], -1), Halfspace([-1.0, 0.0], -1))), [0.0, 0.0],
                max_sweeps=200)
    with pytest.raises(NonConvergent):
        project(Intersection((Box([0], [1]), Box([2], [3]))), [0.0])


def test_axis_aligned_collapse():
    s = Intersection((Box([0, 0], [5, 5]), Halfspace([1, 0], 2), Halfspace([0, -2], -2)))
    b = axis_aligned_box(s)
    np.testing.assert_allclose(b.lower, [0, 1])
    np.testing.assert_allclose(b.upper, [2, 5])
    assert axis_aligned_box(Intersection((Box([0, 0], [1, 1]), Halfspace([1, 1], 1)))) is None


def test_whole_space_is_identity():
    np.testing.assert_array_equal(project(WholeSpace(), [3.0, -1.0]), [3.0, -1.0])


def _random_set(rng, dim):
    lo = rng.uniform(-2, 0, dim)
    box = Box(lo, lo + rng.uniform(0.5, 3, dim))
    center = (box.lower + box.upper) / 2
    members = [box]
    for _ in range(rng.integers(0, 3)):
        a = rng.normal(size=dim)
        members.append(Halfspace(a, float(a @ center) + rng.uniform(0, 0.5)))
    return Intersection(tuple(members))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), dim=st.integers(1, 4))
def test_projection_properties(seed, dim):
    rng = np.random.default_rng(seed)
    s = _random_set(rng, dim)
    pts = rng.normal(scale=3, size=(25, 2, dim))
    for a, b in pts:
        pa, pb = project(s, a), project(s, b)
        assert contains(s, pa, tol=1e-9)
        np.testing.assert_allclose(project(s, pa), pa, atol=1e-10)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9
        # variational inequality: (a - P a) . (z - P a) <= 0 for z in the set
        assert float((a - pa) @ (pb - pa)) <= 1e-8


def test_nonexpansive_many_pairs():
    rng = np.random.default_rng(7)
    s = _random_set(rng, 3)
    a = rng.normal(scale=4, size=(1000, 3))
    b = rng.normal(scale=4, size=(1000, 3))
    pa = np.array([project(s, p) for p in a])
    pb = np.array([project(s, p) for p in b])
    assert np.all(np.linalg.norm(pa - pb, axis=1) <= np.linalg.norm(a - b, axis=1) + 1e-9)


def test_slow_dykstra_corner_is_solved_exactly():
    # faces meeting at a small angle: plain alternating projections need ~1e5 sweeps here
    rng = np.random.default_rng(8248)
    s = _random_set(rng, 3)
    p = np.array([3.96369809, 0.99506928, -1.76289737])
    x = project(s, p)
    assert contains(s, x, tol=1e-12)
    # reference from enumerating active sets by hand (box face and two halfspaces)
    np.testing.assert_allclose(x, [2.97189022, 0.862857, -0.51300433], atol=1e-7)
