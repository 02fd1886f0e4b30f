import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lattice_mc import DiscreteMeasure, MomentMap, caratheodory_reduce, solve_simplex_weights


def moment_vectors(points: np.ndarray, mm: MomentMap) -> np.ndarray:
    """Reference application of the moment map, written out longhand."""
    cols = []
    d = mm.dim_in
    if mm.include_mean:
        cols.extend(points[:, k] for k in range(d))
    for i in range(d):
        for j in range(i, d):
            cols.append(points[:, i] * points[:, j])
    return np.stack(cols, axis=1)


def test_moment_map_dims():
    assert MomentMap(1).dim_out == 2
    assert MomentMap(2).dim_out == 5
    assert MomentMap(3).dim_out == 9
    assert MomentMap(2, include_mean=False).dim_out == 3


def test_simplex_matches_scipy_feasibility():
    """Feasible <-> scipy LP feasible, on random instances; moments verified."""
    rng = np.random.default_rng(2024)
    mm = MomentMap(2)
    agree_feasible = agree_infeasible = 0
    for _ in range(120):
        pts = rng.integers(-3, 4, size=(rng.integers(3, 12), 2)).astype(float)
        if rng.random() < 0.5:
            # inside: map of a random mixture of the points
            w = rng.dirichlet(np.ones(len(pts)))
            target = w @ moment_vectors(pts, mm)
        else:
            target = rng.normal(0, 2, size=mm.dim_out)
        meas = solve_simplex_weights(pts, target, mm)
        feasible_ref = oracles.hull_contains(moment_vectors(pts, mm), target)
        if meas is None:
            assert not feasible_ref
            agree_infeasible += 1
        else:
            assert feasible_ref
            np.testing.assert_allclose(
                meas.weights @ moment_vectors(meas.points, mm), target, atol=1e-9
            )
            assert len(meas.weights) <= mm.dim_out + 1
            assert np.all(meas.weights > 0)  # trimmed to the support
            agree_feasible += 1
    assert agree_feasible > 20 and agree_infeasible > 20


def test_simplex_merges_duplicate_points():
    mm = MomentMap(1)
    pts = np.array([[0.0], [1.0], [1.0], [-1.0]])
    target = np.array([0.0, 1.0])  # mean 0, second moment 1
    meas = solve_simplex_weights(pts, target, mm)
    assert meas is not None
    assert len(np.unique(meas.points, axis=0)) == len(meas.points)
    np.testing.assert_allclose(meas.weights @ moment_vectors(meas.points, mm), target, atol=1e-12)


def test_simplex_deterministic():
    rng = np.random.default_rng(5)
    pts = rng.integers(-4, 5, size=(20, 2)).astype(float)
    mm = MomentMap(2)
    w = rng.dirichlet(np.ones(20))
    target = w @ moment_vectors(pts, mm)
    a = solve_simplex_weights(pts, target, mm)
    b = solve_simplex_weights(pts, target, mm)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.weights, b.weights)


@settings(max_examples=150, deadline=None)
@given(
    n=st.integers(8, 40),
    dim=st.integers(1, 3),
    seed=st.integers(0, 10**6),
)
def test_caratheodory_reduce_properties(n, dim, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(0, 1, size=(n, dim))
    w = rng.dirichlet(np.ones(n))
    meas = DiscreteMeasure(points=pts, weights=w)
    mm = MomentMap(dim)
    red = caratheodory_reduce(meas, mm)
    assert len(red.weights) <= mm.dim_out + 1
    assert np.all(red.weights >= 0)
    np.testing.assert_allclose(np.sum(red.weights), 1.0, atol=1e-10)
    # support subset of the original points
    orig = {tuple(p) for p in pts}
    assert all(tuple(p) in orig for p in red.points)
    np.testing.assert_allclose(
        red.weights @ moment_vectors(red.points, mm),
        w @ moment_vectors(pts, mm),
        atol=1e-9,
    )


def test_caratheodory_reduce_noop_on_small_support():
    # already at most dim_out + 1 atoms: support survives, weights unchanged
    # up to the renormalization noise the measure type allows
    pts = np.array([[0.0], [2.0]])
    w = np.array([0.75, 0.25])
    red = caratheodory_reduce(DiscreteMeasure(points=pts, weights=w), MomentMap(1))
    np.testing.assert_array_equal(np.sort(red.points, axis=0), pts)
    np.testing.assert_allclose(np.sort(red.weights)[::-1], w, atol=1e-12)


def test_caratheodory_dim_mismatch():
    meas = DiscreteMeasure(points=np.array([[0.0, 0.0], [1.0, 2.0]]), weights=np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        caratheodory_reduce(meas, MomentMap(1))
