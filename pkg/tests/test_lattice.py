import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_mc import (
    DiscreteMeasure,
    LatticeCoord,
    LatticeSpec,
    MomentTarget,
    coord_to_point,
    lattice_round,
    measure_moments,
    point_to_coord,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        LatticeSpec(0.0, 1)
    with pytest.raises(ValueError):
        LatticeSpec(-0.5, 2)
    with pytest.raises(ValueError):
        LatticeSpec(1.0, 0)
    # a frame must be orthogonal
    with pytest.raises(ValueError):
        LatticeSpec(1.0, 2, frame_Q=np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_identity_frame_detection():
    assert LatticeSpec(0.5, 2).is_identity_frame
    th = 0.3
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert not LatticeSpec(0.5, 2, frame_Q=Q).is_identity_frame


def test_coord_point_round_trip_rotated():
    th = 1.1
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    lat = LatticeSpec(0.25, 2, frame_Q=Q, offset=np.array([0.3, -0.7]))
    c = LatticeCoord((3, -5))
    p = coord_to_point(c, lat)
    assert point_to_coord(p, lat) == c
    np.testing.assert_allclose(p, lat.offset + 0.25 * Q @ np.array([3.0, -5.0]))


@settings(max_examples=200, deadline=None)
@given(
    z=st.lists(st.integers(-1000, 1000), min_size=1, max_size=4),
    gamma=st.floats(1e-3, 1e3),
)
def test_round_trip_integers(z, gamma):
    lat = LatticeSpec(gamma, len(z))
    assert point_to_coord(coord_to_point(LatticeCoord(tuple(z)), lat), lat) == LatticeCoord(tuple(z))


def test_lattice_round_floor_and_strict_ceil():
    assert lattice_round(0.74, 0.5, "floor") == 0.5
    assert lattice_round(0.76, 0.5, "ceil") == 1.0
    # floor is inclusive, ceil is strict: on a lattice point they differ by one pitch
    assert lattice_round(1.0, 0.5, "floor") == 1.0
    assert lattice_round(1.0, 0.5, "ceil") == 1.5
    assert lattice_round(-0.1, 0.5, "floor") == -0.5
    with pytest.raises(ValueError):
        lattice_round(0.3, 0.5, "nearest")


def test_measure_validation():
    pts = np.array([[0.0], [1.0]])
    with pytest.raises(ValueError):
        DiscreteMeasure(points=pts, weights=np.array([0.6, 0.6]))  # sums to 1.2
    with pytest.raises(ValueError):
        DiscreteMeasure(points=pts, weights=np.array([1.2, -0.2]))


def test_measure_moments_match_manual():
    pts = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
    w = np.array([0.5, 0.25, 0.25])
    meas = DiscreteMeasure(points=pts, weights=w)
    mean, second = measure_moments(meas)
    np.testing.assert_allclose(mean, w @ pts)
    np.testing.assert_allclose(second, np.einsum("i,ij,ik->jk", w, pts, pts))


def test_moment_target_shape_checks():
    with pytest.raises(ValueError):
        MomentTarget(a=np.zeros(2), B=np.eye(3))
    t = MomentTarget(a=np.zeros(2), B=np.eye(2))
    assert t.dim == 2
