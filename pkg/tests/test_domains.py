from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from kinqsd.domains import Ball, Box, FullSpace, HalfSpace, Interval, region_from_dict
from kinqsd.errors import ParameterError

coord = st.floats(-5, 5, allow_nan=False)

REGIONS = [
    Interval(-1.0, 2.0),
    Ball((0.5, -0.5), 1.5),
    Box((-1.0, 0.0), (1.0, 3.0)),
    HalfSpace((1.0, 1.0), 0.5),
]
# a point of each region whose 0.4-neighbourhood is inside
CENTRES = {"interval": (0.5,), "ball": (0.5, -0.5), "box": (0.0, 1.5), "halfspace": (-1.0, -1.0)}


def _point(region, xs):
    return np.array(xs[: region.dim])


@pytest.mark.parametrize("region", REGIONS, ids=lambda r: r.kind)
@given(xs=st.lists(coord, min_size=2, max_size=2))
def test_contains_matches_signed_distance(region, xs):
    q = _point(region, xs)
    assert bool(region.contains(q)) == bool(region.signed_distance(q) > 0)


@pytest.mark.parametrize("region", REGIONS, ids=lambda r: r.kind)
@given(xs=st.lists(coord, min_size=2, max_size=2))
def test_projection_lands_on_boundary(region, xs):
    q = _point(region, xs)
    assume(abs(region.signed_distance(q)) > 1e-6)
    qb = region.project(q)
    assert abs(region.signed_distance(qb)) < 1e-9
    # |signed distance| is the distance to the projected point
    assert np.linalg.norm(qb - q) == pytest.approx(abs(float(region.signed_distance(q))), abs=1e-9)


@pytest.mark.parametrize("region", REGIONS, ids=lambda r: r.kind)
@given(xs=st.lists(coord, min_size=2, max_size=2), eps=st.floats(1e-4, 1e-2))
def test_outward_normal_points_out(region, xs, eps):
    q = _point(region, xs)
    assume(abs(region.signed_distance(q)) > 1e-3)
    qb, n = region.project_with_normal(q)
    if isinstance(region, Box):
        # the normal is ambiguous within eps of an edge or corner
        near = np.minimum(np.abs(qb - region.lo), np.abs(qb - region.hi)) < 2 * eps
        assume(near.sum() <= 1)
    assert np.linalg.norm(n) == pytest.approx(1.0)
    assert not region.contains(qb + eps * n)
    assert region.contains(qb - eps * n)


@pytest.mark.parametrize("region", REGIONS, ids=lambda r: r.kind)
@given(u=st.lists(st.floats(-0.4, 0.4), min_size=2, max_size=2),
       angle=st.floats(0, 2 * np.pi), length=st.floats(20, 50))
def test_crossing_fraction_hits_boundary(region, u, angle, length):
    d = region.dim
    q0 = np.array(CENTRES[region.kind]) + np.array(u[:d])
    direction = np.array([np.cos(angle), np.sin(angle)])[:d]
    if d == 1:
        direction = np.sign(direction) + (direction == 0)
    if isinstance(region, HalfSpace):
        assume(direction @ np.asarray(region.normal) > 0.05)
    q1 = q0 + length * direction
    assert region.signed_distance(q0) > 0 and region.signed_distance(q1) < 0
    s = float(region.crossing_fraction(q0, q1))
    assert 0.0 <= s <= 1.0
    qc = q0 + s * (q1 - q0)
    assert abs(float(region.signed_distance(qc))) < 1e-9
    # no earlier point of the segment is outside
    for u in np.linspace(0, s, 20)[:-1]:
        assert region.signed_distance(q0 + u * (q1 - q0)) > -1e-12


def test_full_space_contains_everything():
    fs = FullSpace(2)
    assert fs.contains(np.array([[1e6, -1e6]])).all()
    assert not fs.bounded


@pytest.mark.parametrize("region", REGIONS + [FullSpace(3)], ids=lambda r: r.kind)
def test_dict_round_trip(region):
    again = region_from_dict(region.to_dict())
    assert again.to_dict() == region.to_dict()


def test_bad_regions_rejected():
    with pytest.raises(ParameterError):
        HalfSpace((0.0, 0.0), 1.0)
    with pytest.raises(ParameterError):
        Interval(-1.0, 2.0).signed_distance(np.zeros((3, 2)))
