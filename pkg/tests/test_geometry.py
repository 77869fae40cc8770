import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentzgas.errors import GeometryError
from lorentzgas.geometry import (MISS, NEAR_TANGENT, TRANSVERSAL, Disk, arclength_of, frame_at, phase_to_ray,
                                 ray_intersect, ray_to_phase, tangency_directions, wrap)

UNIT = Disk((0.0, 0.0), 1.0)


@pytest.mark.parametrize(
    "r, pos, tangent",
    [
        (0.0, (1.0, 0.0), (0.0, -1.0)),
        (math.pi / 2, (0.0, -1.0), (-1.0, 0.0)),
        (math.pi, (-1.0, 0.0), (0.0, 1.0)),
        (3 * math.pi / 2, (0.0, 1.0), (1.0, 0.0)),
    ],
)
def test_frame_runs_clockwise_from_max_x(r, pos, tangent):
    fr = frame_at(UNIT, r)
    assert fr.position == pytest.approx(pos, abs=1e-15)
    assert fr.clockwise_tangent == pytest.approx(tangent, abs=1e-15)
    # outward normal is the tangent turned counterclockwise
    assert fr.outward_normal == pytest.approx((-tangent[1], tangent[0]), abs=1e-15)


def test_frame_scales_with_radius():
    d = Disk((2.0, -1.0), 0.5)
    fr = frame_at(d, d.length / 4)
    assert fr.position == pytest.approx((2.0, -1.5))


@pytest.mark.parametrize("r, L, expected", [(7.0, 2 * math.pi, 7.0 - 2 * math.pi), (-1.0, 4.0, 3.0),
                                            (-1e-300, 4.0, 0.0), (4.0, 4.0, 0.0)])
def test_wrap(r, L, expected):
    assert wrap(r, L) == pytest.approx(expected, abs=1e-300)
    assert 0.0 <= wrap(r, L) < L


def test_head_on_hit():
    hit = ray_intersect(UNIT, (-3.0, 0.0), (1.0, 0.0))
    assert hit.classification == TRANSVERSAL
    assert hit.distance == 2.0
    assert hit.r_hit == pytest.approx(math.pi)
    assert hit.grazing_margin == 1.0


def test_oblique_hit():
    # chord offset 0.6: entry at x = -0.8, sin(incidence angle) = 0.8
    hit = ray_intersect(UNIT, (-3.0, 0.6), (1.0, 0.0))
    assert hit.distance == pytest.approx(2.2, rel=1e-15)
    assert hit.point == pytest.approx((-0.8, 0.6))
    assert hit.grazing_margin == pytest.approx(0.8, rel=1e-15)


@pytest.mark.parametrize("origin, direction", [((-3.0, 1.5), (1.0, 0.0)), ((3.0, 0.0), (1.0, 0.0))])
def test_misses(origin, direction):
    assert ray_intersect(UNIT, origin, direction).classification == MISS


def test_exact_tangent_is_near_tangent():
    hit = ray_intersect(UNIT, (-3.0, 1.0), (1.0, 0.0))
    assert hit.classification == NEAR_TANGENT
    assert hit.grazing_margin < 1e-8
    assert hit.point == pytest.approx((0.0, 1.0), abs=1e-7)


def test_tangency_directions_half_aperture():
    left, right = tangency_directions(UNIT, (2.0, 0.0))
    assert math.atan2(left[1], left[0]) == pytest.approx(-math.pi + math.pi / 6)
    assert math.atan2(right[1], right[0]) == pytest.approx(math.pi - math.pi / 6)
    with pytest.raises(GeometryError):
        tangency_directions(UNIT, (0.5, 0.0))


@pytest.mark.parametrize("phi", [0.0, math.pi, -0.1, 4.0])
def test_phase_to_ray_rejects_degenerate_angles(phi):
    with pytest.raises(GeometryError):
        phase_to_ray(UNIT, 0.0, phi)


def test_normal_outgoing_direction():
    _, v = phase_to_ray(UNIT, 0.0, math.pi / 2)
    assert v == pytest.approx((1.0, 0.0))


def test_disk_validation():
    with pytest.raises(GeometryError):
        Disk((0.0, 0.0), 0.0)
    with pytest.raises(GeometryError):
        Disk((math.nan, 0.0), 1.0)


disks = st.builds(Disk, st.tuples(st.floats(-50, 50), st.floats(-50, 50)), st.floats(0.05, 5.0))


@settings(max_examples=200, deadline=None)
@given(disks, st.floats(-10, 10), st.floats(0.001, math.pi - 0.001))
def test_reflection_roundtrip(d, r, phi):
    fr = frame_at(d, r)
    _, v = phase_to_ray(d, fr.r, phi)
    nx, ny = fr.outward_normal
    dn = v[0] * nx + v[1] * ny
    r2, phi2 = ray_to_phase(d, fr.r, (v[0] - 2 * dn * nx, v[1] - 2 * dn * ny))
    assert r2 == fr.r
    assert phi2 == pytest.approx(phi, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(disks, st.floats(0, 2 * math.pi), st.floats(1.2, 10.0), st.floats(-0.99, 0.99))
def test_hits_solve_circle_equation(d, ang, k, aim):
    dist = k * d.radius
    o = (d.center[0] + dist * math.cos(ang), d.center[1] + dist * math.sin(ang))
    a = math.atan2(-math.sin(ang), -math.cos(ang)) + aim * math.asin(1 / k)
    hit = ray_intersect(d, o, (math.cos(a), math.sin(a)))
    assert hit.hit
    px, py = hit.point
    assert math.hypot(px - d.center[0], py - d.center[1]) == pytest.approx(d.radius, rel=1e-12)
    assert arclength_of(d, hit.point) == pytest.approx(hit.r_hit, abs=1e-9 * d.length)


@settings(max_examples=100, deadline=None)
@given(disks, st.floats(0, 2 * math.pi), st.floats(1.01, 20.0))
def test_tangency_directions_graze(d, ang, k):
    o = (d.center[0] + k * d.radius * math.cos(ang), d.center[1] + k * d.radius * math.sin(ang))
    for u in tangency_directions(d, o):
        hit = ray_intersect(d, o, u)
        assert hit.hit and hit.grazing_margin < 1e-8
