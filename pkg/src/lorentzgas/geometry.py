"""Disk scatterers and local geometric queries.

Boundary arclength ``r`` runs clockwise from the point of maximal x
coordinate.  A line element ``(r, phi)`` is the unit vector at the boundary
point ``r`` that makes angle ``phi`` with the clockwise tangent, so
``phi = pi/2`` is the outward normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable

from .errors import GeometryError

TANGENCY_TOL = 1e-9
# Clearance (radius minus the ray's distance to the center) below this many ulps of
# (|w| + radius) is indistinguishable from exact tangency in double precision and is
# snapped to zero: such rays are tangent hits with grazing margin 0.
TANGENCY_SNAP_ULPS = 16.0
_EPS = 2.220446049250313e-16

TRANSVERSAL = "transversal"
NEAR_TANGENT = "near-tangent"
MISS = "miss"


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float
    label: Hashable = None

    def __post_init__(self):
        if not (self.radius > 0.0) or not math.isfinite(self.radius):
            raise GeometryError(f"disk radius must be positive, got {self.radius!r}")
        if not all(math.isfinite(c) for c in self.center):
            raise GeometryError(f"disk center must be finite, got {self.center!r}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def curvature(self) -> float:
        return 1.0 / self.radius

    @property
    def length(self) -> float:
        return 2.0 * math.pi * self.radius

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def gap(self, other: "Disk") -> float:
        """Boundary-to-boundary distance (negative when the disks overlap)."""
        dx = self.center[0] - other.center[0]
        dy = self.center[1] - other.center[1]
        return math.hypot(dx, dy) - self.radius - other.radius

    def same_shape(self, other: "Disk") -> bool:
        return self.center == other.center and self.radius == other.radius


@dataclass(frozen=True)
class BoundaryFrame:
    r: float
    position: tuple[float, float]
    clockwise_tangent: tuple[float, float]
    outward_normal: tuple[float, float]


@dataclass(frozen=True)
class RayHit:
    distance: float
    r_hit: float
    classification: str
    grazing_margin: float
    point: tuple[float, float] = (math.nan, math.nan)

    @property
    def hit(self) -> bool:
        return self.classification != MISS


MISSED = RayHit(math.inf, math.nan, MISS, math.nan)


def wrap(r: float, length: float) -> float:
    r = math.fmod(r, length)
    if r < 0.0:
        r += length
    if r >= length:  # fmod of tiny negatives can round up to length
        r = 0.0
    return r


def frame_at(disk: Disk, r: float) -> BoundaryFrame:
    r = wrap(r, disk.length)
    th = r / disk.radius
    c, s = math.cos(th), math.sin(th)
    cx, cy = disk.center
    return BoundaryFrame(
        r=r,
        position=(cx + disk.radius * c, cy - disk.radius * s),
        clockwise_tangent=(-s, -c),
        outward_normal=(c, -s),
    )


def curvature(disk: Disk, r: float = 0.0) -> float:
    return disk.curvature


def arclength_of(disk: Disk, point) -> float:
    """Clockwise arclength of the boundary point nearest to ``point``."""
    th = math.atan2(-(point[1] - disk.center[1]), point[0] - disk.center[0])
    if th < 0.0:
        th += 2.0 * math.pi
    return wrap(disk.radius * th, disk.length)


def ray_intersect(disk: Disk, origin, direction, tol: float = TANGENCY_TOL) -> RayHit:
    ox, oy = origin
    dx, dy = direction
    wx = ox - disk.center[0]
    wy = oy - disk.center[1]
    b = wx * dx + wy * dy
    if b >= 0.0:
        return MISSED
    cross = abs(wx * dy - wy * dx)
    dist = math.hypot(wx, wy)
    clearance = disk.radius - cross
    snap = TANGENCY_SNAP_ULPS * _EPS * (dist + disk.radius)
    if clearance < -snap:
        return MISSED
    if clearance <= snap:
        clearance = 0.0
    disc = clearance * (disk.radius + cross)
    sq = math.sqrt(disc)
    cc = (dist - disk.radius) * (dist + disk.radius)
    t = cc / (-b + sq)
    if t <= 0.0:
        return MISSED
    margin = sq / disk.radius
    point = (ox + t * dx, oy + t * dy)
    kind = TRANSVERSAL if margin >= tol else NEAR_TANGENT
    return RayHit(t, arclength_of(disk, point), kind, margin, point)


def tangency_directions(disk: Disk, external_point):
    """The two unit directions from ``external_point`` tangent to ``disk``.

    Returned as ``(left, right)``: ``left`` is obtained by rotating the
    direction to the center counterclockwise by the half-aperture.
    """
    px, py = external_point
    vx = disk.center[0] - px
    vy = disk.center[1] - py
    d = math.hypot(vx, vy)
    if d <= disk.radius * (1.0 + 1e-12):
        raise GeometryError("point is inside or on the scatterer")
    half = math.asin(disk.radius / d)
    base = math.atan2(vy, vx)
    left = (math.cos(base + half), math.sin(base + half))
    right = (math.cos(base - half), math.sin(base - half))
    return left, right


def phase_to_ray(disk: Disk, r: float, phi: float):
    if not (0.0 < phi < math.pi):
        raise GeometryError(f"phi must lie in (0, pi), got {phi!r}")
    fr = frame_at(disk, r)
    c, s = math.cos(phi), math.sin(phi)
    tx, ty = fr.clockwise_tangent
    nx, ny = fr.outward_normal
    return fr.position, (c * tx + s * nx, c * ty + s * ny)


def ray_to_phase(disk: Disk, r_hit: float, incoming):
    """Reflect ``incoming`` at boundary point ``r_hit``; return outgoing ``(r, phi)``."""
    fr = frame_at(disk, r_hit)
    dx, dy = incoming
    nx, ny = fr.outward_normal
    dn = dx * nx + dy * ny
    if dn >= 0.0:
        raise GeometryError("incoming direction does not point into the scatterer")
    vx = dx - 2.0 * dn * nx
    vy = dy - 2.0 * dn * ny
    tx, ty = fr.clockwise_tangent
    phi = math.atan2(vx * nx + vy * ny, vx * tx + vy * ty)
    return fr.r, phi


def direction_to_phi(frame: BoundaryFrame, direction) -> float:
    """Angle of ``direction`` from the clockwise tangent (in (-pi, pi])."""
    tx, ty = frame.clockwise_tangent
    nx, ny = frame.outward_normal
    return math.atan2(direction[0] * nx + direction[1] * ny, direction[0] * tx + direction[1] * ty)
