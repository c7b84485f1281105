"""Planar geometry and projection primitives.

Coordinates come in two flavours: geographic lon/lat degrees (WGS84) and
planar metric x/y (x east, y north). Everything here is pure and safe to
call concurrently.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

Point = tuple[float, float]

# WGS84 ellipsoid
_R = 6378137.0
_F = 1.0 / 298.257223563
_E2 = _F * (2.0 - _F)
_E4 = _E2 * _E2
_E6 = _E4 * _E2
_EP2 = _E2 / (1.0 - _E2)
_K0 = 0.9996

_M1 = 1 - _E2 / 4 - 3 * _E4 / 64 - 5 * _E6 / 256
_M2 = 3 * _E2 / 8 + 3 * _E4 / 32 + 45 * _E6 / 1024
_M3 = 15 * _E4 / 256 + 45 * _E6 / 1024
_M4 = 35 * _E6 / 3072

# third-flattening series for the inverse
_SQRT_1ME2 = math.sqrt(1 - _E2)
_N = (1 - _SQRT_1ME2) / (1 + _SQRT_1ME2)
_N2 = _N * _N
_N3 = _N2 * _N
_N4 = _N3 * _N
_N5 = _N4 * _N
_P2 = 3.0 / 2 * _N - 27.0 / 32 * _N3 + 269.0 / 512 * _N5
_P3 = 21.0 / 16 * _N2 - 55.0 / 32 * _N4
_P4 = 151.0 / 96 * _N3 - 417.0 / 128 * _N5
_P5 = 1097.0 / 512 * _N4

QUANT_BINS = 256

# seed for the enclosing-circle shuffle; fixed so results are reproducible
_WELZL_SEED = 0x5EED


class ProjectionError(ValueError):
    """Latitude outside the usable transverse-Mercator band."""


class DegenerateExtentError(ValueError):
    """All points coincide; there is no bounding-box diagonal to normalize."""


def utm_zone(lon: float) -> int:
    """UTM zone number (1..60) for a longitude in degrees."""
    return int(((lon + 180.0) % 360.0) / 6.0) + 1


def _central_meridian(zone: int) -> float:
    return (zone - 1) * 6.0 - 180.0 + 3.0


def utm_project(
    lon: float,
    lat: float,
    zone: Optional[int] = None,
    south: Optional[bool] = None,
) -> tuple[float, float, int, bool]:
    """Project WGS84 lon/lat to UTM easting/northing in meters.

    The zone (and hemisphere) default to the point's own; pass them
    explicitly so every vertex of one street network shares a frame.
    Returns (easting, northing, zone, south).
    """
    if not -84.0 <= lat <= 84.0:
        raise ProjectionError(f"latitude {lat} outside the |lat| <= 84 deg band")
    if not -180.0 <= lon <= 180.0:
        raise ProjectionError(f"longitude {lon} out of range")
    if zone is None:
        zone = utm_zone(lon)
    if not 1 <= zone <= 60:
        raise ProjectionError(f"zone {zone} out of range 1..60")
    if south is None:
        south = lat < 0.0

    lat_r = math.radians(lat)
    sin_lat = math.sin(lat_r)
    cos_lat = math.cos(lat_r)
    tan_lat = sin_lat / cos_lat
    t2 = tan_lat * tan_lat
    t4 = t2 * t2

    nu = _R / math.sqrt(1 - _E2 * sin_lat * sin_lat)
    c = _EP2 * cos_lat * cos_lat

    a = cos_lat * math.radians(lon - _central_meridian(zone))
    a2 = a * a
    a3 = a2 * a
    a4 = a3 * a
    a5 = a4 * a
    a6 = a5 * a

    m = _R * (
        _M1 * lat_r
        - _M2 * math.sin(2 * lat_r)
        + _M3 * math.sin(4 * lat_r)
        - _M4 * math.sin(6 * lat_r)
    )

    easting = (
        _K0
        * nu
        * (a + a3 / 6 * (1 - t2 + c) + a5 / 120 * (5 - 18 * t2 + t4 + 72 * c - 58 * _EP2))
        + 500000.0
    )
    northing = _K0 * (
        m
        + nu
        * tan_lat
        * (
            a2 / 2
            + a4 / 24 * (5 - t2 + 9 * c + 4 * c * c)
            + a6 / 720 * (61 - 58 * t2 + t4 + 600 * c - 330 * _EP2)
        )
    )
    if south:
        northing += 10000000.0
    return easting, northing, zone, south


def utm_unproject(easting: float, northing: float, zone: int, south: bool) -> Point:
    """Inverse of utm_project: UTM meters back to (lon, lat) degrees."""
    if not 1 <= zone <= 60:
        raise ProjectionError(f"zone {zone} out of range 1..60")
    x = easting - 500000.0
    y = northing - 10000000.0 if south else northing

    m = y / _K0
    mu = m / (_R * _M1)
    p_rad = (
        mu
        + _P2 * math.sin(2 * mu)
        + _P3 * math.sin(4 * mu)
        + _P4 * math.sin(6 * mu)
        + _P5 * math.sin(8 * mu)
    )

    p_sin = math.sin(p_rad)
    p_sin2 = p_sin * p_sin
    p_cos = math.cos(p_rad)
    p_tan = p_sin / p_cos
    p_tan2 = p_tan * p_tan
    p_tan4 = p_tan2 * p_tan2

    ep_sin = 1 - _E2 * p_sin2
    nu = _R / math.sqrt(ep_sin)
    r = (1 - _E2) / ep_sin

    c = _EP2 * p_cos * p_cos
    c2 = c * c

    d = x / (nu * _K0)
    d2 = d * d
    d3 = d2 * d
    d4 = d3 * d
    d5 = d4 * d
    d6 = d5 * d

    lat = p_rad - (p_tan / r) * (
        d2 / 2
        - d4 / 24 * (5 + 3 * p_tan2 + 10 * c - 4 * c2 - 9 * _EP2)
        + d6 / 720 * (61 + 90 * p_tan2 + 298 * c + 45 * p_tan4 - 252 * _EP2 - 3 * c2)
    )
    lon = (
        d
        - d3 / 6 * (1 + 2 * p_tan2 + c)
        + d5 / 120 * (5 - 2 * c + 28 * p_tan2 - 3 * c2 + 8 * _EP2 + 24 * p_tan4)
    ) / p_cos
    return math.degrees(lon) + _central_meridian(zone), math.degrees(lat)


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine transform taking source coordinates to the normalized frame."""

    center: Point
    scale: float

    def normalize(self, p: Point) -> Point:
        return (p[0] - self.center[0]) * self.scale, (p[1] - self.center[1]) * self.scale

    def denormalize(self, p: Point) -> Point:
        return p[0] / self.scale + self.center[0], p[1] / self.scale + self.center[1]


def bounding_box(points: Sequence[Point]) -> tuple[float, float, float, float]:
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return min(xs), min(ys), max(xs), max(ys)


def center_and_normalize(points: Sequence[Point]) -> tuple[list[Point], NormalizationRecord]:
    """Center the point set at (0,0) and scale its bbox diagonal to 1."""
    if len(points) < 2:
        raise DegenerateExtentError("need at least 2 points")
    minx, miny, maxx, maxy = bounding_box(points)
    diag = math.hypot(maxx - minx, maxy - miny)
    if diag <= 0.0:
        raise DegenerateExtentError("all points identical, bounding-box diagonal is 0")
    rec = NormalizationRecord(center=((minx + maxx) / 2.0, (miny + maxy) / 2.0), scale=1.0 / diag)
    return [rec.normalize(p) for p in points], rec


def quantize_value(v: float) -> int:
    """Uniform 8-bit bin for a normalized coordinate in [-0.5, 0.5]."""
    b = math.floor((v + 0.5) * QUANT_BINS)
    return 0 if b < 0 else QUANT_BINS - 1 if b > QUANT_BINS - 1 else b


def dequantize_value(q: int) -> float:
    """Center of the quantization bin (minimizes expected round-trip error)."""
    return (q + 0.5) / QUANT_BINS - 0.5


def quantize(p: Point) -> tuple[int, int]:
    return quantize_value(p[0]), quantize_value(p[1])


def dequantize(q: tuple[int, int]) -> Point:
    return dequantize_value(q[0]), dequantize_value(q[1])


def polyline_length(vertices: Sequence[Point]) -> float:
    """Sum of consecutive Euclidean distances."""
    if len(vertices) < 2:
        raise ValueError("polyline needs at least 2 vertices")
    return sum(
        math.hypot(vertices[i + 1][0] - vertices[i][0], vertices[i + 1][1] - vertices[i][1])
        for i in range(len(vertices) - 1)
    )


def bearing(a: Point, b: Point) -> float:
    """Compass bearing a->b in degrees: 0 = +y (north), 90 = +x (east)."""
    if a == b:
        raise ValueError("bearing undefined for coincident points")
    return math.degrees(math.atan2(b[0] - a[0], b[1] - a[1])) % 360.0


def signed_area(ring: Sequence[Point]) -> float:
    """Shoelace signed area of an implicitly closed ring (CCW positive)."""
    area = 0.0
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return area / 2.0


def polygon_area_perimeter(ring: Sequence[Point]) -> tuple[float, float]:
    """(unsigned shoelace area, closed-ring perimeter) of a polygon.

    The ring may repeat its first vertex at the end or be implicitly closed.
    """
    pts = list(ring)
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    if len(set(pts)) < 3:
        raise ValueError("polygon needs at least 3 distinct vertices")
    perimeter = polyline_length(pts + [pts[0]])
    return abs(signed_area(pts)), perimeter


def _circle_from_diameter(a: Point, b: Point) -> tuple[Point, float]:
    cx = (a[0] + b[0]) / 2.0
    cy = (a[1] + b[1]) / 2.0
    r = max(math.hypot(cx - a[0], cy - a[1]), math.hypot(cx - b[0], cy - b[1]))
    return (cx, cy), r


def _circumcircle(a: Point, b: Point, c: Point) -> Optional[tuple[Point, float]]:
    # relative to the bbox midpoint for conditioning
    ox = (min(a[0], b[0], c[0]) + max(a[0], b[0], c[0])) / 2.0
    oy = (min(a[1], b[1], c[1]) + max(a[1], b[1], c[1])) / 2.0
    ax, ay = a[0] - ox, a[1] - oy
    bx, by = b[0] - ox, b[1] - oy
    cx, cy = c[0] - ox, c[1] - oy
    d = (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by)) * 2.0
    if d == 0.0:
        return None
    x = ox + ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) + (cx * cx + cy * cy) * (ay - by)) / d
    y = oy + ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) + (cx * cx + cy * cy) * (bx - ax)) / d
    r = max(
        math.hypot(x - a[0], y - a[1]),
        math.hypot(x - b[0], y - b[1]),
        math.hypot(x - c[0], y - c[1]),
    )
    return (x, y), r


def _in_circle(circle: Optional[tuple[Point, float]], p: Point) -> bool:
    if circle is None:
        return False
    (cx, cy), r = circle
    return math.hypot(p[0] - cx, p[1] - cy) <= r * (1 + 1e-14) + 1e-300


def _cross(ox: float, oy: float, ax: float, ay: float, bx: float, by: float) -> float:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def min_enclosing_circle(points: Sequence[Point]) -> tuple[Point, float]:
    """Smallest circle containing all points (Welzl, move-to-front).

    The internal shuffle is seeded, so the result is deterministic for a
    given input order.
    """
    if not points:
        raise ValueError("min_enclosing_circle needs at least 1 point")
    pts = [(float(x), float(y)) for x, y in points]
    random.Random(_WELZL_SEED).shuffle(pts)

    circle: Optional[tuple[Point, float]] = None
    for i, p in enumerate(pts):
        if not _in_circle(circle, p):
            circle = _circle_one_point(pts[: i + 1], p)
    assert circle is not None
    return circle


def _circle_one_point(pts: list[Point], p: Point) -> tuple[Point, float]:
    circle: tuple[Point, float] = (p, 0.0)
    for i, q in enumerate(pts):
        if not _in_circle(circle, q):
            if circle[1] == 0.0:
                circle = _circle_from_diameter(p, q)
            else:
                circle = _circle_two_points(pts[: i + 1], p, q)
    return circle


def _circle_two_points(pts: list[Point], p: Point, q: Point) -> tuple[Point, float]:
    circ = _circle_from_diameter(p, q)
    left: Optional[tuple[Point, float]] = None
    right: Optional[tuple[Point, float]] = None
    for r in pts:
        if _in_circle(circ, r):
            continue
        cross = _cross(p[0], p[1], q[0], q[1], r[0], r[1])
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        ccross = _cross(p[0], p[1], q[0], q[1], c[0][0], c[0][1])
        if cross > 0.0 and (left is None or ccross > _cross(p[0], p[1], q[0], q[1], left[0][0], left[0][1])):
            left = c
        elif cross < 0.0 and (right is None or ccross < _cross(p[0], p[1], q[0], q[1], right[0][0], right[0][1])):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right  # type: ignore[return-value]
    if right is None:
        return left
    return left if left[1] <= right[1] else right
