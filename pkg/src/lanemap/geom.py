"""Geo-referenced lane geometry: points, directed polylines, affine georeferencing.

Coordinate conventions:
  * geo space is WGS84 lon/lat in degrees;
  * pixel space has x rightward and y downward, continuous, with the image
    covering [0, w] x [0, h];
  * a GeoTransform maps pixel -> geo via lon = a*x + b*y + c, lat = d*x + e*y + f
    (world-file convention, one transform per exported patch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from .errors import ValidationError

EARTH_RADIUS_M = 6371008.8


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValidationError(f"GeoPoint coordinates must be finite, got ({self.lon}, {self.lat})")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")


@dataclass(frozen=True)
class PixelPoint:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"PixelPoint coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel->geo map; must be invertible (a*e - b*d != 0)."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self) -> None:
        if self.det == 0.0:
            raise ValidationError("GeoTransform is singular (a*e - b*d == 0)")

    @property
    def det(self) -> float:
        return self.a * self.e - self.b * self.d

    @classmethod
    def identity(cls) -> "GeoTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


class LineForm(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"


class LineColor(str, Enum):
    WHITE = "white"
    YELLOW = "yellow"


class Continuity(str, Enum):
    SOLID = "solid"
    DASH = "dash"


@dataclass(frozen=True)
class LaneAttributes:
    line_form: LineForm = LineForm.SINGLE
    color: LineColor = LineColor.WHITE
    continuity: Continuity = Continuity.SOLID

    def __post_init__(self) -> None:
        # Accept raw strings for convenience, normalizing to the enums.
        object.__setattr__(self, "line_form", LineForm(self.line_form))
        object.__setattr__(self, "color", LineColor(self.color))
        object.__setattr__(self, "continuity", Continuity(self.continuity))


@dataclass(frozen=True)
class Lane:
    """Directed polyline of geo vertices; vertex order is the lane direction."""

    lane_id: str
    road_id: str
    attributes: LaneAttributes
    vertices: tuple[GeoPoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", tuple(self.vertices))
        if len(self.vertices) < 2:
            raise ValidationError(f"lane {self.lane_id!r} has {len(self.vertices)} vertices, need >= 2")
        for i in range(1, len(self.vertices)):
            if self.vertices[i] == self.vertices[i - 1]:
                raise ValidationError(f"lane {self.lane_id!r} repeats vertex at position {i}")


@dataclass(frozen=True)
class LaneMap:
    region: str
    lanes: tuple[Lane, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "lanes", tuple(self.lanes))
        seen: set[str] = set()
        for lane in self.lanes:
            if lane.lane_id in seen:
                raise ValidationError(f"duplicate lane_id {lane.lane_id!r} in map {self.region!r}")
            seen.add(lane.lane_id)


@dataclass(frozen=True)
class MapStats:
    lane_count: int
    vertex_count: int
    total_length_km: float


def pixel_to_geo(t: GeoTransform, p: PixelPoint) -> GeoPoint:
    """Apply the forward affine map."""
    return GeoPoint(t.a * p.x + t.b * p.y + t.c, t.d * p.x + t.e * p.y + t.f)


def geo_to_pixel(t: GeoTransform, g: GeoPoint) -> PixelPoint:
    """Invert the affine map by solving the 2x2 linear system exactly."""
    det = t.det
    if det == 0.0:
        raise ValidationError("GeoTransform is singular (a*e - b*d == 0)")
    u = g.lon - t.c
    v = g.lat - t.f
    x = (t.e * u - t.b * v) / det
    y = (t.a * v - t.d * u) / det
    return PixelPoint(x, y)


def haversine_m(g1: GeoPoint, g2: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of mean Earth radius."""
    lat1 = math.radians(g1.lat)
    lat2 = math.radians(g2.lat)
    dlat = lat2 - lat1
    dlon = math.radians(g2.lon - g1.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def lane_length_m(lane: Lane) -> float:
    return sum(haversine_m(a, b) for a, b in zip(lane.vertices, lane.vertices[1:]))


def map_stats(m: LaneMap) -> MapStats:
    total_m = sum(lane_length_m(lane) for lane in m.lanes)
    return MapStats(
        lane_count=len(m.lanes),
        vertex_count=sum(len(lane.vertices) for lane in m.lanes),
        total_length_km=total_m / 1000.0,
    )


def _clip_segment(
    p0: tuple[float, float], p1: tuple[float, float], w: float, h: float
) -> tuple[tuple[float, float], tuple[float, float]] | None:
    """Clip segment p0->p1 to [0,w]x[0,h]; returns None when nothing remains.

    Parametric (Liang-Barsky) clipping: intersection points are exact
    solutions of the segment/border equations, and direction is preserved.
    """
    x0, y0 = p0
    x1, y1 = p1
    dx = x1 - x0
    dy = y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0), (dx, w - x0), (-dy, y0), (dy, h - y0)):
        if p == 0.0:
            if q < 0.0:
                return None  # parallel to this border and outside
            continue
        t = q / p
        if p < 0.0:
            if t > t1:
                return None
            if t > t0:
                t0 = t
        else:
            if t < t0:
                return None
            if t < t1:
                t1 = t
    if t0 > t1:
        return None
    a = (x0 + t0 * dx, y0 + t0 * dy) if t0 > 0.0 else (x0, y0)
    b = (x0 + t1 * dx, y0 + t1 * dy) if t1 < 1.0 else (x1, y1)
    return a, b


def project_lane(t: GeoTransform, lane: Lane, w: float, h: float) -> list[list[PixelPoint]]:
    """Project a lane into the pixel frame and clip it to [0,w]x[0,h].

    Clipping can split one lane into several polylines; direction is kept.
    Pieces that degenerate to a single point are dropped.
    """
    if w <= 0 or h <= 0:
        raise ValidationError(f"patch size must be positive, got {w}x{h}")
    px = [geo_to_pixel(t, g) for g in lane.vertices]
    polylines: list[list[PixelPoint]] = []
    current: list[PixelPoint] = []
    for i in range(len(px) - 1):
        clipped = _clip_segment((px[i].x, px[i].y), (px[i + 1].x, px[i + 1].y), w, h)
        if clipped is None:
            if len(current) >= 2:
                polylines.append(current)
            current = []
            continue
        (ax, ay), (bx, by) = clipped
        if ax == bx and ay == by:
            # Segment touches the patch at a single point: no extent.
            if len(current) >= 2:
                polylines.append(current)
            current = []
            continue
        start = PixelPoint(ax, ay)
        end = PixelPoint(bx, by)
        if current and current[-1] == start:
            current.append(end)
        else:
            if len(current) >= 2:
                polylines.append(current)
            current = [start, end]
    if len(current) >= 2:
        polylines.append(current)
    return polylines
