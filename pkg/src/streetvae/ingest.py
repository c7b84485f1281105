"""Street-data ingestion: local GeoJSON / OSM XML extracts, place
filtering, box clipping, and an optional Overpass-style HTTP fetch.

The canonical input is a local file; fetching is plumbing for building
such files and is never required by the rest of the pipeline.
"""
from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional, Sequence

import requests

from . import geom
from .geom import Point

DEFAULT_HALF_WIDTH_M = 500.0
_PLACE_KINDS = ("town", "city")
_COUNTRY_KEYS = ("country", "addr:country", "is_in:country_code")
# absorbs projection round-trip wobble so clipping is idempotent
_BOUNDARY_EPS_M = 1e-3


class IngestError(ValueError):
    pass


class ParseError(IngestError):
    """Malformed document; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class FetchError(IngestError):
    def __init__(self, message: str, endpoint: str, status: Optional[int] = None):
        super().__init__(message)
        self.endpoint = endpoint
        self.status = status


@dataclass
class PlaceRecord:
    id: str
    name: str
    country: str  # ISO-3166 alpha-2; "ZZ" when the source has no tag
    place_kind: str
    population: Optional[int]
    centroid: Point  # lon, lat

    def __post_init__(self):
        if self.place_kind not in _PLACE_KINDS:
            raise IngestError(f"place_kind must be one of {_PLACE_KINDS}")
        lon, lat = self.centroid
        if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
            raise IngestError(f"centroid out of range: {self.centroid}")
        if self.population is not None and self.population < 0:
            raise IngestError("population must be non-negative")


@dataclass
class RawStreetData:
    polylines: list[list[Point]] = field(default_factory=list)
    highway_tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.polylines) != len(self.highway_tags):
            raise IngestError("one highway tag per polyline required")


def _parse_population(raw) -> Optional[int]:
    # OSM population tags are free text; anything but a plain integer is absent
    if raw is None:
        return None
    try:
        value = int(str(raw).strip())
    except (TypeError, ValueError):
        return None
    return value if value >= 0 else None


def _country_of(props: dict) -> str:
    for key in _COUNTRY_KEYS:
        val = props.get(key)
        if isinstance(val, str) and val.strip():
            return val.strip().upper()[:2]
    return "ZZ"


def _dedup_consecutive(pts: list[Point]) -> list[Point]:
    out: list[Point] = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    return out


def parse_extract(content: bytes, format: str) -> tuple[RawStreetData, list[PlaceRecord]]:
    """Parse highway polylines and town/city place points from an extract."""
    if format == "geojson":
        return _parse_geojson(content)
    if format == "osm_xml":
        return _parse_osm_xml(content)
    raise IngestError(f"unknown format '{format}' (expected geojson or osm_xml)")


def _parse_geojson(content: bytes) -> tuple[RawStreetData, list[PlaceRecord]]:
    try:
        doc = json.loads(content.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ParseError("invalid utf-8", e.start) from e
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", e.pos) from e

    features = doc.get("features", [doc]) if isinstance(doc, dict) else []
    polylines: list[list[Point]] = []
    tags: list[str] = []
    places: list[PlaceRecord] = []
    for i, feat in enumerate(features):
        if not isinstance(feat, dict):
            continue
        props = feat.get("properties") or {}
        geometry = feat.get("geometry") or {}
        gtype = geometry.get("type")
        if gtype in ("LineString", "MultiLineString") and "highway" in props:
            parts = [geometry["coordinates"]] if gtype == "LineString" else geometry["coordinates"]
            for part in parts:
                pts = _dedup_consecutive([(float(c[0]), float(c[1])) for c in part])
                if len(pts) >= 2:
                    polylines.append(pts)
                    tags.append(str(props["highway"]))
        elif gtype == "Point" and props.get("place") in _PLACE_KINDS:
            lon, lat = geometry["coordinates"][:2]
            places.append(
                PlaceRecord(
                    id=str(props.get("id", feat.get("id", f"place-{i}"))),
                    name=str(props.get("name", "")),
                    country=_country_of(props),
                    place_kind=props["place"],
                    population=_parse_population(props.get("population")),
                    centroid=(float(lon), float(lat)),
                )
            )
    return RawStreetData(polylines=polylines, highway_tags=tags), places


def _xml_offset(content: bytes, position: tuple[int, int]) -> int:
    line, column = position
    lines = content.split(b"\n")
    return sum(len(l) + 1 for l in lines[: line - 1]) + column


def _parse_osm_xml(content: bytes) -> tuple[RawStreetData, list[PlaceRecord]]:
    try:
        root = ET.fromstring(content)
    except ET.ParseError as e:
        raise ParseError(f"invalid XML: {e.msg if hasattr(e, 'msg') else e}", _xml_offset(content, e.position)) from e

    node_coord: dict[str, Point] = {}
    places: list[PlaceRecord] = []
    for node in root.iter("node"):
        nid = node.get("id", "")
        lon, lat = node.get("lon"), node.get("lat")
        if lon is None or lat is None:
            continue
        node_coord[nid] = (float(lon), float(lat))
        tags = {t.get("k"): t.get("v") for t in node.findall("tag")}
        if tags.get("place") in _PLACE_KINDS:
            places.append(
                PlaceRecord(
                    id=nid,
                    name=tags.get("name", ""),
                    country=_country_of(tags),
                    place_kind=tags["place"],
                    population=_parse_population(tags.get("population")),
                    centroid=node_coord[nid],
                )
            )

    polylines: list[list[Point]] = []
    highway_tags: list[str] = []
    for way in root.iter("way"):
        tags = {t.get("k"): t.get("v") for t in way.findall("tag")}
        if "highway" not in tags:
            continue
        pts = [node_coord[nd.get("ref")] for nd in way.findall("nd") if nd.get("ref") in node_coord]
        pts = _dedup_consecutive(pts)
        if len(pts) >= 2:
            polylines.append(pts)
            highway_tags.append(str(tags["highway"]))
    return RawStreetData(polylines=polylines, highway_tags=highway_tags), places


def filter_places(places: Sequence[PlaceRecord], min_population: int) -> list[PlaceRecord]:
    """Keep records whose population is known and above the floor."""
    if min_population < 0:
        raise IngestError("min_population must be >= 0")
    return [p for p in places if p.population is not None and p.population > min_population]


def _clip_segment(a: Point, b: Point, lo: Point, hi: Point) -> Optional[tuple[float, float]]:
    """Liang-Barsky parameter interval of segment a->b inside the box."""
    t0, t1 = 0.0, 1.0
    dx, dy = b[0] - a[0], b[1] - a[1]
    for p, q in (
        (-dx, a[0] - lo[0]),
        (dx, hi[0] - a[0]),
        (-dy, a[1] - lo[1]),
        (dy, hi[1] - a[1]),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 > t1:
        return None
    return t0, t1


def clip_box(data: RawStreetData, centroid: Point, half_width_m: float = DEFAULT_HALF_WIDTH_M) -> RawStreetData:
    """Cut polylines to the axis-aligned box around a place centroid.

    Clipping happens in projected meters (the centroid's UTM zone); border
    crossings get an interpolated boundary vertex. Output stays in lon/lat.
    """
    if half_width_m <= 0:
        raise IngestError("half_width_m must be > 0")
    cx, cy, zone, south = geom.utm_project(centroid[0], centroid[1])
    lo = (cx - half_width_m, cy - half_width_m)
    hi = (cx + half_width_m, cy + half_width_m)

    def in_pad(p: Point) -> bool:
        # acceptance is padded so previously-cut border vertices survive a
        # second pass untouched; cuts themselves land on the exact border
        return (
            lo[0] - _BOUNDARY_EPS_M <= p[0] <= hi[0] + _BOUNDARY_EPS_M
            and lo[1] - _BOUNDARY_EPS_M <= p[1] <= hi[1] + _BOUNDARY_EPS_M
        )

    out_lines: list[list[Point]] = []
    out_tags: list[str] = []
    for line, tag in zip(data.polylines, data.highway_tags):
        proj = [geom.utm_project(lon, lat, zone, south)[:2] for lon, lat in line]
        current: list[Point] = []

        def flush() -> None:
            nonlocal current
            if len(current) >= 2:
                out_lines.append(current)
                out_tags.append(tag)
            current = []

        def cut_point(a: Point, b: Point, t: float) -> Point:
            x = a[0] + (b[0] - a[0]) * t
            y = a[1] + (b[1] - a[1]) * t
            return geom.utm_unproject(x, y, zone, south)

        for i in range(len(proj) - 1):
            a, b = proj[i], proj[i + 1]
            a_in, b_in = in_pad(a), in_pad(b)
            if a_in and b_in:
                # emitted vertices keep their source lon/lat verbatim
                if not current:
                    current = [line[i]]
                current.append(line[i + 1])
                continue
            span = _clip_segment(a, b, lo, hi)
            if span is None:
                flush()
                continue
            t0, t1 = span
            pa = line[i] if a_in or t0 == 0.0 else cut_point(a, b, t0)
            pb = line[i + 1] if b_in or t1 == 1.0 else cut_point(a, b, t1)
            if not a_in:
                flush()
                current = [pa, pb]
            else:
                if not current:
                    current = [pa]
                current.append(pb)
            if not b_in:
                flush()
        flush()
    return RawStreetData(polylines=out_lines, highway_tags=out_tags)


def overpass_query(south: float, west: float, north: float, east: float) -> str:
    """Overpass QL for highways plus town/city place nodes in a bbox."""
    bbox = f"{south},{west},{north},{east}"
    return (
        "[out:json][timeout:60];"
        f"(way[highway]({bbox});node[place~'^(town|city)$']({bbox}););"
        "out body;>;out skel qt;"
    )


def fetch_overpass(endpoint: str, query: str, timeout: float = 60.0) -> bytes:
    """POST a query string; returns the raw body to feed into parse_extract."""
    if timeout <= 0:
        raise IngestError("timeout must be > 0")
    try:
        resp = requests.post(endpoint, data=query.encode("utf-8"), timeout=timeout)
    except requests.RequestException as e:
        raise FetchError(f"fetch from {endpoint} failed: {e}", endpoint) from e
    if not (200 <= resp.status_code < 300):
        raise FetchError(
            f"fetch from {endpoint} returned HTTP {resp.status_code}",
            endpoint,
            status=resp.status_code,
        )
    return resp.content
