"""Planar geometry: local projection, tower Voronoi cells, hexagon grid.

Tower coverage is approximated by Voronoi cells clipped to the study
boundary. The boundary is tiled with a regular pointy-top hexagon lattice
(axial ``q:r`` ids); each hexagon goes to the cell covering most of its area
and every tower's user mass is split evenly over its hexagons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import Polygon, mapping, shape
from shapely.strtree import STRtree

METERS_PER_DEGREE = 111_320.0
SQRT3 = math.sqrt(3.0)
DEFAULT_HEX_EDGE_M = 174.0

# axial offsets of the six edge-sharing neighbours
HEX_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


class GeoError(Exception):
    pass


class ProjectedPlane:
    """Equirectangular projection about a fixed origin, in meters.

    Parameters
    ----------
    origin_lon, origin_lat : float
        Projection origin (usually the study-area centroid).
    bbox : tuple, optional
        ``(min_lon, min_lat, max_lon, max_lat)`` of the study area. Points
        farther than ``pad_m`` outside it are rejected.
    """

    def __init__(self, origin_lon: float, origin_lat: float, bbox=None, pad_m: float = 10_000.0):
        self.origin_lon = float(origin_lon)
        self.origin_lat = float(origin_lat)
        self.ky = METERS_PER_DEGREE
        self.kx = METERS_PER_DEGREE * math.cos(math.radians(self.origin_lat))
        if bbox is None:
            self.limits = None
        else:
            x0, y0 = self._fwd(bbox[0], bbox[1])
            x1, y1 = self._fwd(bbox[2], bbox[3])
            self.limits = (x0 - pad_m, y0 - pad_m, x1 + pad_m, y1 + pad_m)

    @classmethod
    def for_boundary(cls, boundary_lonlat) -> "ProjectedPlane":
        c = boundary_lonlat.centroid
        return cls(c.x, c.y, boundary_lonlat.bounds)

    def _fwd(self, lon, lat):
        return ((np.asarray(lon, float) - self.origin_lon) * self.kx,
                (np.asarray(lat, float) - self.origin_lat) * self.ky)

    def project(self, lon, lat):
        x, y = self._fwd(lon, lat)
        if self.limits is not None:
            x0, y0, x1, y1 = self.limits
            bad = (x < x0) | (x > x1) | (y < y0) | (y > y1)
            if np.any(bad):
                raise GeoError("point(s) outside the padded study bounding box")
        if x.ndim == 0:
            return float(x), float(y)
        return x, y

    def inverse(self, x, y):
        lon = np.asarray(x, float) / self.kx + self.origin_lon
        lat = np.asarray(y, float) / self.ky + self.origin_lat
        if lon.ndim == 0:
            return float(lon), float(lat)
        return lon, lat

    def project_geometry(self, geom):
        return shapely.transform(geom, lambda xy: np.column_stack(self.project(xy[:, 0], xy[:, 1])))

    def inverse_geometry(self, geom):
        return shapely.transform(geom, lambda xy: np.column_stack(self.inverse(xy[:, 0], xy[:, 1])))


def read_boundary(path):
    """Load a single Polygon/MultiPolygon (WGS84) from a GeoJSON file."""
    data = json.loads(Path(path).read_text())
    if data.get("type") == "FeatureCollection":
        feats = data["features"]
        if len(feats) != 1:
            raise GeoError(f"{path}: expected exactly one boundary feature, got {len(feats)}")
        data = feats[0]
    if data.get("type") == "Feature":
        data = data["geometry"]
    geom = shape(data)
    if geom.geom_type not in ("Polygon", "MultiPolygon") or geom.is_empty:
        raise GeoError(f"{path}: boundary must be a Polygon or MultiPolygon")
    if not geom.is_valid:
        raise GeoError(f"{path}: boundary polygon is invalid")
    return geom


# --------------------------------------------------------------------------
# Voronoi cells by half-plane clipping


@dataclass(frozen=True)
class VoronoiCell:
    bts_id: str
    site: tuple[float, float]
    polygon: object  # shapely Polygon / MultiPolygon in projected meters

    @property
    def area(self) -> float:
        return self.polygon.area


def _clip_halfplane(poly: list[tuple[float, float]], nx: float, ny: float, c: float):
    """Keep the part of convex ``poly`` where ``nx*x + ny*y <= c``."""
    out = []
    n = len(poly)
    for i in range(n):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % n]
        dp = nx * px + ny * py - c
        dq = nx * qx + ny * qy - c
        if dp <= 0:
            out.append((px, py))
        if (dp < 0 < dq) or (dq < 0 < dp):
            t = dp / (dp - dq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def voronoi(ids, xy, boundary) -> list[VoronoiCell]:
    """Voronoi cells of the sites ``xy`` (projected) clipped to ``boundary``.

    Each cell starts as a box around the boundary and is cut by the
    bisector half-plane of every other site, nearest first, stopping once
    the remaining bisectors lie beyond the cell's farthest vertex.
    """
    ids = list(ids)
    xy = np.asarray(xy, float).reshape(-1, 2)
    if len(ids) != len(xy) or len(ids) == 0:
        raise GeoError("voronoi needs at least one site and one id per site")
    seen: dict[tuple[float, float], str] = {}
    dups = []
    for b, (x, y) in zip(ids, xy):
        key = (float(x), float(y))
        if key in seen:
            dups.append((seen[key], b))
        else:
            seen[key] = b
    if dups:
        raise GeoError(f"duplicate projected sites: {dups}")

    bx0, by0, bx1, by1 = boundary.bounds
    sx0, sy0 = xy.min(axis=0)
    sx1, sy1 = xy.max(axis=0)
    x0, y0 = min(bx0, sx0), min(by0, sy0)
    x1, y1 = max(bx1, sx1), max(by1, sy1)
    pad = 0.1 * max(x1 - x0, y1 - y0) + 1.0
    box = [(x0 - pad, y0 - pad), (x1 + pad, y0 - pad), (x1 + pad, y1 + pad), (x0 - pad, y1 + pad)]

    prepared = boundary
    shapely.prepare(prepared)
    cells = []
    for i, b in enumerate(ids):
        sx, sy = xy[i]
        d = np.hypot(xy[:, 0] - sx, xy[:, 1] - sy)
        order = np.argsort(d, kind="stable")
        poly = box
        for j in order:
            if j == i:
                continue
            reach = max(math.hypot(px - sx, py - sy) for px, py in poly)
            if d[j] > 2.0 * reach:
                break
            ox, oy = xy[j]
            nx, ny = ox - sx, oy - sy
            c = nx * (sx + ox) / 2.0 + ny * (sy + oy) / 2.0
            poly = _clip_halfplane(poly, nx, ny, c)
            if len(poly) < 3:
                break
        raw = Polygon(poly) if len(poly) >= 3 else Polygon()
        clipped = shapely.intersection(raw, prepared) if not raw.is_empty else raw
        cells.append(VoronoiCell(b, (float(sx), float(sy)), clipped))
    return cells


# --------------------------------------------------------------------------
# Hexagon lattice


@dataclass(frozen=True)
class HexCell:
    hex_id: str
    q: int
    r: int
    center: tuple[float, float]
    edge_m: float
    assigned_bts: str | None = None
    user_share: float = 0.0
    opportunity_share: float = 0.0

    @property
    def polygon(self) -> Polygon:
        return Polygon(hex_vertices(self.center, self.edge_m))

    @property
    def area(self) -> float:
        return hex_area(self.edge_m)


def hex_area(edge_m: float) -> float:
    return 1.5 * SQRT3 * edge_m * edge_m


def hex_center(q: int, r: int, edge_m: float) -> tuple[float, float]:
    return edge_m * SQRT3 * (q + r / 2.0), edge_m * 1.5 * r


def hex_vertices(center, edge_m: float) -> list[tuple[float, float]]:
    cx, cy = center
    return [(cx + edge_m * math.cos(math.radians(30 + 60 * k)),
             cy + edge_m * math.sin(math.radians(30 + 60 * k))) for k in range(6)]


def hex_id(q: int, r: int) -> str:
    return f"{q}:{r}"


def parse_hex_id(hid: str) -> tuple[int, int]:
    q, r = hid.split(":")
    return int(q), int(r)


def point_to_hex(x: float, y: float, edge_m: float) -> tuple[int, int]:
    """Axial coordinates of the lattice hexagon containing ``(x, y)``."""
    qf = (SQRT3 / 3.0 * x - y / 3.0) / edge_m
    rf = (2.0 / 3.0 * y) / edge_m
    sf = -qf - rf
    q, r, s = round(qf), round(rf), round(sf)
    dq, dr, ds = abs(q - qf), abs(r - rf), abs(s - sf)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return int(q), int(r)


def build_hex_grid(boundary, edge_m: float = DEFAULT_HEX_EDGE_M) -> list[HexCell]:
    """All lattice hexagons whose interior overlaps ``boundary``, sorted by ``(r, q)``."""
    if not edge_m > 0:
        raise ValueError("edge_m must be positive")
    x0, y0, x1, y1 = boundary.bounds
    r_lo = math.floor(y0 / (1.5 * edge_m)) - 1
    r_hi = math.ceil(y1 / (1.5 * edge_m)) + 1
    qs, rs = [], []
    for r in range(r_lo, r_hi + 1):
        q_lo = math.floor(x0 / (SQRT3 * edge_m) - r / 2.0) - 1
        q_hi = math.ceil(x1 / (SQRT3 * edge_m) - r / 2.0) + 1
        for q in range(q_lo, q_hi + 1):
            qs.append(q)
            rs.append(r)
    qs = np.asarray(qs)
    rs = np.asarray(rs)
    cx = edge_m * SQRT3 * (qs + rs / 2.0)
    cy = edge_m * 1.5 * rs
    ang = np.radians(30.0 + 60.0 * np.arange(6))
    ring = np.stack([cx[:, None] + edge_m * np.cos(ang), cy[:, None] + edge_m * np.sin(ang)], axis=-1)
    polys = shapely.polygons(ring)
    shapely.prepare(boundary)
    hit = shapely.intersects(polys, boundary)
    overlap = np.zeros(len(polys))
    overlap[hit] = shapely.area(shapely.intersection(polys[hit], boundary))
    keep = np.flatnonzero(overlap > 0)
    return [HexCell(hex_id(int(qs[k]), int(rs[k])), int(qs[k]), int(rs[k]),
                    (float(cx[k]), float(cy[k])), float(edge_m)) for k in keep]


def assign_hexes(hexes, cells, rel_tie_tol: float = 1e-9) -> tuple[list[HexCell], int]:
    """Give each hexagon the cell covering the largest part of it.

    Returns the assigned hexagons and the number dropped for overlapping no
    cell. Overlap ties (within ``rel_tie_tol`` of the hex area) go to the
    smallest tower id.
    """
    cells = list(cells)
    geoms = [c.polygon for c in cells]
    tree = STRtree(geoms)
    out = []
    dropped = 0
    for h in hexes:
        hp = h.polygon
        cand = tree.query(hp, predicate="intersects")
        if len(cand) == 0:
            dropped += 1
            continue
        areas = shapely.area(shapely.intersection(hp, [geoms[k] for k in cand]))
        best = areas.max()
        if best <= 0:
            dropped += 1
            continue
        tol = rel_tie_tol * h.area
        winner = min(cells[k].bts_id for k, a in zip(cand, areas) if a >= best - tol)
        out.append(replace(h, assigned_bts=winner))
    return out, dropped


def disaggregate(hexes, home_counts: dict[str, float], work_counts: dict[str, float] | None = None
                 ) -> list[HexCell]:
    """Split each tower's home and work user totals evenly over its hexagons."""
    work_counts = work_counts or {}
    per_tower: dict[str, int] = {}
    for h in hexes:
        per_tower[h.assigned_bts] = per_tower.get(h.assigned_bts, 0) + 1
    for label, counts in (("home", home_counts), ("work", work_counts)):
        orphans = sorted(b for b, n in counts.items() if n > 0 and b not in per_tower)
        if orphans:
            raise GeoError(f"towers with {label} users but no hexagons: {orphans}")
    return [replace(h,
                    user_share=home_counts.get(h.assigned_bts, 0) / per_tower[h.assigned_bts],
                    opportunity_share=work_counts.get(h.assigned_bts, 0) / per_tower[h.assigned_bts])
            for h in hexes]


def hexes_to_geojson(hexes, plane: ProjectedPlane, properties: dict[str, dict] | None = None) -> str:
    """Serialize hexagons as a WGS84 FeatureCollection (deterministic text)."""
    features = []
    for h in hexes:
        xs, ys = zip(*hex_vertices(h.center, h.edge_m))
        lon, lat = plane.inverse(np.asarray(xs), np.asarray(ys))
        ring = [[float(a), float(b)] for a, b in zip(lon, lat)]
        ring.append(ring[0])
        props = {"hex_id": h.hex_id, "assigned_bts": h.assigned_bts,
                 "user_share": h.user_share, "opportunity_share": h.opportunity_share}
        if properties is not None:
            props = properties.get(h.hex_id, {"hex_id": h.hex_id})
        features.append({"type": "Feature", "properties": props,
                         "geometry": {"type": "Polygon", "coordinates": [ring]}})
    return json.dumps({"type": "FeatureCollection", "features": features}, sort_keys=True) + "\n"


def boundary_to_geojson(boundary_lonlat) -> str:
    return json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {}, "geometry": mapping(boundary_lonlat)}]}, sort_keys=True) + "\n"
