"""Walk graph and timetable loading/validation."""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

INF = math.inf
WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")


class NetworkError(Exception):
    """Invalid street or timetable input."""


def parse_gtfs_time(raw: str) -> int:
    """``"HH:MM:SS"`` (hours may exceed 23) -> seconds after midnight."""
    h, m, s = raw.strip().split(":")
    return int(h) * 3600 + int(m) * 60 + int(s)


def format_clock(seconds: float) -> str:
    seconds = int(round(seconds))
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"


class WalkGraph:
    """Undirected street graph in projected meters."""

    def __init__(self, node_ids, xy, edges):
        self.node_ids = list(node_ids)
        self.xy = np.asarray(xy, float).reshape(-1, 2)
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise NetworkError("duplicate street node ids")
        index = {k: i for i, k in enumerate(self.node_ids)}
        best: dict[tuple[int, int], float] = {}
        for a, b, length in edges:
            if a not in index or b not in index:
                raise NetworkError(f"street edge references unknown node: {a!r} -> {b!r}")
            if not length > 0:
                raise NetworkError(f"street edge {a!r} -> {b!r} has non-positive length {length}")
            i, j = index[a], index[b]
            if i == j:
                continue
            # parallel edges keep the shortest
            for key in ((i, j), (j, i)):
                if length < best.get(key, INF):
                    best[key] = float(length)
        keys = sorted(best)
        self.n_edges = len(keys) // 2
        mat = csr_matrix(([best[k] for k in keys], ([k[0] for k in keys], [k[1] for k in keys])),
                         shape=(n, n))
        self.graph = mat
        self._tree = cKDTree(self.xy) if n else None

    def __len__(self):
        return len(self.node_ids)

    def snap(self, x: float, y: float) -> tuple[int, float]:
        """Nearest node index and straight-line distance; ``(-1, inf)`` on an empty graph."""
        if self._tree is None:
            return -1, INF
        d, i = self._tree.query([x, y])
        return int(i), float(d)

    def distances(self, node: int, limit: float = INF) -> np.ndarray:
        # adjacency is stored in both directions
        return dijkstra(self.graph, directed=True, indices=node, limit=limit)


@dataclass
class TripRecord:
    trip_id: str
    route_id: str
    stops: tuple[int, ...]
    arr: tuple[float, ...]
    dep: tuple[float, ...]


@dataclass
class Route:
    """Trips sharing one stop pattern, ordered so none overtakes another."""

    route_id: str
    stops: np.ndarray  # stop indices along the pattern
    arr: np.ndarray  # (n_trips, n_stops) seconds
    dep: np.ndarray
    trip_ids: list[str]
    # per-position python lists for the scan loop
    dep_cols: list = field(default_factory=list, repr=False)
    arr_cols: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.dep_cols = [list(map(float, col)) for col in self.dep.T]
        self.arr_cols = [list(map(float, col)) for col in self.arr.T]
        self.stop_list = [int(s) for s in self.stops]

    @property
    def n_trips(self) -> int:
        return self.arr.shape[0]


def _validate_trip(t: TripRecord) -> None:
    if len(t.stops) < 2:
        raise NetworkError(f"trip {t.trip_id!r} has fewer than two stops")
    prev = -INF
    for k, (a, d) in enumerate(zip(t.arr, t.dep)):
        if a < prev:
            raise NetworkError(f"trip {t.trip_id!r}: arrival at stop position {k} precedes previous departure")
        if d < a:
            raise NetworkError(f"trip {t.trip_id!r}: departure before arrival at stop position {k}")
        prev = d


def _group_routes(trips: list[TripRecord]) -> list[Route]:
    patterns: dict[tuple, list[TripRecord]] = {}
    for t in trips:
        patterns.setdefault((t.route_id, t.stops), []).append(t)
    routes = []
    for (route_id, stops), group in sorted(patterns.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        group.sort(key=lambda t: (t.dep[0], t.arr[-1], t.trip_id))
        lanes: list[list[TripRecord]] = []
        for t in group:
            for lane in lanes:
                last = lane[-1]
                if all(a >= b for a, b in zip(t.arr, last.arr)) and all(a >= b for a, b in zip(t.dep, last.dep)):
                    lane.append(t)
                    break
            else:
                lanes.append([t])
        for k, lane in enumerate(lanes):
            rid = route_id if k == 0 else f"{route_id}#{k}"
            routes.append(Route(rid, np.asarray(stops, int),
                                np.array([t.arr for t in lane], float),
                                np.array([t.dep for t in lane], float),
                                [t.trip_id for t in lane]))
    return routes


class Timetable:
    """Stops, validated trips grouped into FIFO routes, and closed transfers."""

    def __init__(self, stop_ids, stop_xy, trips: list[TripRecord], transfers=()):
        self.stop_ids = list(stop_ids)
        self.stop_xy = np.asarray(stop_xy, float).reshape(-1, 2)
        n = len(self.stop_ids)
        for t in trips:
            if any(not 0 <= s < n for s in t.stops):
                raise NetworkError(f"trip {t.trip_id!r} references an unknown stop")
            _validate_trip(t)
        self.trips = list(trips)
        self.routes = _group_routes(self.trips)
        self.stop_routes: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for r, route in enumerate(self.routes):
            for pos, s in enumerate(route.stop_list):
                self.stop_routes[s].append((r, pos))
        self.transfers = _close_transfers(n, transfers)

    @property
    def n_stops(self) -> int:
        return len(self.stop_ids)


def _close_transfers(n: int, links) -> list[list[tuple[int, float]]]:
    """Shortest-path closure of directed stop-to-stop walk links."""
    adj: list[dict[int, float]] = [dict() for _ in range(n)]
    for a, b, dur in links:
        if a == b:
            continue
        if dur < 0:
            raise NetworkError("negative transfer duration")
        if dur < adj[a].get(b, INF):
            adj[a][b] = float(dur)
    out: list[list[tuple[int, float]]] = []
    for src in range(n):
        if not adj[src]:
            out.append([])
            continue
        dist = {src: 0.0}
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, w in adj[u].items():
                nd = d + w
                if nd < dist.get(v, INF):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        out.append(sorted((v, d) for v, d in dist.items() if v != src))
    return out


class Network:
    """Immutable walk graph plus timetable with walking parameters.

    Stops are tied to their nearest street node when it lies within
    ``max_access_walk_m``. Walking between stops (transfers), from an origin
    to a stop (access) and from a stop to a destination (egress) all follow
    the street graph; access and egress are capped at ``max_access_walk_m``.
    """

    def __init__(self, walk: WalkGraph, timetable: Timetable, walk_speed_kmh: float = 5.0,
                 max_access_walk_m: float = 1000.0, min_transfer_s: float = 0.0):
        if not walk_speed_kmh > 0:
            raise ValueError("walk speed must be positive")
        self.walk = walk
        self.timetable = timetable
        self.walk_speed_kmh = float(walk_speed_kmh)
        self.speed = walk_speed_kmh * 1000.0 / 3600.0  # m/s
        self.max_access_walk_m = float(max_access_walk_m)
        self.min_transfer_s = float(min_transfer_s)
        n = timetable.n_stops
        self.stop_node = np.full(n, -1, int)
        self.stop_snap = np.full(n, INF)
        for s in range(n):
            node, d = walk.snap(*timetable.stop_xy[s])
            if d <= self.max_access_walk_m:
                self.stop_node[s] = node
                self.stop_snap[s] = d

    # -- walking helpers -------------------------------------------------

    def snap(self, point) -> tuple[int, float]:
        node, d = self.walk.snap(*point)
        if node < 0 or d > self.max_access_walk_m:
            return -1, INF
        return node, d

    def node_distances(self, point) -> tuple[np.ndarray | None, float]:
        """Street distances (m) from ``point`` to every node, via its snap node."""
        node, d = self.snap(point)
        if node < 0:
            return None, INF
        return self.walk.distances(node) + d, d

    def stop_walk_m(self, dist_from_point: np.ndarray | None) -> np.ndarray:
        """Walk distance from a point to every stop given its node distances."""
        out = np.full(self.timetable.n_stops, INF)
        if dist_from_point is None:
            return out
        ok = self.stop_node >= 0
        out[ok] = dist_from_point[self.stop_node[ok]] + self.stop_snap[ok]
        return out

    def access(self, point) -> tuple[np.ndarray, np.ndarray]:
        """Stops within the access cap of ``point`` and walk seconds to them."""
        dist, _ = self.node_distances(point)
        m = self.stop_walk_m(dist)
        idx = np.flatnonzero(m <= self.max_access_walk_m)
        return idx, m[idx] / self.speed

    def walk_seconds(self, origin, dest) -> float:
        if tuple(origin) == tuple(dest):
            return 0.0
        dist, _ = self.node_distances(origin)
        node_d, snap_d = self.snap(dest)
        if dist is None or node_d < 0:
            return INF
        return float(dist[node_d] + snap_d) / self.speed


def _read_csv(path: Path, required: list[str], optional: bool = False) -> list[dict] | None:
    if not path.exists():
        if optional:
            return None
        raise NetworkError(f"missing required file {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in required if c not in cols]
        if missing:
            raise NetworkError(f"{path}: missing columns {missing}")
        return list(reader)


def read_streets(streets_dir, plane) -> WalkGraph:
    streets_dir = Path(streets_dir)
    nodes = _read_csv(streets_dir / "nodes.csv", ["node_id", "lon", "lat"])
    edges = _read_csv(streets_dir / "edges.csv", ["from_id", "to_id", "length_m"])
    ids = [r["node_id"] for r in nodes]
    if nodes:
        x, y = plane.project([float(r["lon"]) for r in nodes], [float(r["lat"]) for r in nodes])
        xy = np.column_stack([x, y])
    else:
        xy = np.zeros((0, 2))
    return WalkGraph(ids, xy, [(r["from_id"], r["to_id"], float(r["length_m"])) for r in edges])


def read_gtfs(gtfs_dir, plane, service_day: str = "tuesday") -> tuple[list[str], np.ndarray, list[TripRecord], list]:
    """Parse the GTFS subset into stops, trip records and explicit transfers.

    Only trips whose service runs on ``service_day`` are kept; entries of
    ``frequencies.txt`` are expanded into explicit trips.
    """
    gtfs_dir = Path(gtfs_dir)
    day = service_day.lower()
    if day not in WEEKDAYS:
        raise ValueError(f"unknown service day {service_day!r}")
    stops = _read_csv(gtfs_dir / "stops.txt", ["stop_id", "stop_lat", "stop_lon"])
    routes = _read_csv(gtfs_dir / "routes.txt", ["route_id"])
    trips = _read_csv(gtfs_dir / "trips.txt", ["route_id", "trip_id", "service_id"])
    stop_times = _read_csv(gtfs_dir / "stop_times.txt",
                           ["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"])
    cal = _read_csv(gtfs_dir / "calendar.txt", ["service_id", *WEEKDAYS])
    transfers = _read_csv(gtfs_dir / "transfers.txt", ["from_stop_id", "to_stop_id"], optional=True)
    freqs = _read_csv(gtfs_dir / "frequencies.txt", ["trip_id", "start_time", "end_time", "headway_secs"],
                      optional=True)

    stop_ids = [r["stop_id"] for r in stops]
    stop_index = {s: i for i, s in enumerate(stop_ids)}
    if len(stop_index) != len(stop_ids):
        raise NetworkError("duplicate stop_id in stops.txt")
    if stops:
        x, y = plane.project([float(r["stop_lon"]) for r in stops], [float(r["stop_lat"]) for r in stops])
        stop_xy = np.column_stack([x, y])
    else:
        stop_xy = np.zeros((0, 2))
    route_ids = {r["route_id"] for r in routes}
    active = {r["service_id"] for r in cal if r[day].strip() == "1"}
    known_services = {r["service_id"] for r in cal}

    trip_route: dict[str, str] = {}
    for r in trips:
        if r["route_id"] not in route_ids:
            raise NetworkError(f"trips.txt: trip {r['trip_id']!r} references unknown route {r['route_id']!r}")
        if r["service_id"] not in known_services:
            raise NetworkError(f"trips.txt: trip {r['trip_id']!r} references unknown service {r['service_id']!r}")
        if r["service_id"] in active:
            trip_route[r["trip_id"]] = r["route_id"]
    all_trips = {r["trip_id"] for r in trips}

    rows: dict[str, list] = {}
    for r in stop_times:
        tid = r["trip_id"]
        if tid not in all_trips:
            raise NetworkError(f"stop_times.txt references unknown trip {tid!r}")
        if r["stop_id"] not in stop_index:
            raise NetworkError(f"stop_times.txt: trip {tid!r} references unknown stop {r['stop_id']!r}")
        if tid not in trip_route:
            continue
        rows.setdefault(tid, []).append((int(r["stop_sequence"]), stop_index[r["stop_id"]],
                                         parse_gtfs_time(r["arrival_time"]),
                                         parse_gtfs_time(r["departure_time"])))
    records: dict[str, TripRecord] = {}
    for tid in sorted(rows):
        seq = sorted(rows[tid])
        records[tid] = TripRecord(tid, trip_route[tid], tuple(s for _, s, _, _ in seq),
                                  tuple(float(a) for _, _, a, _ in seq),
                                  tuple(float(d) for _, _, _, d in seq))

    if freqs:
        expanded: dict[str, TripRecord] = {}
        by_trip: dict[str, list] = {}
        for r in freqs:
            by_trip.setdefault(r["trip_id"], []).append(r)
        for tid, rec in records.items():
            if tid not in by_trip:
                expanded[tid] = rec
                continue
            for r in by_trip[tid]:
                start, end = parse_gtfs_time(r["start_time"]), parse_gtfs_time(r["end_time"])
                headway = int(r["headway_secs"])
                if headway <= 0:
                    raise NetworkError(f"frequencies.txt: non-positive headway for trip {tid!r}")
                for t0 in range(start, end, headway):
                    shift = t0 - rec.dep[0]
                    new_id = f"{tid}@{format_clock(t0)}"
                    expanded[new_id] = TripRecord(new_id, rec.route_id, rec.stops,
                                                  tuple(a + shift for a in rec.arr),
                                                  tuple(d + shift for d in rec.dep))
        records = expanded

    links = []
    for r in transfers or []:
        a, b = r["from_stop_id"], r["to_stop_id"]
        if a not in stop_index or b not in stop_index:
            raise NetworkError(f"transfers.txt references unknown stop {a!r} or {b!r}")
        if r.get("transfer_type", "").strip() == "3":
            continue
        dur = float(r.get("min_transfer_time") or 0.0)
        links.append((stop_index[a], stop_index[b], dur))
    return stop_ids, stop_xy, [records[k] for k in sorted(records)], links


def walk_transfer_links(walk: WalkGraph, stop_xy, speed: float, max_walk_m: float) -> list:
    """Stop-to-stop walking links up to ``max_walk_m`` along the street graph."""
    links = []
    n = len(stop_xy)
    snaps = [walk.snap(*stop_xy[s]) for s in range(n)]
    by_node: dict[int, list[int]] = {}
    for s, (node, d) in enumerate(snaps):
        if node >= 0 and d <= max_walk_m:
            by_node.setdefault(node, []).append(s)
    nodes = sorted(by_node)
    if not nodes:
        return links
    dist = dijkstra(walk.graph, directed=True, indices=nodes, limit=max_walk_m)
    for row, node in enumerate(nodes):
        for a in by_node[node]:
            da = snaps[a][1]
            for other in nodes:
                dn = dist[row, other]
                if not np.isfinite(dn):
                    continue
                for b in by_node[other]:
                    if a == b:
                        continue
                    total = da + dn + snaps[b][1]
                    if total <= max_walk_m:
                        links.append((a, b, total / speed))
    return links


def build_network(gtfs_dir, streets_dir, plane, walk_speed_kmh: float = 5.0,
                  max_access_walk_m: float = 1000.0, min_transfer_s: float = 0.0,
                  service_day: str = "tuesday", max_transfer_walk_m: float | None = None) -> Network:
    """Load and validate streets and timetable into a routable :class:`Network`."""
    walk = read_streets(streets_dir, plane)
    stop_ids, stop_xy, trips, explicit = read_gtfs(gtfs_dir, plane, service_day)
    speed = walk_speed_kmh * 1000.0 / 3600.0
    cap = max_access_walk_m if max_transfer_walk_m is None else max_transfer_walk_m
    links = walk_transfer_links(walk, stop_xy, speed, cap) + list(explicit)
    tt = Timetable(stop_ids, stop_xy, trips, links)
    return Network(walk, tt, walk_speed_kmh, max_access_walk_m, min_transfer_s)
