"""Door-to-door travel times over a morning departure window."""

from __future__ import annotations

import csv
import io
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import Network, parse_gtfs_time
from .raptor import raptor

DEFAULT_WINDOW = ("07:00:00", "09:00:00")
DEFAULT_STEP_S = 600


def departure_times(window=DEFAULT_WINDOW, step_s: int = DEFAULT_STEP_S) -> list[int]:
    """Sampled departure instants ``start, start+step, ... < end`` (seconds)."""
    start, end = (parse_gtfs_time(w) if isinstance(w, str) else int(w) for w in window)
    if step_s <= 0 or end <= start:
        raise ValueError("need step_s > 0 and a non-empty window")
    return list(range(start, end, int(step_s)))


def shortest_time(network: Network, origin, dest, window=DEFAULT_WINDOW,
                  step_s: int = DEFAULT_STEP_S) -> float:
    """Minimum walk or walk+transit minutes from ``origin`` to ``dest``.

    The minimum is taken over departures sampled every ``step_s`` seconds in
    ``window``; waiting before the sampled instant is not counted.
    Returns ``inf`` when no route exists.
    """
    origin = tuple(map(float, origin))
    dest = tuple(map(float, dest))
    if origin == dest:
        return 0.0
    dist_o, _ = network.node_distances(origin)
    if dist_o is None:
        return float("inf")
    dist_d, snap_d = network.node_distances(dest)
    if dist_d is None:
        return float("inf")
    node_d, _ = network.snap(dest)
    best = float(dist_o[node_d] + snap_d) / network.speed
    cap = network.max_access_walk_m
    acc_m = network.stop_walk_m(dist_o)
    stops = np.flatnonzero(acc_m <= cap)
    egress = network.stop_walk_m(dist_d)
    eg_ok = np.flatnonzero(egress <= cap)
    if len(stops) and len(eg_ok):
        acc_s = acc_m[stops] / network.speed
        eg_s = egress[eg_ok] / network.speed
        for t0 in departure_times(window, step_s):
            arr = raptor(network.timetable, stops, acc_s, t0, network.min_transfer_s)
            transit = float(np.min(arr[eg_ok] + eg_s)) - t0
            best = min(best, transit)
    return best / 60.0


@dataclass
class TravelTimeMatrix:
    """Minutes from each origin hexagon to each destination hexagon (``inf`` = unreachable)."""

    origins: list[str]
    destinations: list[str]
    minutes: np.ndarray

    def __post_init__(self):
        self._oi = {h: i for i, h in enumerate(self.origins)}
        self._di = {h: j for j, h in enumerate(self.destinations)}

    def get(self, origin: str, dest: str) -> float:
        return float(self.minutes[self._oi[origin], self._di[dest]])

    def row(self, origin: str) -> np.ndarray:
        return self.minutes[self._oi[origin]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["origin_hex", "dest_hex", "minutes"])
        for i, o in enumerate(self.origins):
            for j, d in enumerate(self.destinations):
                w.writerow([o, d, repr(float(self.minutes[i, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TravelTimeMatrix":
        rows = list(csv.DictReader(io.StringIO(text)))
        origins = list(dict.fromkeys(r["origin_hex"] for r in rows))
        dests = list(dict.fromkeys(r["dest_hex"] for r in rows))
        oi = {h: i for i, h in enumerate(origins)}
        di = {h: j for j, h in enumerate(dests)}
        m = np.full((len(origins), len(dests)), np.inf)
        for r in rows:
            m[oi[r["origin_hex"]], di[r["dest_hex"]]] = float(r["minutes"])
        return cls(origins, dests, m)


def _egress_matrix(network: Network, dest_xy: np.ndarray) -> np.ndarray:
    """Walk seconds from every stop to every destination (``inf`` beyond the cap)."""
    n_stops = network.timetable.n_stops
    out = np.full((n_stops, len(dest_xy)), np.inf)
    if n_stops == 0:
        return out
    cap = network.max_access_walk_m
    for j, p in enumerate(dest_xy):
        node, snap = network.snap(p)
        if node < 0:
            continue
        d = network.walk.distances(node, limit=cap) + snap
        m = network.stop_walk_m(d)
        m[m > cap] = np.inf
        out[:, j] = m / network.speed
    return out


def _dest_snaps(network: Network, dest_xy) -> tuple[np.ndarray, np.ndarray]:
    snaps = [network.snap(p) for p in dest_xy]
    return np.array([s[0] for s in snaps], int), np.array([s[1] for s in snaps], float)


def _origin_row(network: Network, origin, dest_snap, egress, deps) -> np.ndarray:
    nodes, snaps = dest_snap
    dist, _ = network.node_distances(origin)
    row = np.full(len(nodes), np.inf)
    if dist is None:
        return row
    ok = nodes >= 0
    row[ok] = (dist[nodes[ok]] + snaps[ok]) / network.speed
    stops_m = network.stop_walk_m(dist)
    acc_idx = np.flatnonzero(stops_m <= network.max_access_walk_m)
    if len(acc_idx):
        acc_s = stops_m[acc_idx] / network.speed
        useful = np.flatnonzero(np.isfinite(egress).any(axis=1))
        for t0 in deps:
            arr = raptor(network.timetable, acc_idx, acc_s, t0, network.min_transfer_s)
            live = useful[np.isfinite(arr[useful])]
            if len(live):
                transit = (arr[live, None] + egress[live]).min(axis=0) - t0
                np.minimum(row, transit, out=row)
    return row / 60.0


_WORKER: dict = {}


def _run_chunk(bounds):
    lo, hi = bounds
    w = _WORKER
    return [_origin_row(w["network"], w["origins"][i], w["dest_snap"], w["egress"], w["deps"])
            for i in range(lo, hi)]


def build_matrix(network: Network, origin_ids, origin_xy, dest_ids, dest_xy,
                 window=DEFAULT_WINDOW, step_s: int = DEFAULT_STEP_S, n_jobs: int = 1
                 ) -> TravelTimeMatrix:
    """One-to-many travel times from every origin to every destination.

    Each (origin, departure) runs a single RAPTOR search reused for all
    destinations; entries are minima over departures and over walk-only.
    Rows are computed independently, so ``n_jobs`` only changes scheduling.
    """
    origin_ids = list(origin_ids)
    dest_ids = list(dest_ids)
    origin_xy = np.asarray(origin_xy, float).reshape(-1, 2)
    dest_xy = np.asarray(dest_xy, float).reshape(-1, 2)
    deps = departure_times(window, step_s)
    egress = _egress_matrix(network, dest_xy)
    dest_snap = _dest_snaps(network, dest_xy)
    n = len(origin_ids)
    if n_jobs <= 1 or n < 2:
        rows = [_origin_row(network, origin_xy[i], dest_snap, egress, deps) for i in range(n)]
    else:
        _WORKER.update(network=network, origins=origin_xy, dest_snap=dest_snap, egress=egress, deps=deps)
        n_chunks = min(n, n_jobs * 4)
        edges = np.linspace(0, n, n_chunks + 1).astype(int)
        chunks = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        ctx = multiprocessing.get_context("fork")
        try:
            with ProcessPoolExecutor(max_workers=n_jobs, mp_context=ctx) as pool:
                rows = [r for part in pool.map(_run_chunk, chunks) for r in part]
        finally:
            _WORKER.clear()
    minutes = np.vstack(rows) if rows else np.zeros((0, len(dest_ids)))
    dpos = {h: j for j, h in enumerate(dest_ids)}
    for i, h in enumerate(origin_ids):
        if h in dpos:
            minutes[i, dpos[h]] = 0.0
    return TravelTimeMatrix(origin_ids, dest_ids, minutes)
