"""Independent reference router: Dijkstra on an explicit time-expanded graph.

Walking is recomputed with networkx and brute-force nearest-node snapping;
it does not touch the RAPTOR code path.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_left

import networkx as nx
import numpy as np

INF = math.inf


class TimeExpandedOracle:
    def __init__(self, network):
        self.net = network
        walk = network.walk
        self.speed = network.speed
        self.cap = network.max_access_walk_m
        self.slack = network.min_transfer_s
        self.node_xy = walk.xy
        self.g = nx.Graph()
        self.g.add_nodes_from(range(len(walk.node_ids)))
        coo = walk.graph.tocoo()
        for i, j, w in zip(coo.row, coo.col, coo.data):
            if i < j:
                self.g.add_edge(int(i), int(j), weight=float(w))
        tt = network.timetable
        self.trips = tt.trips
        n = tt.n_stops
        self.stop_snap = []
        for s in range(n):
            node, d = self._snap(tt.stop_xy[s])
            self.stop_snap.append((node, d) if d <= self.cap else (-1, INF))
        self.transfers = self._transfers(n)
        # departure events per stop, sorted by time
        self.deps_at: list[list[tuple[float, int, int]]] = [[] for _ in range(n)]
        for k, t in enumerate(self.trips):
            for i, s in enumerate(t.stops[:-1]):
                self.deps_at[s].append((t.dep[i], k, i))
        for lst in self.deps_at:
            lst.sort()
        self.dep_times = [[e[0] for e in lst] for lst in self.deps_at]

    def _snap(self, p):
        if len(self.node_xy) == 0:
            return -1, INF
        d = np.hypot(self.node_xy[:, 0] - p[0], self.node_xy[:, 1] - p[1])
        i = int(np.argmin(d))
        return i, float(d[i])

    def _transfers(self, n):
        base = nx.DiGraph()
        base.add_nodes_from(range(n))
        for a in range(n):
            na, da = self.stop_snap[a]
            if na < 0:
                continue
            lengths = nx.single_source_dijkstra_path_length(self.g, na, weight="weight")
            for b in range(n):
                nb, db = self.stop_snap[b]
                if b == a or nb < 0 or nb not in lengths:
                    continue
                tot = da + lengths[nb] + db
                if tot <= self.cap:
                    base.add_edge(a, b, weight=tot / self.speed)
        out = []
        for a in range(n):
            lengths = nx.single_source_dijkstra_path_length(base, a, weight="weight")
            out.append([(b, d) for b, d in lengths.items() if b != a])
        return out

    def _walk_from(self, p):
        node, d = self._snap(p)
        if node < 0 or d > self.cap:
            return None
        lengths = nx.single_source_dijkstra_path_length(self.g, node, weight="weight")
        return {k: v + d for k, v in lengths.items()}

    def _stop_walk(self, lengths):
        out = {}
        if lengths is None:
            return out
        for s, (node, d) in enumerate(self.stop_snap):
            if node >= 0 and node in lengths:
                m = lengths[node] + d
                if m <= self.cap:
                    out[s] = m / self.speed
        return out

    def _first_dep(self, stop, t):
        """Index of the first departure event at ``stop`` no earlier than ``t``."""
        i = bisect_left(self.dep_times[stop], t)
        return i if i < len(self.deps_at[stop]) else None

    def earliest_arrivals(self, origin, t0):
        """Dijkstra over event nodes; returns {('arr', k, i): time}."""
        lengths = self._walk_from(origin)
        access = self._stop_walk(lengths)
        dist: dict = {}
        heap = []

        def push(node, t):
            if t < dist.get(node, INF):
                dist[node] = t
                heapq.heappush(heap, (t, node))

        # ("wait", stop, j): standing at ``stop`` before its j-th departure event
        for s, a in access.items():
            j = self._first_dep(s, t0 + a + self.slack)
            if j is not None:
                push(("wait", s, j), self.deps_at[s][j][0])
        arrivals = {}
        while heap:
            t, node = heapq.heappop(heap)
            if t > dist[node]:
                continue
            kind, k, i = node
            if kind == "wait":
                s, j = k, i
                tdep, kk, ii = self.deps_at[s][j]
                push(("dep", kk, ii), tdep)
                if j + 1 < len(self.deps_at[s]):
                    push(("wait", s, j + 1), self.deps_at[s][j + 1][0])
                continue
            trip = self.trips[k]
            s = trip.stops[i]
            if kind == "dep":
                push(("arr", k, i + 1), trip.arr[i + 1])
            else:
                arrivals[node] = t
                if i < len(trip.stops) - 1:
                    push(("dep", k, i), trip.dep[i])  # stay on board
                j = self._first_dep(s, t + self.slack)
                if j is not None:
                    push(("wait", s, j), self.deps_at[s][j][0])
                for s2, dur in self.transfers[s]:
                    j = self._first_dep(s2, t + dur + self.slack)
                    if j is not None:
                        push(("wait", s2, j), self.deps_at[s2][j][0])
        return lengths, arrivals

    def travel_minutes(self, origin, dests, t0):
        """Minutes from ``origin`` leaving at ``t0`` to each destination point."""
        lengths, arrivals = self.earliest_arrivals(origin, t0)
        stop_arr: dict[int, float] = {}
        for (_, k, i), t in arrivals.items():
            s = self.trips[k].stops[i]
            if t < stop_arr.get(s, INF):
                stop_arr[s] = t
            for s2, dur in self.transfers[s]:
                if t + dur < stop_arr.get(s2, INF):
                    stop_arr[s2] = t + dur
        out = []
        for d in dests:
            if tuple(map(float, origin)) == tuple(map(float, d)):
                out.append(0.0)
                continue
            best = INF
            node, snap = self._snap(d)
            if lengths is not None and snap <= self.cap and node in lengths:
                best = (lengths[node] + snap) / self.speed
            egress = self._stop_walk(self._walk_from(d))
            for s, e in egress.items():
                if s in stop_arr:
                    best = min(best, stop_arr[s] + e - t0)
            out.append(best / 60.0)
        return out
