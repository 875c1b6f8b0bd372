"""Round-based earliest-arrival transit search (RAPTOR)."""

from __future__ import annotations

from bisect import bisect_left
from math import inf

import numpy as np

from .network import Timetable


def raptor(tt: Timetable, access_stops, access_s, t0: float, min_transfer_s: float = 0.0,
           max_rounds: int | None = None) -> np.ndarray:
    """Earliest arrival time (seconds) at every stop when leaving at ``t0``.

    ``access_stops``/``access_s`` give the stops reachable on foot from the
    origin and the walk time to each. Each round allows one more boarding; a
    trip can be boarded at a stop when the previous round's arrival there
    plus ``min_transfer_s`` is no later than its departure. After every
    round the (closed) transfer links are relaxed once from stops reached by
    vehicle; walking from the origin never chains into a transfer, so the
    access cap stays strict. Rounds continue until no stop improves.
    """
    n = tt.n_stops
    prev = [inf] * n
    for s, a in zip(access_stops, access_s):
        s = int(s)
        t = t0 + float(a)
        if t < prev[s]:
            prev[s] = t
    best = list(prev)          # earliest arrival by any means
    best_ride = [inf] * n      # earliest arrival on board a vehicle
    marked = {s for s in range(n) if prev[s] < inf}
    routes = tt.routes
    stop_routes = tt.stop_routes
    transfers = tt.transfers
    k = 0
    while marked and (max_rounds is None or k < max_rounds):
        k += 1
        queue: dict[int, int] = {}
        for s in marked:
            for r, pos in stop_routes[s]:
                if pos < queue.get(r, 1 << 60):
                    queue[r] = pos
        cur = list(prev)
        marked = set()
        rode: list[int] = []
        for r in sorted(queue):
            route = routes[r]
            stops = route.stop_list
            dep_cols = route.dep_cols
            arr_cols = route.arr_cols
            n_trips = route.n_trips
            trip = -1
            for i in range(queue[r], len(stops)):
                s = stops[i]
                if trip >= 0:
                    a = arr_cols[i][trip]
                    if a < best_ride[s]:
                        best_ride[s] = a
                        rode.append(s)
                        if a < best[s]:
                            best[s] = a
                            cur[s] = a
                            marked.add(s)
                ready = prev[s]
                if ready < inf:
                    ready += min_transfer_s
                    if trip < 0 or ready <= dep_cols[i][trip]:
                        t = bisect_left(dep_cols[i], ready)
                        if t < n_trips and (trip < 0 or t < trip):
                            trip = t
        for s in sorted(set(rode)):
            base = best_ride[s]
            for s2, dur in transfers[s]:
                a = base + dur
                if a < best[s2]:
                    best[s2] = a
                    cur[s2] = a
                    marked.add(s2)
        prev = cur
    return np.asarray(best, float)
