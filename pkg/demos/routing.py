"""Door-to-door times on a toy corridor: one bus line crossing a street grid.

Shows walk-only versus walk + transit, the effect of the departure window,
and a small travel-time matrix.
"""

import numpy as np

from commute_access.router import (Network, Timetable, TripRecord, WalkGraph, build_matrix,
                                   shortest_time)
from commute_access.router.network import walk_transfer_links

# 9 x 9 street grid, 400 m blocks
side, block = 9, 400.0
ids = [f"n{i}_{j}" for i in range(side) for j in range(side)]
xy = np.array([(i * block, j * block) for i in range(side) for j in range(side)])
edges = []
for i in range(side):
    for j in range(side):
        if i + 1 < side:
            edges.append((f"n{i}_{j}", f"n{i + 1}_{j}", block))
        if j + 1 < side:
            edges.append((f"n{i}_{j}", f"n{i}_{j + 1}", block))
walk = WalkGraph(ids, xy, edges)

# an east-west line along y = 1600 with a bus every 10 minutes, 2 min between stops
stop_xy = np.array([(x, 1600.0) for x in np.arange(0, 3201, 800)])
stops = tuple(range(len(stop_xy)))
trips = []
for k, start in enumerate(range(7 * 3600, 9 * 3600, 600)):
    times = tuple(float(start + 120 * s) for s in stops)
    trips.append(TripRecord(f"east_{k}", "east", stops, times, times))
links = walk_transfer_links(walk, stop_xy, 5.0 / 3.6, 1000.0)
net = Network(walk, Timetable([f"s{i}" for i in stops], stop_xy, trips, links), 5.0, 1000.0)

a, b = (0.0, 1600.0), (3200.0, 1600.0)
print(f"walk only        {net.walk_seconds(a, b) / 60:5.1f} min")
for window, step in ((("07:00:00", "07:00:01"), 1), (("07:05:00", "07:05:01"), 1), (("07:00:00", "08:00:00"), 60)):
    t = shortest_time(net, a, b, window, step)
    print(f"depart {window[0]}-{window[1]} step {step:>2d}s  {t:5.1f} min")

pts = np.array([(0.0, 1600.0), (1600.0, 0.0), (3200.0, 1600.0), (1600.0, 3200.0)])
names = ["west", "south", "east", "north"]
m = build_matrix(net, names, pts, names, pts, ("07:00:00", "08:00:00"), 300)
print("\nminutes (rows: origin)")
print("       " + " ".join(f"{n:>6s}" for n in names))
for n, row in zip(names, m.minutes):
    print(f"{n:>6s} " + " ".join(f"{v:6.1f}" for v in row))
