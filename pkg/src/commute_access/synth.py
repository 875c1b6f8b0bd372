"""Deterministic synthetic city with planted anchors, transit and demographics.

Every artifact draws from its own counter-based stream keyed by
``(seed, stream)``, so adding a stage never perturbs earlier files.
"""

from __future__ import annotations

import calendar
import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from shapely.geometry import box

from .anchors import HOME_WEIGHTS, WORK_WEIGHTS
from .geo import DEFAULT_HEX_EDGE_M, ProjectedPlane, boundary_to_geojson, build_hex_grid
from .groupstats import VARIABLES
from .ingest import parse_month

NIGHT_HOURS = np.array(sorted(h for h, w in HOME_WEIGHTS.items() if w > 0))
DAY_HOURS = np.array(sorted(h for h, w in WORK_WEIGHTS.items() if w > 0))
IDLE_HOURS = np.array([h for h in range(24) if h not in HOME_WEIGHTS and h not in WORK_WEIGHTS])

# stream ids; never renumber
_TOWERS, _USERS, _EVENTS, _TRANSIT, _SMI, _DEMOGRAPHICS = range(6)

# planted step effects: variable -> (east-half value, west-half value, north extra)
PLANTED = {
    "gender_ratio": (52.0, 50.0, 0.0),
    "immigrant": (14.0, 4.0, 0.0),
    "retired": (20.0, 9.0, 3.0),
    "minor": (16.0, 27.0, 0.0),
    "indigenous": (6.0, 6.0, 0.0),
}


@dataclass(frozen=True)
class CitySpec:
    """Knobs for :func:`generate_city`. Distances are meters."""

    seed: int = 42
    n_bts: int = 60
    n_users: int = 1000
    extent_m: float = 8000.0
    n_routes: int = 10
    noise: float = 0.2
    inactive_share: float = 0.05
    month: str = "2023-03"
    timezone: str = "America/Santiago"
    centre: tuple[float, float] = (-70.65, -33.45)
    street_spacing_m: float = 250.0
    stop_spacing_m: float = 600.0
    hex_edge_m: float = DEFAULT_HEX_EDGE_M

    def __post_init__(self):
        if self.n_bts < 2:
            raise ValueError("need at least two towers")
        if self.n_users < 1 or self.n_routes < 0:
            raise ValueError("n_users must be positive and n_routes non-negative")
        if not 0.0 <= self.noise <= 1.0 or not 0.0 <= self.inactive_share < 1.0:
            raise ValueError("noise and inactive_share must be shares")
        if not self.extent_m > 0:
            raise ValueError("extent_m must be positive")
        parse_month(self.month)


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**63 - 1), stream])))


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _towers(spec, rng):
    half = spec.extent_m / 2.0
    min_sep = 0.25 * spec.extent_m / math.sqrt(spec.n_bts)
    pts: list[tuple[float, float]] = []
    while len(pts) < spec.n_bts:
        p = rng.uniform(-0.95 * half, 0.95 * half, size=2)
        if all(math.hypot(p[0] - a, p[1] - b) >= min_sep for a, b in pts):
            pts.append((float(p[0]), float(p[1])))
    ids = [f"b{i:04d}" for i in range(spec.n_bts)]
    return ids, np.array(pts)


def _users(spec, rng, tower_xy):
    """True anchors. Homes lean west, jobs lean to the centre."""
    n = spec.n_users
    half = spec.extent_m / 2.0
    x, y = tower_xy[:, 0], tower_xy[:, 1]
    home_p = np.exp(-x / half)
    home_p /= home_p.sum()
    work_p = np.exp(-np.hypot(x, y) / (0.4 * half))
    work_p /= work_p.sum()
    homes = rng.choice(len(x), size=n, p=home_p)
    works = rng.choice(len(x), size=n, p=work_p)
    clash = np.flatnonzero(homes == works)
    while len(clash):
        works[clash] = rng.choice(len(x), size=len(clash), p=work_p)
        clash = clash[homes[clash] == works[clash]]
    active = rng.random(n) >= spec.inactive_share
    return homes, works, active


def _user_events(rng, home, work, active, n_bts, days, weekdays, noise):
    """``(day, hour, minute, second, tower)`` arrays for one user."""
    if not active:
        total = int(rng.integers(5, 2 * len(days) + 1))  # never above two per day
        day = rng.choice(days, size=total)
        hour = rng.integers(0, 24, size=total)
        tower = rng.integers(0, n_bts, size=total)
    else:
        n_night = rng.poisson(2.0, size=len(days))
        n_work = np.where(weekdays, rng.poisson(2.0, size=len(days)), 0)
        n_idle = rng.poisson(0.7, size=len(days))
        n_night[0] += 1
        n_work[np.argmax(weekdays)] += 1
        day = np.concatenate([np.repeat(days, n_night), np.repeat(days, n_work), np.repeat(days, n_idle)])
        hour = np.concatenate([rng.choice(NIGHT_HOURS, size=n_night.sum()),
                               rng.choice(DAY_HOURS, size=n_work.sum()),
                               rng.choice(IDLE_HOURS, size=n_idle.sum())])
        tower = np.concatenate([np.full(n_night.sum(), home), np.full(n_work.sum(), work),
                                rng.integers(0, n_bts, size=n_idle.sum())])
        flip = rng.random(len(tower)) < noise
        tower[flip] = rng.integers(0, n_bts, size=int(flip.sum()))
    minute = rng.integers(0, 60, size=len(day))
    second = rng.integers(0, 60, size=len(day))
    order = np.lexsort((second, minute, hour, day))
    return day[order], hour[order], minute[order], second[order], tower[order]


def _streets(spec):
    half = spec.extent_m / 2.0
    k = int(round(spec.extent_m / spec.street_spacing_m))
    coords = np.linspace(-half, half, k + 1)
    nodes, edges = [], []
    for j, yv in enumerate(coords):
        for i, xv in enumerate(coords):
            nodes.append((f"n{j}_{i}", float(xv), float(yv)))
            if i:
                edges.append((f"n{j}_{i - 1}", f"n{j}_{i}", float(coords[i] - coords[i - 1])))
            if j:
                edges.append((f"n{j - 1}_{i}", f"n{j}_{i}", float(coords[j] - coords[j - 1])))
    return nodes, edges


def _clock(s: int) -> str:
    return f"{s // 3600:02d}:{s // 60 % 60:02d}:{s % 60:02d}"


def _transit(spec, rng):
    """Straight lines across the square; even-numbered lines use frequencies."""
    half = 0.9 * spec.extent_m / 2.0
    stops, stop_times, trips, freqs, routes = [], [], [], [], []
    for r in range(spec.n_routes):
        theta = rng.uniform(0, math.pi)
        off = rng.uniform(-0.5, 0.5) * half
        d = np.array([math.cos(theta), math.sin(theta)])
        nrm = np.array([-d[1], d[0]])
        # chord of the square along direction d through offset point
        p0 = nrm * off
        with np.errstate(divide="ignore"):
            ts = [(-half - p0[k]) / d[k] for k in (0, 1) if abs(d[k]) > 1e-9] + \
                 [(half - p0[k]) / d[k] for k in (0, 1) if abs(d[k]) > 1e-9]
        ts = sorted(ts)
        t_lo, t_hi = ts[len(ts) // 2 - 1], ts[len(ts) // 2]
        n_st = max(2, int((t_hi - t_lo) // spec.stop_spacing_m) + 1)
        along = np.linspace(t_lo, t_hi, n_st)
        ids = []
        for k, t in enumerate(along):
            sid = f"s{r:02d}_{k:02d}"
            p = p0 + t * d
            stops.append((sid, float(p[0]), float(p[1])))
            ids.append(sid)
        if rng.random() < 0.5:
            ids = ids[::-1]
        route_id = f"R{r:02d}"
        routes.append(route_id)
        speed = rng.uniform(7.0, 12.0)
        hop = np.full(n_st - 1, float(np.diff(along).mean())) / speed
        dwell = 20
        headway = int(rng.choice([300, 480, 600, 720, 900]))
        first = int(6 * 3600 + 30 * 60 + rng.integers(0, headway))
        last = 9 * 3600 + 30 * 60

        def one_trip(tid, start):
            t = start
            for k, sid in enumerate(ids):
                arr = t
                dep = arr + (dwell if 0 < k < n_st - 1 else 0)
                stop_times.append((tid, _clock(arr), _clock(dep), sid, k + 1))
                if k < n_st - 1:
                    t = dep + int(round(hop[k]))

        if r % 2 == 0:
            tid = f"{route_id}_f"
            trips.append((route_id, tid, "weekday"))
            one_trip(tid, first)
            freqs.append((tid, _clock(first), _clock(last), headway))
        else:
            for j, start in enumerate(range(first, last, headway)):
                tid = f"{route_id}_{j:03d}"
                trips.append((route_id, tid, "weekday"))
                one_trip(tid, start)
        # a weekend-only trip that a weekday service day must ignore
        tid = f"{route_id}_we"
        trips.append((route_id, tid, "weekend"))
        one_trip(tid, 7 * 3600 + 5 * 60)
    return stops, routes, trips, stop_times, freqs


def _smi(x, y, half, rng):
    """Social-material index, rising to the east with mild noise."""
    return 50.0 + 30.0 * x / half + 5.0 * y / half + rng.normal(0.0, 3.0, size=len(x))


def _demographics(x, y, rng):
    out = {}
    for v, (east, west, north) in PLANTED.items():
        base = np.where(x > 0, east, west) + np.where(y > 0, north, 0.0)
        out[v] = np.clip(base + rng.normal(0.0, 1.5, size=len(x)), 0.0, 100.0)
    return out


def default_config(spec: CitySpec) -> dict:
    return {
        "paths": {"events": "events.csv", "bts": "bts.csv", "boundary": "boundary.geojson",
                  "streets": "streets", "gtfs": "gtfs", "smi": "smi.csv",
                  "demographics": "demographics.csv"},
        "study": {"month": spec.month, "timezone": spec.timezone},
        "ingest": {"naive_timestamps": True},
        "geo": {"hex_edge_m": spec.hex_edge_m, "tie_break": "min_bts_id"},
        "router": {"walk_speed_kmh": 5.0, "max_access_walk_m": 1000.0, "min_transfer_s": 0.0,
                   "window": ["07:00:00", "09:00:00"], "step_s": 600, "service_day": "tuesday"},
        "access": {"threshold_min": "auto"},
        "lisa": {"permutations": 999, "alpha": 0.05, "seed": spec.seed},
        "stats": {"l2": 1e-4, "tol": 1e-8, "max_iter": 100},
        "output": {"dir": "out"},
        "seed": spec.seed,
    }


def generate_city(spec: CitySpec, out_dir) -> dict[str, Path]:
    """Write the synthetic city bundle into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "streets").mkdir(exist_ok=True)
        (out / "gtfs").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write synthetic city to {out}: {exc}") from exc
    half = spec.extent_m / 2.0
    plane = ProjectedPlane(*spec.centre)
    written: dict[str, Path] = {}

    def put(name, text):
        p = out / name
        p.write_text(text, encoding="utf-8", newline="")
        written[name] = p

    def lonlat(x, y):
        lon, lat = plane.inverse(np.asarray(x, float), np.asarray(y, float))
        return np.atleast_1d(lon), np.atleast_1d(lat)

    boundary_xy = box(-half, -half, half, half)
    put("boundary.geojson", boundary_to_geojson(plane.inverse_geometry(boundary_xy)))

    bts_ids, bts_xy = _towers(spec, _stream(spec.seed, _TOWERS))
    lon, lat = lonlat(bts_xy[:, 0], bts_xy[:, 1])
    put("bts.csv", _csv([(b, repr(float(a)), repr(float(c))) for b, a, c in zip(bts_ids, lon, lat)],
                        ["bts_id", "lon", "lat"]))

    homes, works, active = _users(spec, _stream(spec.seed, _USERS), bts_xy)
    year, mon = parse_month(spec.month)
    n_days = calendar.monthrange(year, mon)[1]
    days = np.arange(1, n_days + 1)
    weekdays = np.array([calendar.weekday(year, mon, int(d)) < 5 for d in days])
    rng = _stream(spec.seed, _EVENTS)
    prefix = f"{year:04d}-{mon:02d}-"
    lines = ["user_id,timestamp,bts_id\n"]
    users = {}
    for u in range(spec.n_users):
        uid = f"u{u:06d}"
        day, hour, minute, second, tower = _user_events(rng, homes[u], works[u], active[u],
                                                        spec.n_bts, days, weekdays, spec.noise)
        lines.extend(f"{uid},{prefix}{d:02d}T{h:02d}:{m:02d}:{s:02d},{bts_ids[t]}\n"
                     for d, h, m, s, t in zip(day.tolist(), hour.tolist(), minute.tolist(),
                                              second.tolist(), tower.tolist()))
        users[uid] = {"home_bts": bts_ids[homes[u]], "work_bts": bts_ids[works[u]],
                      "active": bool(active[u]), "n_events": int(len(day))}
    put("events.csv", "".join(lines))

    nodes, edges = _streets(spec)
    lon, lat = lonlat([n[1] for n in nodes], [n[2] for n in nodes])
    put("streets/nodes.csv", _csv([(n[0], repr(float(a)), repr(float(b))) for n, a, b in zip(nodes, lon, lat)],
                                  ["node_id", "lon", "lat"]))
    put("streets/edges.csv", _csv([(a, b, repr(length)) for a, b, length in edges],
                                  ["from_id", "to_id", "length_m"]))

    stops, routes, trips, stop_times, freqs = _transit(spec, _stream(spec.seed, _TRANSIT))
    lon, lat = lonlat([s[1] for s in stops], [s[2] for s in stops])
    put("gtfs/stops.txt", _csv([(s[0], repr(float(b)), repr(float(a))) for s, a, b in zip(stops, lon, lat)],
                               ["stop_id", "stop_lat", "stop_lon"]))
    put("gtfs/routes.txt", _csv([(r, 3) for r in routes], ["route_id", "route_type"]))
    put("gtfs/trips.txt", _csv(trips, ["route_id", "trip_id", "service_id"]))
    put("gtfs/stop_times.txt", _csv(stop_times, ["trip_id", "arrival_time", "departure_time", "stop_id",
                                                 "stop_sequence"]))
    put("gtfs/calendar.txt", _csv([("weekday", 1, 1, 1, 1, 1, 0, 0), ("weekend", 0, 0, 0, 0, 0, 1, 1)],
                                  ["service_id", "monday", "tuesday", "wednesday", "thursday", "friday",
                                   "saturday", "sunday"]))
    put("gtfs/frequencies.txt", _csv(freqs, ["trip_id", "start_time", "end_time", "headway_secs"]))

    # pad by two edges so every analysed hex has a row
    hexes = build_hex_grid(box(-half - 2 * spec.hex_edge_m, -half - 2 * spec.hex_edge_m,
                               half + 2 * spec.hex_edge_m, half + 2 * spec.hex_edge_m), spec.hex_edge_m)
    hx = np.array([h.center[0] for h in hexes])
    hy = np.array([h.center[1] for h in hexes])
    smi = _smi(hx, hy, half, _stream(spec.seed, _SMI))
    put("smi.csv", _csv([(h.hex_id, repr(float(v))) for h, v in zip(hexes, smi)], ["hex_id", "smi"]))
    demo = _demographics(hx, hy, _stream(spec.seed, _DEMOGRAPHICS))
    put("demographics.csv", _csv([(h.hex_id, *(repr(float(demo[v][k])) for v in VARIABLES))
                                  for k, h in enumerate(hexes)], ["hex_id", *VARIABLES]))

    truth = {"spec": asdict(spec), "users": users,
             "demographic_effects": {v: {"east": e, "west": w, "north_extra": n}
                                     for v, (e, w, n) in PLANTED.items()},
             "smi": "50 + 30 x / half_extent + 5 y / half_extent + N(0, 3)",
             "routes": routes}
    put("truth.json", json.dumps(truth, sort_keys=True, indent=1) + "\n")
    put("config.json", json.dumps(default_config(spec), sort_keys=True, indent=2) + "\n")
    return written
