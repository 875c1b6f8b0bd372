import hashlib
import json

import pytest

from anchor_oracle import brute_force_anchors
from commute_access.anchors import detect_anchors
from commute_access.geo import ProjectedPlane, read_boundary
from commute_access.groupstats import read_demographics
from commute_access.ingest import ParseReport, bin_hourly, filter_active_users, parse_events, read_registry
from commute_access.router import build_network
from commute_access.synth import CitySpec, generate_city


def digests(paths):
    return {k: hashlib.sha256(p.read_bytes()).hexdigest() for k, p in paths.items()}


def recover(root, spec):
    registry = read_registry(root / "bts.csv")
    report = ParseReport()
    counts = bin_hourly(parse_events(root / "events.csv", registry, spec.month, spec.timezone, report=report))
    active = filter_active_users(counts)
    pairs, _ = detect_anchors(counts, active)
    truth = json.loads((root / "truth.json").read_text())["users"]
    hits = sum(truth[p.user_id]["home_bts"] == p.home_bts and truth[p.user_id]["work_bts"] == p.work_bts
               for p in pairs)
    return pairs, active, truth, hits, report, registry


def test_byte_identical_across_runs(tmp_path):
    spec = CitySpec(seed=11, n_bts=15, n_users=150, extent_m=3000.0, n_routes=3)
    a = digests(generate_city(spec, tmp_path / "a"))
    b = digests(generate_city(spec, tmp_path / "b"))
    assert a == b and "events.csv" in a and "gtfs/stop_times.txt" in a
    c = digests(generate_city(CitySpec(seed=12, n_bts=15, n_users=150, extent_m=3000.0, n_routes=3),
                              tmp_path / "c"))
    assert c["events.csv"] != a["events.csv"]


def test_noise_free_recovery_is_exact(tmp_path):
    spec = CitySpec(seed=5, n_bts=25, n_users=400, extent_m=4000.0, n_routes=3, noise=0.0)
    generate_city(spec, tmp_path)
    pairs, active, truth, hits, report, _ = recover(tmp_path, spec)
    assert active == {u for u, t in truth.items() if t["active"]}
    assert len(pairs) == len(active) and hits == len(pairs)
    assert sum(report.dropped.values()) == 0


def test_noisy_recovery_matches_oracle(small_city):
    root, spec = small_city
    pairs, _, truth, hits, report, registry = recover(root, spec)
    ref, _ = brute_force_anchors(root / "events.csv", set(registry.ids), 2023, 3)
    ref_hits = sum(truth[u]["home_bts"] == h and truth[u]["work_bts"] == w for u, (h, w, _, _) in ref.items())
    assert hits == ref_hits and len(pairs) == len(ref)
    assert hits / len(pairs) > 0.95
    assert sum(report.dropped.values()) == 0 and report.malformed_lines == []
    assert report.rows == sum(t["n_events"] for t in truth.values())


def test_inactive_share(small_city):
    root, spec = small_city
    truth = json.loads((root / "truth.json").read_text())["users"]
    share = sum(not t["active"] for t in truth.values()) / len(truth)
    assert share == pytest.approx(spec.inactive_share, abs=0.04)
    assert all(t["n_events"] <= 2 * 31 for t in truth.values() if not t["active"])


def test_transit_and_tables_load(small_city):
    root, spec = small_city
    plane = ProjectedPlane.for_boundary(read_boundary(root / "boundary.geojson"))
    net = build_network(root / "gtfs", root / "streets", plane)
    assert net.timetable.n_stops > 0
    demo = read_demographics(root / "demographics.csv")
    assert all(0 <= v <= 100 for row in demo.values() for v in row.values())
    cfg = json.loads((root / "config.json").read_text())
    assert cfg["seed"] == spec.seed and (root / cfg["paths"]["gtfs"]).is_dir()


def test_spec_validation():
    with pytest.raises(ValueError):
        CitySpec(n_bts=1)
    with pytest.raises(ValueError):
        CitySpec(noise=1.5)
