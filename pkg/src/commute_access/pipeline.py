"""Staged, cached execution of the full analysis with a run manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import pickle
import platform
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .access import (HexMetrics, bivariate_quartiles, commute_stats, cumulative_access, gini,
                     hex_metrics_to_csv, palma_ratio, scatter_to_csv)
from .anchors import anchors_to_csv, detect_anchors, rejected_to_csv
from .config import config_hash
from .geo import (ProjectedPlane, assign_hexes, build_hex_grid, disaggregate, hexes_to_geojson,
                  read_boundary, voronoi)
from .groupstats import cluster_composition_report, read_demographics
from .ingest import ParseReport, bin_hourly, filter_active_users, parse_events, read_registry
from .router import build_matrix, build_network
from .spatial import bivariate_lisa, build_weights, lisa_properties

logger = logging.getLogger(__name__)

STAGES = ("ingest", "anchors", "grid", "matrix", "access", "lisa", "stats")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def sha256_path(path) -> str:
    """Content hash of a file, or of every file under a directory (by relative name)."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(p.relative_to(path).as_posix().encode() + b"\0")
            h.update(hashlib.sha256(p.read_bytes()).digest())
    else:
        with path.open("rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    return h.hexdigest()


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:32]


def _versions() -> dict:
    import scipy
    import shapely
    return {"commute_access": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "shapely": shapely.__version__}


def _read_smi(path) -> dict[str, float]:
    rows = csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    if rows.fieldnames is None or not {"hex_id", "smi"} <= set(rows.fieldnames):
        raise ValueError(f"{path}: expected columns hex_id,smi")
    return {r["hex_id"]: float(r["smi"]) for r in rows}


# --------------------------------------------------------------------------
# stage bodies: each takes the config and upstream results, returns a result


def _ingest(cfg, up):
    p = cfg["paths"]
    registry = read_registry(p["bts"])
    report = ParseReport()
    events = parse_events(p["events"], registry, cfg["study"]["month"], cfg["study"]["timezone"],
                          cfg["ingest"]["naive_timestamps"], report)
    counts = bin_hourly(events, month=cfg["study"]["month"])
    active = filter_active_users(counts)
    return {"registry": registry, "counts": counts, "active": sorted(active),
            "report": {"rows": report.rows, "kept": report.kept, "dropped": dict(sorted(report.dropped.items())),
                       "malformed_lines": report.malformed_lines[:100]}}


def _anchors(cfg, up):
    pairs, rejected = detect_anchors(up["ingest"]["counts"], up["ingest"]["active"])
    return {"pairs": pairs, "rejected": rejected}


def _grid(cfg, up):
    registry = up["ingest"]["registry"]
    boundary_ll = read_boundary(cfg["paths"]["boundary"])
    plane = ProjectedPlane.for_boundary(boundary_ll)
    boundary = plane.project_geometry(boundary_ll)
    x, y = plane.project(np.asarray(registry.lon), np.asarray(registry.lat))
    cells = voronoi(registry.ids, np.column_stack([x, y]), boundary)
    hexes = build_hex_grid(boundary, cfg["geo"]["hex_edge_m"])
    hexes, dropped = assign_hexes(hexes, cells)
    pairs = up["anchors"]["pairs"]
    homes = Counter(a.home_bts for a in pairs)
    works = Counter(a.work_bts for a in pairs)
    hexes = disaggregate(hexes, dict(homes), dict(works))
    return {"plane": plane, "hexes": hexes, "dropped_hexes": dropped}


def _matrix(cfg, up, n_jobs):
    r = cfg["router"]
    plane = up["grid"]["plane"]
    net = build_network(cfg["paths"]["gtfs"], cfg["paths"]["streets"], plane, r["walk_speed_kmh"],
                        r["max_access_walk_m"], r["min_transfer_s"], r["service_day"])
    hexes = up["grid"]["hexes"]
    origins = [h for h in hexes if h.user_share > 0]
    dests = [h for h in hexes if h.opportunity_share > 0]
    m = build_matrix(net, [h.hex_id for h in origins], [h.center for h in origins],
                     [h.hex_id for h in dests], [h.center for h in dests],
                     tuple(r["window"]), int(r["step_s"]), n_jobs=n_jobs)
    return {"matrix": m, "n_routes": len(net.timetable.routes), "n_stops": net.timetable.n_stops}


def _access(cfg, up):
    hexes = up["grid"]["hexes"]
    matrix = up["matrix"]["matrix"]
    stats = commute_stats(up["anchors"]["pairs"], hexes, matrix)
    if stats.total_weight <= 0:
        raise ValueError("no commuter has a reachable home/work pair")
    T = cfg["access"]["threshold_min"]
    T = stats.citywide_mean if T == "auto" else float(T)
    opp = {h.hex_id: h.opportunity_share for h in hexes}
    total_opp = sum(opp.values())
    ids = list(stats.hex_mean)
    coa = cumulative_access(matrix, opp, T, origins=ids)
    smi_all = _read_smi(cfg["paths"]["smi"])
    missing = [h for h in ids if h not in smi_all]
    if missing:
        raise ValueError(f"smi.csv lacks {len(missing)} analysed hexes, e.g. {missing[:3]}")
    smi = np.array([smi_all[h] for h in ids])
    mean = np.array([stats.hex_mean[h] for h in ids])
    weight = np.array([stats.hex_weight[h] for h in ids])
    q_smi, q_com, degenerate = bivariate_quartiles(smi, mean, weight)
    rows = [HexMetrics(h, float(mean[k]), float(weight[k]), coa[h], coa[h] / total_opp if total_opp else 0.0,
                       float(smi[k]), int(q_smi[k]), int(q_com[k])) for k, h in enumerate(ids)]
    try:
        palma = palma_ratio(smi, mean, weight)
    except ValueError as exc:
        logger.warning("palma ratio undefined: %s", exc)
        palma = None
    summary = {"citywide_mean_commute_min": stats.citywide_mean, "threshold_min": T,
               "palma_ratio": palma, "gini_commute": gini(mean, weight),
               "gini_coa": gini(np.array([coa[h] for h in ids]), weight),
               "unreachable_weight": stats.unreachable, "commuter_weight": stats.total_weight,
               "total_opportunity": total_opp, "quartiles_degenerate": bool(degenerate),
               "n_hexes": len(ids)}
    return {"rows": rows, "summary": summary}


def _lisa(cfg, up):
    rows = up["access"]["rows"]
    by_id = {h.hex_id: h for h in up["grid"]["hexes"]}
    hexes = [by_id[r.hex_id] for r in rows]
    w = build_weights(hexes)
    lc = cfg["lisa"]
    res = bivariate_lisa([r.smi for r in rows], [r.mean_commute_min for r in rows], w,
                         int(lc["permutations"]), float(lc["alpha"]), int(lc["seed"]),
                         n_jobs=cfg.get("_threads", 1))
    return {"results": res, "hexes": hexes, "islands": len(w.islands)}


def _stats(cfg, up):
    demo = read_demographics(cfg["paths"]["demographics"])
    s = cfg["stats"]
    return {"report": cluster_composition_report(up["lisa"]["results"], demo, s["l2"], s["tol"],
                                                 int(s["max_iter"]))}


# --------------------------------------------------------------------------
# outputs


def _json(obj) -> str:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o
    return json.dumps(clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _outputs(stage, res, up) -> dict[str, str]:
    if stage == "ingest":
        return {"hourly_counts.csv": res["counts"].to_csv(), "ingest_report.json": _json(res["report"])}
    if stage == "anchors":
        return {"anchors.csv": anchors_to_csv(res["pairs"]), "rejected.csv": rejected_to_csv(res["rejected"])}
    if stage == "grid":
        return {"hexgrid.geojson": hexes_to_geojson(res["hexes"], res["plane"])}
    if stage == "matrix":
        return {"matrix.csv": res["matrix"].to_csv()}
    if stage == "access":
        return {"hex_metrics.csv": hex_metrics_to_csv(res["rows"]), "scatter.csv": scatter_to_csv(res["rows"]),
                "access_summary.json": _json(res["summary"])}
    if stage == "lisa":
        return {"lisa.geojson": hexes_to_geojson(res["hexes"], up["grid"]["plane"],
                                                 lisa_properties(res["results"]))}
    if stage == "stats":
        return {"report.json": _json(res["report"])}
    raise KeyError(stage)


# --------------------------------------------------------------------------
# driver

# which config sections and input paths feed each stage
_DEPS = {
    "ingest": ((), ("study", "ingest"), ("events", "bts")),
    "anchors": (("ingest",), (), ()),
    "grid": (("ingest", "anchors"), ("geo",), ("boundary",)),
    "matrix": (("grid",), ("router",), ("gtfs", "streets")),
    "access": (("grid", "matrix", "anchors"), ("access",), ("smi",)),
    "lisa": (("access", "grid"), ("lisa",), ()),
    "stats": (("lisa",), ("stats",), ("demographics",)),
}


def run_pipeline(cfg: dict, until: str = "stats", threads: int = 1, use_cache: bool = True) -> dict:
    """Run stages up to ``until``; writes outputs and ``manifest.json`` into ``cfg['output']['dir']``.

    Each stage result is cached under ``<out>/.cache`` keyed by its upstream
    keys, its config section and its input file hashes. On failure a
    ``DIRTY`` marker naming the stage is left beside the partial outputs and
    :class:`StageError` is raised.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    out = Path(cfg["output"]["dir"])
    cache = out / ".cache"
    cache.mkdir(parents=True, exist_ok=True)
    dirty = out / "DIRTY"
    if dirty.exists():
        dirty.unlink()
    cfg = dict(cfg, _threads=max(1, int(threads)))
    input_hashes = {k: sha256_path(v) for k, v in sorted(cfg["paths"].items())}
    manifest = {"config_hash": config_hash({k: v for k, v in cfg.items() if k != "_threads"}),
                "inputs": {k: {"path": cfg["paths"][k], "sha256": h} for k, h in input_hashes.items()},
                "versions": _versions(), "threads": cfg["_threads"], "stages": [], "outputs": {}}
    keys: dict[str, str] = {}
    results: dict[str, dict] = {}
    for stage in STAGES[:STAGES.index(until) + 1]:
        ups, sections, paths = _DEPS[stage]
        keys[stage] = _key(stage, __version__, [keys[u] for u in ups], [cfg[s] for s in sections],
                           [input_hashes[p] for p in paths])
        cfile = cache / f"{stage}-{keys[stage]}.pkl"
        t = time.perf_counter()
        hit = use_cache and cfile.exists()
        try:
            if hit:
                with cfile.open("rb") as fh:
                    res = pickle.load(fh)
            else:
                if stage == "matrix":
                    res = _matrix(cfg, results, cfg["_threads"])
                else:
                    res = globals()[f"_{stage}"](cfg, results)
                tmp = cfile.with_suffix(".tmp")
                with tmp.open("wb") as fh:
                    pickle.dump(res, fh, protocol=pickle.HIGHEST_PROTOCOL)
                tmp.replace(cfile)
            results[stage] = res
            for name, text in _outputs(stage, res, results).items():
                (out / name).write_text(text, encoding="utf-8", newline="")
                manifest["outputs"][name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        except Exception as exc:
            dirty.write_text(f"stage: {stage}\nerror: {exc}\n", encoding="utf-8")
            manifest["stages"].append({"name": stage, "cache": "hit" if hit else "miss",
                                       "seconds": round(time.perf_counter() - t, 3), "error": str(exc)})
            (out / "manifest.json").write_text(_json(manifest), encoding="utf-8")
            raise StageError(stage, exc) from exc
        secs = time.perf_counter() - t
        logger.info("%-8s %s %.2fs", stage, "cached" if hit else "done", secs)
        manifest["stages"].append({"name": stage, "key": keys[stage], "cache": "hit" if hit else "miss",
                                   "seconds": round(secs, 3)})
    (out / "manifest.json").write_text(_json(manifest), encoding="utf-8")
    return {"manifest": manifest, "results": results}
