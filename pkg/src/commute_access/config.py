"""Run configuration: a JSON tree with a fixed key set."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .ingest import parse_month
from .router.network import WEEKDAYS, parse_gtfs_time


class ConfigError(ValueError):
    pass


def _num(lo=None, hi=None, strict_lo=False, integer=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if integer and int(v) != v:
            return "must be an integer"
        if lo is not None and (v <= lo if strict_lo else v < lo):
            return f"must be {'>' if strict_lo else '>='} {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
        return None
    return check


def _bool(v):
    return None if isinstance(v, bool) else "must be true or false"


def _month(v):
    try:
        parse_month(v)
    except (ValueError, TypeError):
        return "must be YYYY-MM"
    return None


def _tz(v):
    from zoneinfo import ZoneInfo
    try:
        ZoneInfo(v)
    except Exception:
        return "unknown timezone"
    return None


def _window(v):
    try:
        a, b = (parse_gtfs_time(x) for x in v)
    except (ValueError, TypeError):
        return "must be two HH:MM:SS clock times"
    return None if a < b else "start must precede end"


def _threshold(v):
    if v == "auto":
        return None
    return _num(0.0)(v)


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {list(options)}"
    return check


def _str(v):
    return None if isinstance(v, str) and v else "must be a non-empty string"


PATH_KEYS = ("events", "bts", "boundary", "streets", "gtfs", "smi", "demographics")

# section -> key -> (validator, default); default None means required
SCHEMA = {
    "paths": {k: (_str, None) for k in PATH_KEYS},
    "study": {"month": (_month, None), "timezone": (_tz, "America/Santiago")},
    "ingest": {"naive_timestamps": (_bool, True)},
    "geo": {"hex_edge_m": (_num(0.0, strict_lo=True), 174.0), "tie_break": (_choice("min_bts_id"), "min_bts_id")},
    "router": {
        "walk_speed_kmh": (_num(0.0, strict_lo=True), 5.0),
        "max_access_walk_m": (_num(0.0), 1000.0),
        "min_transfer_s": (_num(0.0), 0.0),
        "window": (_window, ["07:00:00", "09:00:00"]),
        "step_s": (_num(0, strict_lo=True, integer=True), 600),
        "service_day": (_choice(*WEEKDAYS), "tuesday"),
    },
    "access": {"threshold_min": (_threshold, "auto")},
    "lisa": {"permutations": (_num(1, integer=True), 999), "alpha": (_num(0.0, 1.0, strict_lo=True), 0.05),
             "seed": (_num(0, integer=True), "$seed")},
    "stats": {"l2": (_num(0.0), 1e-4), "tol": (_num(0.0, strict_lo=True), 1e-8),
              "max_iter": (_num(1, integer=True), 100)},
    "output": {"dir": (_str, "out")},
}
TOP_LEVEL = {"seed": (_num(0, integer=True), 12345)}


def validate(raw: dict, base_dir=".") -> dict:
    """Fill defaults, reject unknown keys, check values and that input paths exist.

    Relative paths are resolved against ``base_dir``. Errors name the
    offending key.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    base = Path(base_dir)
    unknown = sorted(set(raw) - set(SCHEMA) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown config key(s): {unknown}")
    cfg: dict = {}
    for key, (check, default) in TOP_LEVEL.items():
        v = raw.get(key, default)
        err = check(v)
        if err:
            raise ConfigError(f"{key}: {err}")
        cfg[key] = int(v)
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{section}: must be an object")
        extra = sorted(set(given) - set(keys))
        if extra:
            raise ConfigError(f"unknown config key(s): {[f'{section}.{k}' for k in extra]}")
        out = {}
        for key, (check, default) in keys.items():
            if key in given:
                v = given[key]
            elif default is None:
                raise ConfigError(f"{section}.{key}: missing required key")
            else:
                v = cfg["seed"] if default == "$seed" else copy.deepcopy(default)
            err = check(v)
            if err:
                raise ConfigError(f"{section}.{key}: {err}")
            out[key] = v
        cfg[section] = out
    for k in PATH_KEYS:
        p = (base / cfg["paths"][k]).resolve()
        if not p.exists():
            raise ConfigError(f"paths.{k}: {p} does not exist")
        cfg["paths"][k] = str(p)
    cfg["output"]["dir"] = str((base / cfg["output"]["dir"]).resolve())
    cfg["router"]["window"] = list(cfg["router"]["window"])
    return cfg


def load(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return validate(raw, path.parent)


def config_hash(cfg: dict) -> str:
    """Hash of the analysis settings (output location excluded)."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
