"""Event ingestion: parse monthly event files, bin them hourly, filter active users."""

from __future__ import annotations

import calendar
import csv
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

logger = logging.getLogger(__name__)

EVENT_HEADER = ["user_id", "timestamp", "bts_id"]
BTS_HEADER = ["bts_id", "lon", "lat"]


class IngestError(Exception):
    """Fatal ingestion problem (unreadable file, bad header, bad registry)."""


@dataclass(frozen=True, slots=True)
class Event:
    user_id: str
    timestamp: datetime  # timezone-aware, already in the study timezone
    bts_id: str

    @property
    def hour(self) -> int:
        return self.timestamp.hour

    @property
    def day(self) -> int:
        return self.timestamp.day


@dataclass(frozen=True)
class TowerRegistry:
    """Tower ids with WGS84 coordinates, in file order."""

    ids: tuple[str, ...]
    lon: np.ndarray
    lat: np.ndarray

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            dup = sorted(k for k, v in Counter(self.ids).items() if v > 1)
            raise IngestError(f"duplicate bts_id(s): {dup}")
        if not (np.all(np.isfinite(self.lon)) and np.all(np.isfinite(self.lat))):
            raise IngestError("tower coordinates must be finite")

    def __contains__(self, bts_id) -> bool:
        return bts_id in self._index

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def _index(self) -> dict[str, int]:
        idx = self.__dict__.get("_idx_cache")
        if idx is None:
            idx = {b: i for i, b in enumerate(self.ids)}
            object.__setattr__(self, "_idx_cache", idx)
        return idx

    def coords(self, bts_id: str) -> tuple[float, float]:
        i = self._index[bts_id]
        return float(self.lon[i]), float(self.lat[i])

    def check_bounds(self, bbox: tuple[float, float, float, float]) -> None:
        """Raise if any tower lies outside ``(min_lon, min_lat, max_lon, max_lat)``."""
        x0, y0, x1, y1 = bbox
        bad = [b for b, x, y in zip(self.ids, self.lon, self.lat)
               if not (x0 <= x <= x1 and y0 <= y <= y1)]
        if bad:
            raise IngestError(f"towers outside study bounds: {bad[:10]}")


def read_registry(path) -> TowerRegistry:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read tower file {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != BTS_HEADER:
        raise IngestError(f"{path}: expected header {BTS_HEADER}, got {header}")
    ids, lon, lat = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            b, x, y = row
            ids.append(b)
            lon.append(float(x))
            lat.append(float(y))
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: malformed tower row {row!r}") from exc
    return TowerRegistry(tuple(ids), np.asarray(lon, float), np.asarray(lat, float))


def parse_month(month: str) -> tuple[int, int]:
    """``"2023-03"`` -> ``(2023, 3)``."""
    try:
        y, m = month.split("-")
        year, mon = int(y), int(m)
    except ValueError as exc:
        raise ValueError(f"month must be YYYY-MM, got {month!r}") from exc
    if not 1 <= mon <= 12:
        raise ValueError(f"month must be YYYY-MM, got {month!r}")
    return year, mon


def days_in_month(month: str) -> int:
    year, mon = parse_month(month)
    return calendar.monthrange(year, mon)[1]


@dataclass
class ParseReport:
    """Row-drop bookkeeping for :func:`parse_events`."""

    rows: int = 0
    kept: int = 0
    dropped: Counter = field(default_factory=Counter)
    malformed_lines: list[int] = field(default_factory=list)


def _parse_timestamp(raw: str, tz: ZoneInfo, naive: bool) -> datetime:
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        if not naive:
            raise ValueError("timestamp lacks an offset")
        return ts.replace(tzinfo=tz)
    return ts.astimezone(tz)


def parse_events(path, registry: TowerRegistry, month: str, tz: str,
                 naive_timestamps: bool = True,
                 report: ParseReport | None = None) -> list[Event]:
    """Read ``user_id,timestamp,bts_id`` rows for one study month.

    Rows with an unknown tower or a timestamp outside the month are dropped
    and counted; malformed rows are dropped and their line numbers recorded
    in ``report``. An unreadable file or a wrong header is fatal.
    """
    path = Path(path)
    report = report if report is not None else ParseReport()
    zone = ZoneInfo(tz)
    year, mon = parse_month(month)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read event file {path}: {exc}") from exc

    events: list[Event] = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVENT_HEADER:
            raise IngestError(f"{path}: expected header {EVENT_HEADER}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            report.rows += 1
            if len(row) != 3 or not row[0] or not row[2]:
                report.dropped["malformed"] += 1
                report.malformed_lines.append(lineno)
                continue
            user, raw_ts, bts = row
            try:
                ts = _parse_timestamp(raw_ts, zone, naive_timestamps)
            except ValueError:
                report.dropped["malformed"] += 1
                report.malformed_lines.append(lineno)
                continue
            if bts not in registry:
                report.dropped["unknown_tower"] += 1
                continue
            if ts.year != year or ts.month != mon:
                report.dropped["out_of_month"] += 1
                continue
            events.append(Event(user, ts, bts))
    report.kept = len(events)
    for reason, n in sorted(report.dropped.items()):
        logger.info("%s: dropped %d rows (%s)", path.name, n, reason)
    if report.malformed_lines:
        logger.warning("%s: malformed rows at lines %s%s", path.name,
                       report.malformed_lines[:20],
                       " ..." if len(report.malformed_lines) > 20 else "")
    return events


class HourlyCounts:
    """Per-user counts keyed by ``(bts_id, hour, day)``.

    Parameters
    ----------
    month : str
        Study month ``YYYY-MM``; ``day`` keys are days of this month.
    cells : dict
        ``{user_id: {(bts_id, hour, day): count}}``.
    """

    def __init__(self, month: str, cells: dict[str, dict[tuple[str, int, int], int]] | None = None):
        self.month = month
        self.cells = cells if cells is not None else {}

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(sorted(self.cells))

    def __getitem__(self, user_id):
        return self.cells[user_id]

    def user_total(self, user_id: str) -> int:
        return sum(self.cells[user_id].values())

    def total(self) -> int:
        return sum(sum(c.values()) for c in self.cells.values())

    def merge(self, other: "HourlyCounts") -> "HourlyCounts":
        """Sum two count tables for the same month (chunked binning)."""
        if other.month != self.month:
            raise ValueError("cannot merge counts from different months")
        out: dict[str, dict] = {u: dict(c) for u, c in self.cells.items()}
        for u, c in other.cells.items():
            dst = out.setdefault(u, {})
            for k, n in c.items():
                dst[k] = dst.get(k, 0) + n
        return HourlyCounts(self.month, out)

    def subset(self, users) -> "HourlyCounts":
        users = set(users)
        return HourlyCounts(self.month, {u: c for u, c in self.cells.items() if u in users})

    def to_csv(self) -> str:
        """Canonical serialization ``user_id,bts_id,day,hour,count`` (sorted)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user_id", "bts_id", "day", "hour", "count"])
        for u in sorted(self.cells):
            for (b, h, d), n in sorted(self.cells[u].items(), key=lambda kv: (kv[0][0], kv[0][2], kv[0][1])):
                w.writerow([u, b, d, h, n])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, month: str, text: str) -> "HourlyCounts":
        rows = csv.reader(io.StringIO(text))
        next(rows)
        cells: dict[str, dict] = defaultdict(dict)
        for u, b, d, h, n in rows:
            cells[u][(b, int(h), int(d))] = int(n)
        return cls(month, dict(cells))


def bin_hourly(events, tz: str | None = None, month: str | None = None) -> HourlyCounts:
    """Count events per ``(user, tower, local hour, day of month)``.

    With ``tz`` given, timestamps are converted to that zone before taking the
    clock hour; otherwise they are used as-is (``parse_events`` already
    returns study-local times). ``month`` defaults to the first event's month.
    """
    zone = ZoneInfo(tz) if tz else None
    cells: dict[str, dict] = defaultdict(dict)
    for ev in events:
        ts = ev.timestamp.astimezone(zone) if zone is not None else ev.timestamp
        if month is None:
            month = f"{ts.year:04d}-{ts.month:02d}"
        key = (ev.bts_id, ts.hour, ts.day)
        c = cells[ev.user_id]
        c[key] = c.get(key, 0) + 1
    return HourlyCounts(month, dict(cells))


def filter_active_users(counts: HourlyCounts, month: str | None = None) -> set[str]:
    """Users averaging strictly more than two events per calendar day."""
    n_days = days_in_month(month or counts.month)
    return {u for u, c in counts.cells.items() if sum(c.values()) > 2 * n_days}
