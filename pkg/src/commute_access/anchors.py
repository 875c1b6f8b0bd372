"""Home and work tower detection from hour-weighted connection counts."""

from __future__ import annotations

import calendar
import csv
import io
from dataclasses import dataclass

from .ingest import HourlyCounts, parse_month

# Hour -> weight. Hours absent from a table weigh zero.
HOME_WEIGHTS = {2: 3, 3: 3, 0: 2, 1: 2, 4: 2, 5: 2, 6: 1, 23: 1}
WORK_WEIGHTS = {9: 2, 10: 2, 11: 2, 14: 2, 15: 2, 16: 2, 17: 2, 12: 1, 13: 1}

NIGHT_HOURS = frozenset(HOME_WEIGHTS)
WORK_HOURS = frozenset(range(9, 18))


def _check_hour(hour: int) -> None:
    if not (isinstance(hour, int) and 0 <= hour <= 23):
        raise ValueError(f"hour must be an integer in 0..23, got {hour!r}")


def home_weight(hour: int) -> int:
    _check_hour(hour)
    return HOME_WEIGHTS.get(hour, 0)


def work_weight(hour: int) -> int:
    _check_hour(hour)
    return WORK_WEIGHTS.get(hour, 0)


def weekday_table(month: str) -> dict[int, int]:
    """Day of month -> weekday (Monday = 0) on the civil calendar."""
    year, mon = parse_month(month)
    n = calendar.monthrange(year, mon)[1]
    return {d: calendar.weekday(year, mon, d) for d in range(1, n + 1)}


@dataclass(frozen=True)
class AnchorPair:
    user_id: str
    home_bts: str
    work_bts: str
    home_score: float
    work_score: float


@dataclass(frozen=True)
class Rejection:
    user_id: str
    reason: str  # "no_night_signal" | "no_distinct_work"


def _argmax(scores: dict[str, int], exclude: str | None = None) -> tuple[str | None, int]:
    # ties go to the lexicographically smallest tower id
    best, best_score = None, 0
    for bts in sorted(scores):
        if bts == exclude:
            continue
        s = scores[bts]
        if best is None or s > best_score:
            best, best_score = bts, s
    return best, best_score


def score_user(cells: dict[tuple[str, int, int], int],
               weekdays: dict[int, int]) -> tuple[dict[str, int], dict[str, int]]:
    """Per-tower home and work scores for one user's count cells."""
    home: dict[str, int] = {}
    work: dict[str, int] = {}
    for (bts, hour, day), n in cells.items():
        hw = HOME_WEIGHTS.get(hour, 0)
        if hw:
            home[bts] = home.get(bts, 0) + hw * n
        ww = WORK_WEIGHTS.get(hour, 0)
        if ww and weekdays[day] < 5:
            work[bts] = work.get(bts, 0) + ww * n
    return home, work


def detect_anchors(counts: HourlyCounts, active, calendar_: dict[int, int] | None = None
                   ) -> tuple[list[AnchorPair], list[Rejection]]:
    """Home/work towers for every active user, ordered by user id.

    Home maximizes the night-weighted score over all days; work maximizes the
    work-weighted score over Monday-Friday among towers other than home.
    Users without any night signal, or without a positive work score at a
    second tower, are returned as rejections.
    """
    weekdays = calendar_ if calendar_ is not None else weekday_table(counts.month)
    pairs: list[AnchorPair] = []
    rejected: list[Rejection] = []
    for user in sorted(active):
        cells = counts.cells.get(user, {})
        home_scores, work_scores = score_user(cells, weekdays)
        home, h_score = _argmax(home_scores)
        if home is None or h_score <= 0:
            rejected.append(Rejection(user, "no_night_signal"))
            continue
        work, w_score = _argmax(work_scores, exclude=home)
        if work is None or w_score <= 0:
            rejected.append(Rejection(user, "no_distinct_work"))
            continue
        pairs.append(AnchorPair(user, home, work, float(h_score), float(w_score)))
    return pairs, rejected


def anchors_to_csv(pairs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["user_id", "home_bts", "work_bts", "home_score", "work_score"])
    for p in pairs:
        w.writerow([p.user_id, p.home_bts, p.work_bts, repr(p.home_score), repr(p.work_score)])
    return buf.getvalue()


def rejected_to_csv(rejected) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["user_id", "reason"])
    for r in rejected:
        w.writerow([r.user_id, r.reason])
    return buf.getvalue()


def read_anchors_csv(text: str) -> list[AnchorPair]:
    rows = csv.DictReader(io.StringIO(text))
    return [AnchorPair(r["user_id"], r["home_bts"], r["work_bts"],
                       float(r["home_score"]), float(r["work_score"])) for r in rows]
