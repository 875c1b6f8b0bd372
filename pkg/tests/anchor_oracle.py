"""Exhaustive anchor scorer that re-reads the raw event file line by line."""

from __future__ import annotations

import calendar
from collections import defaultdict

# written out hour by hour, independently of the package tables
HOME = [2, 2, 3, 3, 2, 2, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]
WORK = [0, 0, 0, 0, 0, 0, 0, 0, 0, 2, 2, 2, 1, 1, 2, 2, 2, 2, 0, 0, 0, 0, 0, 0]


def brute_force_anchors(events_path, towers, year, month):
    totals = defaultdict(int)
    home = defaultdict(lambda: defaultdict(int))
    work = defaultdict(lambda: defaultdict(int))
    with open(events_path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            user, ts, bts = line.rstrip("\n").split(",")
            if bts not in towers:
                continue
            y, m, d = int(ts[0:4]), int(ts[5:7]), int(ts[8:10])
            if (y, m) != (year, month):
                continue
            hour = int(ts[11:13])
            totals[user] += 1
            home[user][bts] += HOME[hour]
            if calendar.weekday(y, m, d) < 5:
                work[user][bts] += WORK[hour]
    days = calendar.monthrange(year, month)[1]
    pairs, rejected = {}, {}
    for user in sorted(totals):
        if not totals[user] > 2 * days:
            continue
        cands = sorted(home[user].items(), key=lambda kv: (-kv[1], kv[0]))
        if not cands or cands[0][1] <= 0:
            rejected[user] = "no_night_signal"
            continue
        h = cands[0][0]
        wc = sorted(((b, s) for b, s in work[user].items() if b != h), key=lambda kv: (-kv[1], kv[0]))
        if not wc or wc[0][1] <= 0:
            rejected[user] = "no_distinct_work"
            continue
        pairs[user] = (h, wc[0][0], cands[0][1], wc[0][1])
    return pairs, rejected
