"""Commute statistics, cumulative-opportunity accessibility and inequality ratios."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass

import numpy as np


class DegenerateDistribution(ValueError):
    pass


@dataclass(frozen=True)
class HexMetrics:
    hex_id: str
    mean_commute_min: float
    commuter_weight: float
    coa: float
    coa_share: float
    smi: float
    q_smi: int
    q_commute: int


@dataclass
class CommuteStats:
    """Per-hex commute means plus the citywide mean.

    ``hex_mean``/``hex_weight`` hold the commuter-weighted mean commute and
    the reachable commuter mass homed in each hexagon; ``unreachable`` is the
    commuter mass whose home/work hexagon pair has no route.
    """

    hex_mean: dict[str, float]
    hex_weight: dict[str, float]
    citywide_mean: float
    unreachable: float
    total_weight: float


def commute_stats(anchors, hexes, matrix) -> CommuteStats:
    """Average commute per home hexagon and over the whole city.

    Each anchored user is spread evenly over the hexagons of their home tower
    and, independently, of their work tower, so a user contributes weight
    ``1 / (k_home * k_work)`` to every (home hex, work hex) pair.
    """
    by_tower: dict[str, list[str]] = defaultdict(list)
    for h in hexes:
        by_tower[h.assigned_bts].append(h.hex_id)
    pair_users: dict[tuple[str, str], int] = defaultdict(int)
    for a in anchors:
        pair_users[(a.home_bts, a.work_bts)] += 1

    num: dict[str, float] = defaultdict(float)
    den: dict[str, float] = defaultdict(float)
    lost = 0.0
    for (hb, wb), n_users in sorted(pair_users.items()):
        homes, works = by_tower.get(hb, []), by_tower.get(wb, [])
        if not homes or not works:
            lost += n_users
            continue
        w = n_users / (len(homes) * len(works))
        cols = np.array([matrix._di[h] for h in works])
        for hh in homes:
            t = matrix.minutes[matrix._oi[hh], cols]
            ok = np.isfinite(t)
            num[hh] += w * float(t[ok].sum())
            den[hh] += w * int(ok.sum())
            lost += w * int((~ok).sum())
    hex_mean = {h: num[h] / den[h] for h in sorted(den) if den[h] > 0}
    hex_weight = {h: den[h] for h in sorted(den) if den[h] > 0}
    total = sum(den.values())
    city = sum(num.values()) / total if total > 0 else float("nan")
    return CommuteStats(hex_mean, hex_weight, city, lost, total)


def cumulative_access(matrix, opportunity_share: dict[str, float], threshold_min: float,
                      origins=None) -> dict[str, float]:
    """Opportunity mass reachable from each origin within ``threshold_min`` (inclusive)."""
    if threshold_min < 0:
        raise ValueError("threshold must be non-negative")
    weights = np.array([opportunity_share.get(d, 0.0) for d in matrix.destinations])
    origins = matrix.origins if origins is None else origins
    out = {}
    for o in origins:
        row = matrix.row(o)
        out[o] = float(weights[row <= threshold_min].sum())
    return out


def palma_ratio(smi, commute, weight) -> float:
    """Mean commute of the top tenth (by SMI) over that of the bottom four tenths.

    Population is ranked by hexagon SMI, highest first, with each hexagon
    contributing its commuter weight. Hexagons straddling the 10% or 60%
    cumulative-weight cut are split fractionally.
    """
    smi = np.asarray(smi, float)
    commute = np.asarray(commute, float)
    weight = np.asarray(weight, float)
    order = np.argsort(-smi, kind="stable")
    w = weight[order]
    t = commute[order]
    total = w.sum()
    if not total > 0:
        raise DegenerateDistribution("degenerate_distribution")
    hi = np.cumsum(w)
    lo = hi - w

    def slice_mean(a, b):
        part = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
        mass = part.sum()
        if not mass > 0:
            raise DegenerateDistribution("degenerate_distribution")
        return float((part * t).sum() / mass)

    top = slice_mean(0.0, 0.1 * total)
    bottom = slice_mean(0.6 * total, total)
    if bottom == 0:
        raise DegenerateDistribution("degenerate_distribution")
    return top / bottom


def gini(values, weights=None) -> float:
    """Weighted Gini: mean absolute difference over twice the mean."""
    x = np.asarray(values, float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    if np.any(x < 0):
        raise ValueError("gini needs non-negative values")
    W = w.sum()
    if not W > 0:
        raise ValueError("total weight must be positive")
    mu = (w * x).sum() / W
    if mu == 0:
        return 0.0
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cw = np.cumsum(w)
    cwx = np.cumsum(w * x)
    # sum_{i,j} w_i w_j |x_i - x_j| = 2 sum_i w_i (x_i * W_<i - (wx)_<i)
    below_w = cw - w
    below_wx = cwx - w * x
    mad = 2.0 * np.sum(w * (x * below_w - below_wx))
    return float(mad / (2.0 * W * W * mu))


@dataclass(frozen=True)
class Quartiles:
    classes: np.ndarray  # 1..4 per input value
    breakpoints: tuple[float, float, float]
    degenerate: bool


def quartile_classes(values, weights=None) -> Quartiles:
    """Quartile index 1-4 by weighted rank; equal values share a class.

    Class = 1 + floor(4 * share of weight strictly below the value), so the
    25/50/75% breakpoints are lower-inclusive.
    """
    x = np.asarray(values, float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    total = w.sum()
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    below = np.cumsum(ws) - ws
    # ties take the share below their first occurrence
    first = np.searchsorted(xs, xs, side="left")
    share = below[first] / total
    cls_sorted = np.minimum(4, 1 + np.floor(4.0 * share + 1e-12).astype(int))
    classes = np.empty(len(x), int)
    classes[order] = cls_sorted
    bps = []
    for k in (2, 3, 4):
        hit = xs[cls_sorted >= k]
        bps.append(float(hit[0]) if len(hit) else float("nan"))
    return Quartiles(classes, tuple(bps), len(np.unique(x)) < 4)


def bivariate_quartiles(smi, mean_commute, weights=None):
    """``(q_smi, q_commute)`` arrays plus a flag set when either side is degenerate."""
    qs = quartile_classes(smi, weights)
    qc = quartile_classes(mean_commute, weights)
    return qs.classes, qc.classes, qs.degenerate or qc.degenerate


def hex_metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hex_id", "mean_commute_min", "commuter_weight", "coa", "coa_share", "smi",
                "q_smi", "q_commute"])
    for m in rows:
        w.writerow([m.hex_id, repr(m.mean_commute_min), repr(m.commuter_weight), repr(m.coa),
                    repr(m.coa_share), repr(m.smi), m.q_smi, m.q_commute])
    return buf.getvalue()


def scatter_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hex_id", "coa_share", "mean_commute_min", "smi"])
    for m in rows:
        w.writerow([m.hex_id, repr(m.coa_share), repr(m.mean_commute_min), repr(m.smi)])
    return buf.getvalue()
