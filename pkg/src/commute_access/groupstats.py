"""Cluster composition: Kruskal-Wallis, Dunn post hoc, multinomial logit."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

VARIABLES = ("gender_ratio", "immigrant", "retired", "minor", "indigenous")
CLASSES = ("HH", "HL", "LH", "LL", "NS")
REFERENCE = "NS"


class ConvergenceError(RuntimeError):
    def __init__(self, msg, grad_norm):
        super().__init__(f"{msg} (gradient max-norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


# --------------------------------------------------------------------------
# rank tests


@dataclass(frozen=True)
class KWResult:
    variable: str
    H: float
    p: float
    df: int


def _pooled(groups):
    groups = [np.asarray(g, float) for g in groups]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("empty group")
    data = np.concatenate(groups)
    if len(data) < 3:
        raise ValueError("need at least three observations")
    ranks = stats.rankdata(data)  # midranks
    sizes = np.array([len(g) for g in groups])
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    mean_ranks = np.array([ranks[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    _, t = np.unique(data, return_counts=True)
    ties = float(np.sum(t.astype(float) ** 3 - t))
    return data, sizes, mean_ranks, ties


def kruskal_wallis(groups, variable: str = "") -> KWResult:
    """Tie-corrected Kruskal-Wallis H with a chi-squared p-value."""
    data, sizes, mean_ranks, ties = _pooled(groups)
    N = len(data)
    k = len(sizes)
    correction = 1.0 - ties / (N ** 3 - N)
    if correction <= 0:
        return KWResult(variable, 0.0, 1.0, k - 1)
    H = 12.0 / (N * (N + 1)) * float(np.sum(sizes * (mean_ranks - (N + 1) / 2.0) ** 2))
    H /= correction
    p = float(stats.chi2.sf(H, k - 1)) if H > 0 else 1.0
    return KWResult(variable, H, p, k - 1)


def holm_sidak(pvalues) -> np.ndarray:
    """Holm step-down with Sidak per-step correction, made monotone."""
    p = np.asarray(pvalues, float)
    m = len(p)
    order = np.argsort(p, kind="stable")
    k = m - np.arange(m)
    # exponent 1 is the identity; skip the round trip so it stays bit-exact
    adj_sorted = np.where(k == 1, p[order], 1.0 - (1.0 - p[order]) ** k)
    adj_sorted = np.minimum(np.maximum.accumulate(adj_sorted), 1.0)
    out = np.empty(m)
    out[order] = adj_sorted
    return out


@dataclass(frozen=True)
class DunnPair:
    a: str
    b: str
    z: float
    p: float
    p_adj: float


def dunn_posthoc(groups, labels=None) -> list[DunnPair]:
    """All pairwise Dunn z tests (tie-corrected), Holm-Sidak adjusted."""
    data, sizes, mean_ranks, ties = _pooled(groups)
    labels = list(labels) if labels is not None else [str(i) for i in range(len(sizes))]
    N = len(data)
    var = N * (N + 1) / 12.0 - ties / (12.0 * (N - 1))
    pairs = []
    for i, j in combinations(range(len(sizes)), 2):
        se = np.sqrt(var * (1.0 / sizes[i] + 1.0 / sizes[j]))
        z = (mean_ranks[i] - mean_ranks[j]) / se if se > 0 else 0.0
        pairs.append((i, j, float(z), float(2.0 * stats.norm.sf(abs(z)))))
    adj = holm_sidak([p for *_, p in pairs]) if pairs else []
    return [DunnPair(labels[i], labels[j], z, p, float(a)) for (i, j, z, p), a in zip(pairs, adj)]


# --------------------------------------------------------------------------
# multinomial logit


@dataclass
class MnlFit:
    classes: list[str]
    variables: list[str]
    intercepts: dict[str, float]
    coef: dict[str, dict[str, float]]
    odds_ratios: dict[str, dict[str, float]]
    loglik: float
    loglik_null: float
    mcfadden_r2: float
    accuracy: float
    n_iter: int
    grad_norm: float
    means: np.ndarray = field(repr=False, default=None)
    scales: np.ndarray = field(repr=False, default=None)


def _softmax_parts(X1, B):
    """Log-probabilities with the reference column fixed at zero."""
    eta = np.column_stack([X1 @ B.T, np.zeros(len(X1))])
    return eta - logsumexp(eta, axis=1, keepdims=True)


def fit_multinomial(X, labels, reference: str = REFERENCE, variables=None, l2: float = 1e-4,
                    tol: float = 1e-8, max_iter: int = 100, standardize: bool = True) -> MnlFit:
    """Softmax regression by damped Newton steps; ``reference`` is pinned at zero.

    The objective is the mean negative log-likelihood plus
    ``l2 / 2 * ||slopes||^2`` (intercepts are not penalized). Iteration stops
    when the gradient max-norm falls to ``tol``.
    """
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    n, p = X.shape
    variables = list(variables) if variables is not None else [f"x{j}" for j in range(p)]
    present = sorted(set(labels.tolist()))
    if reference not in present:
        raise ValueError(f"reference class {reference!r} not present")
    if len(present) < 2:
        raise ValueError("need at least two classes")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    others = [c for c in present if c != reference]
    classes = others + [reference]
    K = len(others)
    y = np.array([classes.index(c) for c in labels.tolist()])
    Y = np.zeros((n, K + 1))
    Y[np.arange(n), y] = 1.0

    means = X.mean(axis=0) if standardize and p else np.zeros(p)
    scales = X.std(axis=0) if standardize and p else np.ones(p)
    scales = np.where(scales > 0, scales, 1.0)
    Z = (X - means) / scales
    X1 = np.column_stack([np.ones(n), Z])
    d = p + 1
    counts = Y.sum(axis=0)
    loglik_null = float(np.sum(counts * np.log(counts / n)))

    # start from the intercept-only optimum
    B = np.zeros((K, d))
    B[:, 0] = np.log(counts[:K] / counts[K])
    pen = np.full(d, l2)
    pen[0] = 0.0

    def objective(B):
        lp = _softmax_parts(X1, B)
        return -np.sum(Y * lp) / n + 0.5 * np.sum(pen * B * B), lp

    f, lp = objective(B)
    it = 0
    gnorm = np.inf
    while True:
        P = np.exp(lp)
        G = -((Y[:, :K] - P[:, :K]).T @ X1) / n + pen * B
        gnorm = float(np.max(np.abs(G)))
        if gnorm <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError("multinomial fit did not converge", gnorm)
        it += 1
        Pk = P[:, :K]
        H = np.zeros((K * d, K * d))
        for a in range(K):
            for b in range(a, K):
                wab = Pk[:, a] * ((a == b) - Pk[:, b])
                block = (X1 * wab[:, None]).T @ X1 / n
                H[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
                H[b * d:(b + 1) * d, a * d:(a + 1) * d] = block.T
        H += np.diag(np.tile(pen, K))
        g = G.ravel()
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            B_new = B - t * step.reshape(K, d)
            f_new, lp_new = objective(B_new)
            if f_new <= f + 1e-4 * t * -float(g @ step) or t < 1e-10:
                break
            t *= 0.5
        B, f, lp = B_new, f_new, lp_new

    loglik = float(np.sum(Y * lp)) if p else loglik_null
    r2 = 1.0 - loglik / loglik_null if loglik_null != 0 and p else 0.0
    pred = np.argmax(lp, axis=1)
    acc = float(np.mean(pred == y))
    intercepts = {c: float(B[k, 0]) for k, c in enumerate(others)}
    intercepts[reference] = 0.0
    coef = {c: {v: float(B[k, 1 + j]) for j, v in enumerate(variables)} for k, c in enumerate(others)}
    coef[reference] = {v: 0.0 for v in variables}
    odds = {c: {v: float(np.exp(b)) for v, b in row.items()} for c, row in coef.items()}
    return MnlFit(classes, variables, intercepts, coef, odds, loglik, loglik_null, r2, acc, it, gnorm,
                  means, scales)


# --------------------------------------------------------------------------
# demographic table and report


def read_demographics(path) -> dict[str, dict[str, float]]:
    """``hex_id -> {variable: percent}`` from ``demographics.csv``."""
    text = Path(path).read_text(encoding="utf-8")
    rows = csv.DictReader(io.StringIO(text))
    missing = [c for c in ("hex_id", *VARIABLES) if c not in (rows.fieldnames or [])]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    out = {}
    for r in rows:
        vals = {v: float(r[v]) for v in VARIABLES}
        bad = [v for v, x in vals.items() if not 0.0 <= x <= 100.0]
        if bad:
            raise ValueError(f"{path}: hex {r['hex_id']} has out-of-range {bad}")
        out[r["hex_id"]] = vals
    return out


def five_number(values) -> dict[str, float]:
    v = np.asarray(values, float)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]), "q3": float(q[3]),
            "max": float(q[4]), "n": int(len(v))}


def cluster_composition_report(lisa, demographics, l2: float = 1e-4, tol: float = 1e-8,
                               max_iter: int = 100) -> dict:
    """Box-plot summaries, Kruskal-Wallis, Dunn and multinomial logit by LISA class."""
    rows = [(r.cls, demographics[r.hex_id]) for r in lisa if r.hex_id in demographics]
    missing = sum(1 for r in lisa if r.hex_id not in demographics)
    warnings = []
    if missing:
        warnings.append(f"{missing} hexes without demographics skipped")
    by_class: dict[str, list[dict]] = {}
    for cls, vals in rows:
        by_class.setdefault(cls, []).append(vals)
    present = [c for c in CLASSES if c in by_class]

    box = {c: {v: five_number([r[v] for r in by_class[c]]) for v in VARIABLES} for c in present}
    tested = [c for c in present if len(by_class[c]) >= 2]
    for c in present:
        if c not in tested:
            warnings.append(f"class {c} has fewer than 2 hexes; excluded from tests")

    report = {"classes": present, "counts": {c: len(by_class[c]) for c in present},
              "boxplot": box, "kruskal_wallis": {}, "dunn": {}, "multinomial": None}
    if len(tested) < 2:
        warnings.append("fewer than two testable classes; tests skipped")
    else:
        for v in VARIABLES:
            groups = [[r[v] for r in by_class[c]] for c in tested]
            kw = kruskal_wallis(groups, v)
            report["kruskal_wallis"][v] = {"H": kw.H, "p": kw.p, "df": kw.df}
            report["dunn"][v] = [{"a": d.a, "b": d.b, "z": d.z, "p": d.p, "p_adj": d.p_adj}
                                 for d in dunn_posthoc(groups, tested)]
        if REFERENCE in tested:
            X = np.array([[r[v] for v in VARIABLES] for c in tested for r in by_class[c]])
            y = [c for c in tested for _ in by_class[c]]
            fit = fit_multinomial(X, y, REFERENCE, VARIABLES, l2=l2, tol=tol, max_iter=max_iter)
            report["multinomial"] = {
                "reference": REFERENCE, "odds_ratios": fit.odds_ratios, "coefficients": fit.coef,
                "intercepts": fit.intercepts, "mcfadden_r2": fit.mcfadden_r2,
                "accuracy": fit.accuracy, "loglik": fit.loglik, "loglik_null": fit.loglik_null,
                "iterations": fit.n_iter}
        else:
            warnings.append("reference class NS absent; multinomial fit skipped")
    for w in warnings:
        logger.warning(w)
    report["warnings"] = warnings
    return report
