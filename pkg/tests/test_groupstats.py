import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from commute_access.groupstats import (ConvergenceError, cluster_composition_report, dunn_posthoc,
                                       fit_multinomial, five_number, holm_sidak, kruskal_wallis,
                                       read_demographics)
from commute_access.spatial import LisaResult
from logit_oracle import binary_logit


def midranks(values):
    """Average rank of each value among all values (explicit double loop)."""
    v = list(values)
    out = []
    for x in v:
        below = sum(1 for y in v if y < x)
        equal = sum(1 for y in v if y == x)
        out.append(below + (equal + 1) / 2.0)
    return np.array(out)


def kw_oracle(groups):
    data = [x for g in groups for x in g]
    r = midranks(data)
    N = len(data)
    pos, H = 0, 0.0
    for g in groups:
        rs = r[pos:pos + len(g)].sum()
        H += rs ** 2 / len(g)
        pos += len(g)
    H = 12.0 / (N * (N + 1)) * H - 3 * (N + 1)
    t = np.unique(data, return_counts=True)[1]
    return H / (1 - np.sum(t ** 3 - t) / (N ** 3 - N))


def tied_groups(seed, k=4):
    rng = np.random.default_rng(seed)
    return [list(rng.integers(0, 12, int(rng.integers(3, 25))).astype(float)) for _ in range(k)]


def test_kw_hand_value():
    r = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert abs(r.H - 7.2) <= 1e-9 and r.df == 2
    assert r.p == pytest.approx(np.exp(-3.6), rel=1e-10)  # chi2 sf with 2 df


def test_kw_identical_groups():
    r = kruskal_wallis([[1, 2, 3], [1, 2, 3]])
    assert r.H == 0.0 and r.p == 1.0
    r = kruskal_wallis([[5, 5], [5, 5, 5]])
    assert r.H == 0.0 and r.p == 1.0


def test_kw_errors():
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2], []])
    with pytest.raises(ValueError):
        kruskal_wallis([[1], [2]])


@pytest.mark.parametrize("seed", range(5))
def test_kw_matches_midrank_oracle(seed):
    g = tied_groups(seed)
    assert kruskal_wallis(g).H == pytest.approx(kw_oracle(g), abs=1e-9)
    assert kruskal_wallis(g).H == pytest.approx(stats.kruskal(*g).statistic, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kw_monotone_transform_invariant(seed):
    g = tied_groups(seed, 3)
    h = [[np.exp(x / 3.0) + x ** 3 for x in grp] for grp in g]
    assert kruskal_wallis(g).H == pytest.approx(kruskal_wallis(h).H, abs=1e-9)


def test_holm_sidak():
    got = holm_sidak([0.01, 0.04, 0.03])
    assert got == pytest.approx([1 - 0.99 ** 3, 1 - 0.97 ** 2, 1 - 0.97 ** 2], abs=1e-15)
    assert holm_sidak([0.2]) == pytest.approx([0.2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12))
def test_holm_sidak_properties(p):
    adj = holm_sidak(p)
    assert np.all(adj >= np.asarray(p) - 1e-15) and np.all(adj <= 1.0)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)


def dunn_oracle(groups):
    data = [x for g in groups for x in g]
    r = midranks(data)
    N = len(data)
    t = np.unique(data, return_counts=True)[1]
    means, pos = [], 0
    for g in groups:
        means.append(r[pos:pos + len(g)].mean())
        pos += len(g)
    out = []
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            var = (N * (N + 1) / 12 - np.sum(t ** 3 - t) / (12 * (N - 1))) * (1 / len(groups[a]) + 1 / len(groups[b]))
            out.append((means[a] - means[b]) / np.sqrt(var))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_dunn_matches_formula(seed):
    g = tied_groups(seed + 10)
    res = dunn_posthoc(g, list("abcd"))
    assert [(d.a, d.b) for d in res] == [("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"), ("c", "d")]
    assert np.max(np.abs(np.array([d.z for d in res]) - dunn_oracle(g))) <= 1e-9
    for d in res:
        assert d.p == pytest.approx(2 * stats.norm.sf(abs(d.z)), rel=1e-12)
        assert d.p_adj >= d.p


def test_dunn_single_pair_unadjusted():
    (d,) = dunn_posthoc([[1, 2, 3], [4, 5, 6, 7]])
    assert d.p_adj == d.p


def test_binary_matches_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(800, 3)) * [1.0, 5.0, 0.2] + [0.0, 3.0, -1.0]
    eta = 0.4 + X @ np.array([0.8, -0.1, 2.0])
    y = rng.random(800) < 1 / (1 + np.exp(-eta))
    labels = np.where(y, "HH", "NS")
    fit = fit_multinomial(X, labels, variables=["a", "b", "c"], tol=1e-12)
    b0, b = binary_logit(X, y)
    assert fit.intercepts["HH"] == pytest.approx(b0, abs=1e-6)
    assert [fit.coef["HH"][v] for v in "abc"] == pytest.approx(list(b), abs=1e-6)


def test_reference_row_and_null_fit():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(600, 2))
    labels = rng.choice(["HH", "LL", "NS"], 600)
    fit = fit_multinomial(X, labels)
    assert fit.coef["NS"] == {"x0": 0.0, "x1": 0.0}
    assert fit.odds_ratios["NS"] == {"x0": 1.0, "x1": 1.0}
    assert all(v > 0 for row in fit.odds_ratios.values() for v in row.values())
    assert 0 <= fit.accuracy <= 1
    empty = fit_multinomial(np.zeros((600, 0)), labels)
    assert empty.mcfadden_r2 == 0.0


def test_row_order_invariance():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 3))
    labels = np.array(["HH", "LH", "NS"])[np.argmax(X + rng.normal(size=(500, 3)), axis=1)]
    a = fit_multinomial(X, labels)
    perm = rng.permutation(500)
    b = fit_multinomial(X[perm], labels[perm])
    for c in a.coef:
        for v in a.coef[c]:
            assert a.coef[c][v] == pytest.approx(b.coef[c][v], abs=1e-8)


def test_separation_is_finite():
    X = np.r_[np.zeros(50), np.ones(50)][:, None]
    labels = np.r_[["NS"] * 50, ["HH"] * 50]
    fit = fit_multinomial(X, labels, l2=1e-2)
    assert np.isfinite(fit.coef["HH"]["x0"]) and fit.accuracy == 1.0


def test_errors():
    with pytest.raises(ValueError):
        fit_multinomial(np.zeros((4, 1)), ["HH"] * 4)
    with pytest.raises(ValueError):
        fit_multinomial(np.zeros((4, 1)), ["HH", "LL", "HH", "LL"])
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    with pytest.raises(ConvergenceError) as e:
        fit_multinomial(X, rng.choice(["HH", "NS"], 200), max_iter=0, tol=1e-30)
    assert e.value.grad_norm > 0


def lisa(classes):
    return [LisaResult(f"h{i}", 0.0, 0.5, c, 0.0, 0.0) for i, c in enumerate(classes)]


def demo_table(n, rng, shift=None):
    out = {}
    for i in range(n):
        row = {v: float(rng.uniform(0, 100)) for v in ("gender_ratio", "immigrant", "retired", "minor", "indigenous")}
        if shift:
            row["immigrant"] = float(np.clip(shift(i) + rng.normal(0, 2), 0, 100))
        out[f"h{i}"] = row
    return out


def test_report_all_ns():
    rng = np.random.default_rng(4)
    rep = cluster_composition_report(lisa(["NS"] * 20), demo_table(20, rng))
    assert rep["classes"] == ["NS"] and rep["kruskal_wallis"] == {} and rep["multinomial"] is None
    assert any("skipped" in w for w in rep["warnings"])


def test_report_planted_effect_and_small_class():
    rng = np.random.default_rng(5)
    classes = ["HH"] * 60 + ["LL"] * 60 + ["NS"] * 80 + ["HL"]
    shift = lambda i: 30.0 if i < 60 else (5.0 if i < 120 else 15.0)  # noqa: E731
    rep = cluster_composition_report(lisa(classes), demo_table(len(classes), rng, shift))
    assert rep["kruskal_wallis"]["immigrant"]["p"] < 1e-3
    assert "HL" not in {d["a"] for d in rep["dunn"]["immigrant"]} | {d["b"] for d in rep["dunn"]["immigrant"]}
    assert any("HL" in w for w in rep["warnings"])
    assert rep["multinomial"]["odds_ratios"]["HH"]["immigrant"] > 1 > rep["multinomial"]["odds_ratios"]["LL"]["immigrant"]
    vals = [demo_table(len(classes), np.random.default_rng(5), shift)[f"h{i}"]["retired"] for i in range(60)]
    assert rep["boxplot"]["HH"]["retired"] == five_number(vals)
    assert five_number([1, 2, 3, 4, 5]) == {"min": 1.0, "q1": 2.0, "median": 3.0, "q3": 4.0, "max": 5.0, "n": 5}


def test_read_demographics(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("hex_id,gender_ratio,immigrant,retired,minor,indigenous\n0:0,50,10,12,20,3\n")
    assert read_demographics(p)["0:0"]["immigrant"] == 10.0
    p.write_text("hex_id,gender_ratio,immigrant,retired,minor,indigenous\n0:0,50,110,12,20,3\n")
    with pytest.raises(ValueError):
        read_demographics(p)
