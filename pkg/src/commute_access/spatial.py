"""Hexagon contiguity weights and bivariate local Moran's I."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geo import HEX_DIRECTIONS, hex_id

PERMUTATIONS = 999
ALPHA = 0.05


class DegenerateField(ValueError):
    pass


@dataclass(frozen=True)
class SpatialWeights:
    """Row-standardized contiguity weights on a set of hexagons.

    On a hexagonal lattice queen and rook contiguity coincide: the only
    neighbours are the six edge-sharing cells.
    """

    ids: list[str]
    neighbors: list[np.ndarray]  # indices into ``ids``
    weights: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def islands(self) -> list[int]:
        return [i for i, nb in enumerate(self.neighbors) if len(nb) == 0]

    def lag(self, z: np.ndarray) -> np.ndarray:
        return np.array([float(np.dot(w, z[nb])) if len(nb) else 0.0
                         for nb, w in zip(self.neighbors, self.weights)])

    def dense(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        for i, (nb, w) in enumerate(zip(self.neighbors, self.weights)):
            W[i, nb] = w
        return W


def build_weights(hexes) -> SpatialWeights:
    """Queen contiguity among the given hexagons (order preserved)."""
    ids = [h.hex_id for h in hexes]
    pos = {h: i for i, h in enumerate(ids)}
    neighbors, weights = [], []
    for h in hexes:
        nb = sorted(pos[k] for k in (hex_id(h.q + dq, h.r + dr) for dq, dr in HEX_DIRECTIONS) if k in pos)
        nb = np.asarray(nb, int)
        neighbors.append(nb)
        weights.append(np.full(len(nb), 1.0 / len(nb)) if len(nb) else np.zeros(0))
    return SpatialWeights(ids, neighbors, weights)


@dataclass(frozen=True)
class LisaResult:
    hex_id: str
    I: float
    pseudo_p: float
    cls: str
    z_x: float
    lag_y: float


def _zscore(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    if not sd > 0:
        raise DegenerateField("degenerate_field")
    return (v - v.mean()) / sd


def _hex_stream(seed: int, i: int) -> np.random.Generator:
    # counter-based stream keyed by (seed, hex index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**63 - 1), i])))


def _draw_without_replacement(rng: np.random.Generator, n: int, k: int, reps: int) -> np.ndarray:
    """``reps`` rows of ``k`` distinct integers from ``range(n)``."""
    if k == 0:
        return np.zeros((reps, 0), int)
    if n < 4 * k:
        return np.stack([rng.permutation(n)[:k] for _ in range(reps)])
    out = rng.integers(0, n, size=(reps, k))
    while True:
        srt = np.sort(out, axis=1)
        dup = np.flatnonzero((np.diff(srt, axis=1) == 0).any(axis=1))
        if len(dup) == 0:
            return out
        out[dup] = rng.integers(0, n, size=(len(dup), k))


def _pseudo_p(i, zx_i, I_i, zy, nb_w, n, permutations, seed):
    k = len(nb_w)
    rng = _hex_stream(seed, i)
    draws = _draw_without_replacement(rng, n - 1, k, permutations)
    draws = draws + (draws >= i)  # skip the hex itself
    lags = zy[draws] @ nb_w
    sims = zx_i * lags
    if I_i >= 0:
        extreme = int(np.count_nonzero(sims >= I_i))
    else:
        extreme = int(np.count_nonzero(sims <= I_i))
    return (extreme + 1) / (permutations + 1)


def _quadrant(zx: float, lag: float) -> str:
    return ("H" if zx > 0 else "L") + ("H" if lag > 0 else "L")


def bivariate_lisa(x, y, w: SpatialWeights, permutations: int = PERMUTATIONS, alpha: float = ALPHA,
                   seed: int = 12345, n_jobs: int = 1) -> list[LisaResult]:
    """Local association between ``x`` at a hexagon and the lag of ``y`` around it.

    ``I_i = z_x[i] * sum_j w_ij z_y[j]`` with both fields z-standardized
    (population sd) over non-island hexagons. Significance comes from
    conditional permutation: ``z_x[i]`` and the weights stay fixed while the
    neighbour values are drawn from all other hexagons. The pseudo p-value is
    one-sided in the direction of the observed sign. Significant hexagons are
    labelled by quadrant (first letter: ``x`` side, second: lag of ``y``);
    others, and islands, are ``NS``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) != w.n or len(y) != w.n:
        raise ValueError("x and y must align with the weights")
    keep = np.array([len(nb) > 0 for nb in w.neighbors])
    idx = np.flatnonzero(keep)
    if len(idx) < 2:
        raise DegenerateField("degenerate_field")
    zx = np.zeros(w.n)
    zy = np.zeros(w.n)
    zx[idx] = _zscore(x[idx])
    zy[idx] = _zscore(y[idx])
    lag = w.lag(zy)
    I = zx * lag
    # permutation pool: non-island hexes, reindexed
    pool_pos = -np.ones(w.n, int)
    pool_pos[idx] = np.arange(len(idx))
    zy_pool = zy[idx]
    n_pool = len(idx)

    def one(i):
        if not keep[i]:
            return 1.0
        return _pseudo_p(int(pool_pos[i]), zx[i], I[i], zy_pool, w.weights[i], n_pool,
                         permutations, seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            p = list(ex.map(one, range(w.n)))
    else:
        p = [one(i) for i in range(w.n)]
    out = []
    for i in range(w.n):
        sig = keep[i] and p[i] <= alpha
        out.append(LisaResult(w.ids[i], float(I[i]), float(p[i]),
                              _quadrant(zx[i], lag[i]) if sig else "NS",
                              float(zx[i]), float(lag[i])))
    return out


def global_bivariate_moran(x, y, w: SpatialWeights) -> float:
    """``sum_i z_x[i] * lag(z_y)[i] / n`` over non-island hexagons."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    idx = np.flatnonzero([len(nb) > 0 for nb in w.neighbors])
    zx = np.zeros(w.n)
    zy = np.zeros(w.n)
    zx[idx] = _zscore(x[idx])
    zy[idx] = _zscore(y[idx])
    W = w.dense()
    return float(zx[idx] @ (W @ zy)[idx] / len(idx))


def lisa_properties(results) -> dict[str, dict]:
    return {r.hex_id: {"hex_id": r.hex_id, "I": r.I, "pseudo_p": r.pseudo_p, "class": r.cls}
            for r in results}

