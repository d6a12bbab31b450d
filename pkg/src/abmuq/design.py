"""Space-filling designs: Latin hypercubes with maximin swap optimization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform


@dataclass
class ReplicatedDesign:
    """Design points in the unit hypercube with a replicate count per point."""

    points: np.ndarray
    replicates: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.replicates = np.asarray(self.replicates, dtype=int)
        if self.replicates.shape != (self.points.shape[0],):
            raise ValueError("need one replicate count per design point")
        if np.any(self.replicates < 1):
            raise ValueError("replicate counts must be >= 1")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def p(self) -> int:
        return self.points.shape[1]

    def total_runs(self) -> int:
        return int(self.replicates.sum())


def lhd(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Random Latin hypercube: one uniformly jittered point per stratum per column.

    Returns an (n, p) array where each column has exactly one coordinate in
    each stratum [i/n, (i+1)/n).
    """
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    X = np.empty((n, p))
    for j in range(p):
        perm = rng.permutation(n)
        lo = perm / n
        hi = (perm + 1) / n
        col = lo + rng.random(n) * (hi - lo)
        # guard against fp rounding landing exactly on the upper stratum edge
        X[:, j] = np.minimum(col, np.nextafter(hi, 0.0))
    return X


def is_latin_hypercube(X: np.ndarray) -> bool:
    """True when every column has exactly one point per stratum [i/n, (i+1)/n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    lo = np.arange(n) / n
    hi = np.arange(1, n + 1) / n
    for j in range(X.shape[1]):
        c = np.sort(X[:, j])
        if np.any(c < lo) or np.any(c >= hi):
            return False
    return True


def min_pairwise_distance(X: np.ndarray) -> float:
    """Minimum Euclidean distance over all point pairs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least two points")
    return float(pdist(X).min())


def improve_maximin(X: np.ndarray, rng: np.random.Generator, n_swaps: int) -> np.ndarray:
    """Stratum-preserving column swaps, accepted only when the min distance increases.

    Swapping the column-j coordinates of two points permutes their stratum
    assignment within that column, so the result is still a Latin hypercube.
    """
    X = np.array(X, dtype=float)
    n, p = X.shape
    if n < 2:
        return X
    D = squareform(pdist(X, "sqeuclidean"))
    np.fill_diagonal(D, np.inf)
    current = D.min()
    others_mask = np.ones(n, dtype=bool)
    for _ in range(n_swaps):
        j = int(rng.integers(p))
        a = int(rng.integers(n))
        b = int(rng.integers(n - 1))
        if b >= a:
            b += 1
        new_a = X[a].copy()
        new_a[j] = X[b, j]
        new_b = X[b].copy()
        new_b[j] = X[a, j]
        # distance between a and b is unchanged by the swap
        da = ((X - new_a) ** 2).sum(axis=1)
        db = ((X - new_b) ** 2).sum(axis=1)
        da[a] = np.inf
        da[b] = D[a, b]
        db[b] = np.inf
        db[a] = D[a, b]
        if n > 2:
            others_mask[[a, b]] = False
            rest = D[np.ix_(others_mask, others_mask)].min()
            others_mask[[a, b]] = True
        else:
            rest = np.inf
        new_min = min(rest, da.min(), db.min())
        if new_min > current:
            X[a, j], X[b, j] = X[b, j], X[a, j]
            D[a, :] = da
            D[:, a] = da
            D[b, :] = db
            D[:, b] = db
            D[a, b] = D[b, a] = da[b]
            np.fill_diagonal(D, np.inf)
            current = new_min
    return X


def maximin_lhd(
    n: int,
    p: int,
    n_restarts: int = 10,
    rng: np.random.Generator | None = None,
    n_swaps: int | None = None,
) -> np.ndarray:
    """Best-of-restarts maximin Latin hypercube.

    All candidate hypercubes are drawn from ``rng`` first, then each is
    improved by swap ascent; the candidate with the largest minimum pairwise
    Euclidean distance wins.
    """
    if n < 2:
        raise ValueError("maximin needs n >= 2")
    if rng is None:
        rng = np.random.default_rng()
    if n_swaps is None:
        n_swaps = 40 * n
    candidates = [lhd(n, p, rng) for _ in range(n_restarts)]
    best = None
    best_d = -np.inf
    for X in candidates:
        Xi = improve_maximin(X, rng, n_swaps)
        d = min_pairwise_distance(Xi)
        if d > best_d:
            best, best_d = Xi, d
    return best
