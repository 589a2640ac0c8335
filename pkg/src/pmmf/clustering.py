"""Randomized anchor clustering of active columns.

Anchors are drawn uniformly from the active set; every other column joins
the anchor with which it has the highest normalized inner product (in
absolute value).  Undersized clusters are dissolved into the remaining
anchors, oversized ones are re-clustered recursively, and columns that end
up unplaced skip the stage (bypass).

Order of repairs: undersize first, then oversize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blocked import BlockedSparseMatrix, Partition

__all__ = ["ClusterParams", "ClusterOutcome", "cluster_columns"]


@dataclass(frozen=True)
class ClusterParams:
    m_target: int = 2
    c_min: int = 10
    c_max: int = 5000
    d_max: int = 500
    bypass_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.m_target < 1:
            raise ValueError("m_target must be >= 1")
        if self.c_min > self.c_max:
            raise ValueError("c_min must not exceed c_max")
        if self.d_max < 0:
            raise ValueError("d_max must be >= 0")


@dataclass
class ClusterOutcome:
    partition: Partition
    bypassed: np.ndarray
    max_depth: int = 0
    trace: list = field(default_factory=list)


class _Scorer:
    """Normalized |inner products| between active columns, via one sparse matrix."""

    def __init__(self, matrix: BlockedSparseMatrix, cols: np.ndarray):
        self.cols = cols
        self.x = matrix.columns_csc(cols.tolist()).tocsc()
        self.x.sum_duplicates()
        self.xt = self.x.T.tocsr()
        self.x_rows = self.x.tocsr()
        self.norms = np.sqrt(np.asarray(self.x.multiply(self.x).sum(axis=0)).ravel())

    def positions(self, members: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.cols, members)

    def scores(self, members: np.ndarray, anchors: np.ndarray) -> np.ndarray:
        """``|<A_j, A_a>| / (|A_j| |A_a|)`` for ``j`` in members, ``a`` in anchors."""
        mi = self.positions(members)
        ai = self.positions(anchors)
        # anchors x all columns: only rows touched by the anchors are visited
        prod = (self.xt[ai] @ self.x_rows).tocsc()
        s = np.abs(prod[:, mi].toarray().T)
        denom = np.outer(self.norms[mi], self.norms[ai])
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, s / denom, 0.0)
        return s


def _assign(scorer: _Scorer, members: np.ndarray, anchors: np.ndarray, lump: bool):
    """Best anchor per member; -1 where no positive score (unless ``lump``).

    Also returns the raw score matrix, used later when a dissolved
    cluster's members (its anchor included) are redistributed.
    """
    raw = scorer.scores(members, anchors)
    s = raw.copy()
    rows = np.searchsorted(members, anchors)
    s[rows, :] = 0.0
    s[rows, np.arange(len(anchors))] = 1.0
    best = np.argmax(s, axis=1)
    if not lump:
        best = np.where(s[np.arange(len(members)), best] > 0, best, -1)
    return best, raw


def _cluster(scorer, members, m, params, rng, depth, trace):
    """Returns (clusters, leftover) for ``members`` using ``m`` fresh anchors."""
    trace.append(depth)
    m = max(1, min(m, len(members)))
    anchors = np.sort(rng.choice(members, size=m, replace=False))
    lump = not params.bypass_enabled
    best, s = _assign(scorer, members, anchors, lump)
    groups = {t: members[best == t] for t in range(m)}
    unplaced = members[best < 0]

    # undersize repair: dissolve the smallest undersized cluster, one at a time
    alive = list(range(m))
    while len(alive) > 1:
        small = [t for t in alive if len(groups[t]) < params.c_min]
        if not small:
            break
        victim = min(small, key=lambda t: (len(groups[t]), t))
        alive.remove(victim)
        moving = groups.pop(victim)
        rows = np.searchsorted(members, moving)
        sub = s[np.ix_(rows, alive)]
        pick = np.argmax(sub, axis=1)
        ok = sub[np.arange(len(moving)), pick] > 0
        if lump:
            ok[:] = True
        for t_local in range(len(alive)):
            t = alive[t_local]
            add = moving[(pick == t_local) & ok]
            if len(add):
                groups[t] = np.sort(np.concatenate([groups[t], add]))
        unplaced = np.sort(np.concatenate([unplaced, moving[~ok]]))

    clusters: list[np.ndarray] = []
    leftover: list[np.ndarray] = []
    for t in alive:
        g = groups[t]
        if len(g) > params.c_max and depth < params.d_max:
            sub_m = math.ceil(len(g) / params.c_max)
            sub_clusters, sub_left = _cluster(scorer, g, sub_m, params, rng, depth + 1, trace)
            if len(sub_clusters) == 1 and len(sub_clusters[0]) == len(g):
                clusters.append(g)
            else:
                clusters.extend(sub_clusters)
                leftover.extend(sub_left)
        else:
            clusters.append(g)
    if len(unplaced):
        if depth < params.d_max:
            sub_m = math.ceil(len(unplaced) / params.c_max)
            sub_clusters, sub_left = _cluster(scorer, unplaced, sub_m, params, rng, depth + 1, trace)
            clusters.extend(sub_clusters)
            leftover.extend(sub_left)
        else:
            leftover.append(unplaced)
    return clusters, leftover


def cluster_columns(matrix: BlockedSparseMatrix, active, params: ClusterParams,
                    rng: np.random.Generator | None = None) -> ClusterOutcome:
    """Partition the active columns of ``matrix`` into clusters plus a bypass set.

    Zero-norm columns always bypass when bypass is enabled.  Columns with no
    positive score against any anchor are re-clustered among themselves
    (fresh anchors, one recursion level deeper); whatever is still unplaced
    at depth ``d_max`` bypasses the stage.  With bypass disabled such columns
    join the lowest anchor's cluster instead.
    """
    active = np.sort(np.asarray(list(active), dtype=np.int64))
    if len(active) == 0:
        raise ValueError("cannot cluster an empty active set")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    scorer = _Scorer(matrix, active)
    nonzero = active[scorer.norms > 0]
    zero = active[scorer.norms == 0]
    trace: list[int] = []

    if params.m_target == 1 or len(nonzero) == 0:
        clusters = [nonzero] if len(nonzero) else []
        bypassed = zero if params.bypass_enabled else np.empty(0, dtype=np.int64)
        if not params.bypass_enabled and len(zero):
            clusters = [np.sort(np.concatenate([nonzero, zero]))]
        trace.append(0)
        return ClusterOutcome(Partition(clusters), bypassed, 0, trace)

    m = min(params.m_target, len(nonzero))
    clusters, leftover = _cluster(scorer, nonzero, m, params, rng, 0, trace)
    left = np.sort(np.concatenate(leftover)) if leftover else np.empty(0, dtype=np.int64)
    if params.bypass_enabled:
        bypassed = np.sort(np.concatenate([left, zero]))
    else:
        extra = np.concatenate([left, zero])
        if len(extra):
            clusters[0] = np.sort(np.concatenate([clusters[0], extra]))
        bypassed = np.empty(0, dtype=np.int64)
    clusters = [c for c in clusters if len(c)]
    return ClusterOutcome(Partition(clusters), bypassed.astype(np.int64), max(trace), trace)
