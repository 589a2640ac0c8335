"""Parallel multiresolution matrix factorization.

A symmetric matrix is driven towards core-diagonal form by stages of
k-point rotations.  Each stage clusters the active columns, reblocks the
matrix to that clustering, searches rotations independently inside every
cluster (randomized greedy, one elimination per rotation) and then applies
all of them to every block pair.  After the last stage the surviving active
submatrix becomes the dense core and each eliminated index keeps its
diagonal entry.

Residual accounting is exact: eliminating row/column ``i`` costs twice the
squared mass of that row restricted to indices that are still active, and
rotations among active indices never change that mass afterwards.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from ._parallel import pmap
from .blocked import BlockedSparseMatrix, BlockGrid, Partition, rotate_columns, transpose_block
from .clustering import ClusterParams, cluster_columns
from .rotations import off_diag_norm_sq, rotation_from_gram

__all__ = [
    "FactorizationError",
    "FactorizeParams",
    "Rotation",
    "Elimination",
    "Stage",
    "CoreDiagonal",
    "MmfFactorization",
    "find_rotations_in_cluster",
    "stage_apply_all_blocks",
    "factorize",
]

logger = logging.getLogger(__name__)


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FactorizeParams:
    k: int = 2
    n_stages: int = 15
    eta: float = 0.5
    cluster: ClusterParams = field(default_factory=ClusterParams)
    core_min: int = 10
    seed: int = 0
    max_core: int = 4096
    drop_tol: float = 0.0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("rotation order k must be >= 2")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if self.core_min < 1:
            raise ValueError("core_min must be >= 1")
        if self.n_stages < 0:
            raise ValueError("n_stages must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FactorizeParams":
        d = dict(d)
        d["cluster"] = ClusterParams(**d.get("cluster", {}))
        return cls(**d)


@dataclass
class Rotation:
    indices: tuple
    matrix: np.ndarray
    stage: int = 0
    cluster: int = 0

    @property
    def k(self) -> int:
        return len(self.indices)


class Elimination(NamedTuple):
    index: int
    diag: float
    mass: float


@dataclass
class Stage:
    partition: Partition
    rotations: list
    eliminated: list
    bypassed: np.ndarray

    @property
    def block_partition(self) -> Partition:
        """Clusters followed by the bypass block (when non-empty)."""
        extra = [self.bypassed] if len(self.bypassed) else []
        return Partition(list(self.partition.clusters) + extra)


@dataclass
class CoreDiagonal:
    core_indices: np.ndarray
    core: np.ndarray
    diag_indices: np.ndarray
    diag_values: np.ndarray

    @property
    def diagonal(self) -> dict:
        return dict(zip(self.diag_indices.tolist(), self.diag_values.tolist()))

    def to_dense(self, n: int) -> np.ndarray:
        h = np.zeros((n, n))
        h[np.ix_(self.core_indices, self.core_indices)] = self.core
        h[self.diag_indices, self.diag_indices] = self.diag_values
        return h


@dataclass
class MmfFactorization:
    n: int
    stages: list
    h: CoreDiagonal
    residual_sq: float
    params: FactorizeParams
    timings: dict = field(default_factory=dict, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def core_dim(self) -> int:
        return len(self.h.core_indices)

    @property
    def rotations(self) -> list:
        return [r for s in self.stages for r in s.rotations]

    @property
    def active_sizes(self) -> list:
        """delta_0 >= delta_1 >= ... : active set size before each stage and at the end."""
        sizes = [self.n]
        for s in self.stages:
            sizes.append(sizes[-1] - len(s.eliminated))
        return sizes

    def elimination_order(self) -> list:
        return [e.index for s in self.stages for e in s.eliminated]


def find_rotations_in_cluster(matrix: BlockedSparseMatrix, u: int, params: FactorizeParams,
                              rng: np.random.Generator, budget: int | None = None,
                              stage: int = 0, clock: list | None = None):
    """Randomized greedy rotation search inside cluster ``u``.

    Works on two dense ``c x c`` matrices: the Gram matrix of the cluster's
    columns (over all stored rows) and the within-cluster block; both are
    conjugated by every rotation.  Returns ``(rotations, eliminations)`` in
    the order found; masses count entries to still-active rows of the
    cluster plus every row outside it.  If ``clock`` is given, the seconds
    spent forming the two dense matrices are appended to it.
    """
    cols = matrix.partition.clusters[u]
    c = len(cols)
    k = params.k
    if c < k:
        return [], []
    steps = math.floor(params.eta * c + 1e-9)
    if budget is not None:
        steps = min(steps, budget)
    if steps <= 0:
        return [], []
    t0 = time.perf_counter()
    g = matrix.gram_of_cluster(u)
    d = matrix.dense_block(u, u)
    if clock is not None:
        clock.append(time.perf_counter() - t0)
    active = np.ones(c, dtype=bool)
    gone: list[int] = []
    rotations: list[Rotation] = []
    elims: list[Elimination] = []

    for _ in range(steps):
        act = np.flatnonzero(active)
        if len(act) < k:
            break
        i = int(act[rng.integers(len(act))])
        if g[i, i] <= 0.0:
            elims.append(Elimination(int(cols[i]), float(d[i, i]), 0.0))
            active[i] = False
            gone.append(i)
            continue
        cand = act[act != i]
        norms = np.sqrt(np.maximum(np.diag(g)[cand], 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(norms > 0, np.abs(g[i, cand]) / norms, 0.0)
        if k == 2:
            partners = [int(cand[np.argmax(score)])]
        else:
            partners = cand[np.argsort(-score, kind="stable")[: k - 1]].tolist()
        kk = [i] + partners
        q = rotation_from_gram(g[np.ix_(kk, kk)])
        g[kk, :] = q @ g[kk, :]
        g[:, kk] = g[:, kk] @ q.T
        d[kk, :] = q @ d[kk, :]
        d[:, kk] = d[:, kk] @ q.T
        rotations.append(Rotation(tuple(int(cols[t]) for t in kk), q, stage, u))

        off = [off_diag_norm_sq(g[t, t], d[t, t]) for t in kk]
        if off[0] < min(off[1:]):
            e = kk[0]
        else:
            e = kk[1 + int(np.argmin(off[1:]))]
        active[e] = False
        col = d[:, e]
        outside = g[e, e] - col @ col
        inside = col[active] @ col[active]
        elims.append(Elimination(int(cols[e]), float(d[e, e]), max(0.0, float(outside + inside))))
        gone.append(e)
    return rotations, elims


def stage_apply_all_blocks(matrix: BlockedSparseMatrix, stage: Stage, threads: int = 1) -> None:
    """In place ``A <- Q A Q^T`` for all rotations of one stage.

    Pass 1 right-multiplies every block ``(w, v)`` by the rotations of
    cluster ``v`` (column operations).  Pass 2 builds block ``(v, u)`` as the
    column-rotated transpose of block ``(u, v)``.  Each block is written by
    exactly one task; blocks whose row and column clusters carry no
    rotations are left untouched.
    """
    m = len(matrix.partition)
    nclust = len(stage.partition)
    for a, b in zip(stage.partition.clusters, matrix.partition.clusters[:nclust]):
        if not np.array_equal(a, b):
            raise ValueError("stage partition does not match matrix partition")
    by_cluster: list[list[Rotation]] = [[] for _ in range(m)]
    for rot in stage.rotations:
        by_cluster[rot.cluster].append(rot)
    touched = [bool(r) for r in by_cluster]
    if not any(touched):
        return
    drop = matrix.drop_tol
    blocks = matrix.blocks

    # rotations of each cluster indexed by the columns they touch; a block
    # only runs the rotations that meet a column it holds at that moment
    by_column: list[dict] = [{} for _ in range(m)]
    for v, rots in enumerate(by_cluster):
        for t, rot in enumerate(rots):
            for j in rot.indices:
                by_column[v].setdefault(j, []).append(t)

    def rotate_block(blk, v):
        rots = by_cluster[v]
        if not rots or not blk:
            return
        if len(blk) > len(rots):
            for rot in rots:
                rotate_columns(blk, rot.indices, rot.matrix, drop)
            return
        cols = by_column[v]
        heap = sorted({t for j in blk for t in cols.get(j, ())})
        queued = set(heap)
        while heap:
            t = heapq.heappop(heap)
            rot = rots[t]
            rotate_columns(blk, rot.indices, rot.matrix, drop)
            for j in rot.indices:
                for t2 in cols[j]:
                    if t2 > t and t2 not in queued:
                        queued.add(t2)
                        heapq.heappush(heap, t2)

    def right(job):
        w, v = job
        rotate_block(blocks[w][v], v)

    def left(job):
        u, v = job
        if not touched[u] and not touched[v]:
            return blocks.peek(v, u)
        t = transpose_block(blocks.peek(u, v))
        rotate_block(t, u)
        return t

    jobs1 = [(w, v) for v in range(m) if touched[v] for w in blocks.partners(v)]
    jobs2 = [(u, v) for u, v, _ in blocks.items()]
    pmap(right, jobs1, threads)
    results = pmap(left, jobs2, threads)
    new = BlockGrid(m)
    for (u, v), blk in zip(jobs2, results):
        new.put(v, u, dict(blk))
    matrix.blocks = new


def _as_blocked(a, drop_tol: float) -> BlockedSparseMatrix:
    if isinstance(a, BlockedSparseMatrix):
        out = a.copy()
        out.drop_tol = drop_tol
        return out
    if sp.issparse(a):
        return BlockedSparseMatrix.from_scipy(a, drop_tol=drop_tol)
    return BlockedSparseMatrix.from_scipy(sp.coo_matrix(np.asarray(a, dtype=float)), drop_tol=drop_tol)


def _check_symmetric(a: BlockedSparseMatrix, tol: float = 1e-9) -> None:
    s = a.to_scipy("csr")
    if s.nnz == 0:
        return
    scale = abs(s).max()
    diff = abs(s - s.T)
    if diff.nnz and diff.max() > tol * scale:
        raise ValueError("input matrix is not symmetric")


def factorize(a, params: FactorizeParams | None = None, threads: int = 1) -> MmfFactorization:
    """Factor a symmetric matrix as ``Q_1^T ... Q_P^T H Q_P ... Q_1``.

    ``a`` may be a :class:`BlockedSparseMatrix`, a scipy sparse matrix or a
    dense array; it is not modified.  ``threads`` only sets the worker pool
    size; results do not depend on it.
    """
    params = params or FactorizeParams()
    work = _as_blocked(a, params.drop_tol)
    n = work.n
    if n < 1:
        raise ValueError("empty matrix")
    _check_symmetric(work)
    work = work.reblock(Partition([np.arange(n)]))
    timings = {k: 0.0 for k in ("clustering", "reblocking", "gram", "rotations", "apply")}
    stages: list[Stage] = []
    residual_sq = 0.0
    active = np.arange(n)

    if n < params.core_min:
        warnings.warn(f"n={n} is below core_min={params.core_min}; H = A", stacklevel=2)
        stages.append(Stage(Partition([np.arange(n)]), [], [], np.empty(0, dtype=np.int64)))

    for p in range(params.n_stages if n >= params.core_min else 0):
        if len(active) <= params.core_min:
            break
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([params.seed, p, 0]))
        outcome = cluster_columns(work, active, params.cluster, rng)
        t1 = time.perf_counter()
        stage = Stage(outcome.partition, [], [], outcome.bypassed)
        work = work.reblock(stage.block_partition, threads)
        t2 = time.perf_counter()
        timings["clustering"] += t1 - t0
        timings["reblocking"] += t2 - t1

        allowed = len(active) - params.core_min
        budgets = []
        for c in outcome.partition.clusters:
            b = min(math.floor(params.eta * len(c) + 1e-9), allowed)
            budgets.append(b)
            allowed -= b

        gram_clock: list[float] = []

        def search(u, p=p):
            r = np.random.default_rng(np.random.SeedSequence([params.seed, p, 1, u]))
            return find_rotations_in_cluster(work, u, params, r, budgets[u], stage=p, clock=gram_clock)

        found = pmap(search, range(len(outcome.partition)), threads)
        t3 = time.perf_counter()
        gram_s = min(sum(gram_clock), t3 - t2)
        timings["gram"] += gram_s
        timings["rotations"] += t3 - t2 - gram_s

        for rots, _ in found:
            stage.rotations.extend(rots)
        stage_apply_all_blocks(work, stage, threads)
        t4 = time.perf_counter()
        timings["apply"] += t4 - t3

        # pairs eliminated in two different clusters were counted by both;
        # keep them with the earlier cluster
        elim_cluster = np.full(n, -1, dtype=np.int64)
        for u, (_, el) in enumerate(found):
            elim_cluster[[e.index for e in el]] = u
        later = [e.index for u, (_, el) in enumerate(found) if u > 0 for e in el]
        corrections = {}
        if later:
            x = work.columns_csc(later)
            for t, j in enumerate(later):
                lo, hi = x.indptr[t], x.indptr[t + 1]
                w = elim_cluster[x.indices[lo:hi]]
                vals = x.data[lo:hi]
                mask = (w >= 0) & (w < elim_cluster[j])
                corrections[j] = float(vals[mask] @ vals[mask])
        for u, (_, el) in enumerate(found):
            for e in el:
                corr = corrections.get(e.index, 0.0)
                mass = max(0.0, e.mass - corr)
                stage.eliminated.append(Elimination(e.index, e.diag, mass))
                residual_sq += 2.0 * mass
        gone = np.array([e.index for e in stage.eliminated], dtype=np.int64)
        active = np.setdiff1d(active, gone)
        stages.append(stage)
        logger.debug("stage %d: %d clusters, %d rotations, active %d", p, len(outcome.partition),
                     len(stage.rotations), len(active))

    if len(active) > params.max_core:
        raise FactorizationError(
            f"core dimension {len(active)} exceeds max_core={params.max_core}; "
            "increase n_stages or eta")
    t0 = time.perf_counter()
    work = work.reblock(Partition([active]))
    core = work.dense_block(0, 0)
    timings["reblocking"] += time.perf_counter() - t0
    elims = [e for s in stages for e in s.eliminated]
    h = CoreDiagonal(
        core_indices=active.astype(np.int64),
        core=0.5 * (core + core.T),
        diag_indices=np.array([e.index for e in elims], dtype=np.int64),
        diag_values=np.array([e.diag for e in elims], dtype=float),
    )
    return MmfFactorization(n, stages, h, residual_sq, params, timings)
