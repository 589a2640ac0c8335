"""Symmetric sparse matrices stored as a sparse m x m grid of sparse blocks.

The block structure is dictated by a :class:`Partition` of the (active)
index set into clusters.  Block ``(u, v)`` holds the entries ``A[B_u, B_v]``
and is stored column-wise: a dict mapping a column index of ``B_v`` to a
dict ``row -> value`` over rows of ``B_u``.  Inside blocks entries are keyed
by *global* index, so reblocking moves column maps around without renaming
anything; :meth:`Partition.lookup` translates to block-local offsets.

Only blocks that were ever written exist, and block ``(u, v)`` exists iff
``(v, u)`` does, so the nonempty blocks of block column ``v`` are found from
the keys of block row ``v``.  With many small clusters this keeps every pass
proportional to the number of nonzeros rather than to ``m**2``.

Clusters need not be contiguous index ranges.
"""

from __future__ import annotations

from types import MappingProxyType
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from ._parallel import pmap

__all__ = [
    "Partition",
    "BlockGrid",
    "BlockedSparseMatrix",
    "BlockedVector",
    "rotate_columns",
    "transpose_block",
]


class Partition:
    """Ordered, pairwise disjoint clusters of global indices."""

    def __init__(self, clusters: Iterable[Iterable[int]]):
        self.clusters: list[np.ndarray] = [
            np.asarray(list(c), dtype=np.int64).reshape(-1) for c in clusters
        ]
        self._owner: dict[int, int] = {}
        self._offset: dict[int, int] = {}
        for u, members in enumerate(self.clusters):
            for a, i in enumerate(members.tolist()):
                if i in self._owner:
                    raise ValueError(f"index {i} appears in more than one cluster")
                self._owner[i] = u
                self._offset[i] = a

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls([range(n)])

    def __len__(self) -> int:
        return len(self.clusters)

    def __contains__(self, i: int) -> bool:
        return i in self._owner

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition) or len(other) != len(self):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.clusters, other.clusters))

    def __repr__(self) -> str:
        sizes = [len(c) for c in self.clusters]
        return f"Partition(m={len(self)}, sizes={sizes})"

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.clusters]

    @property
    def indices(self) -> np.ndarray:
        """All covered indices, in blocked (cluster-concatenated) order."""
        if not self.clusters:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.clusters)

    def owner(self, i: int) -> int:
        return self._owner[i]

    def lookup(self, i: int) -> tuple[int, int]:
        """Return ``(cluster id, local offset)`` of global index ``i``."""
        return self._owner[i], self._offset[i]


def rotate_columns(block: dict, indices: Sequence[int], q: np.ndarray, drop_tol: float = 0.0) -> None:
    """In place ``block <- block @ q.T`` restricted to the given columns.

    ``block`` maps column -> {row: value}.  The new pattern of every rotated
    column is the union of the old patterns; entries are kept unless
    ``|value| <= drop_tol`` with ``drop_tol > 0``.
    """
    k = len(indices)
    old = [block.get(j) for j in indices]
    if all(c is None for c in old):
        return
    old = [c if c is not None else {} for c in old]
    rows: set = set()
    for c in old:
        rows.update(c)
    new = [dict() for _ in range(k)]
    if k == 2:
        q00, q01 = float(q[0, 0]), float(q[0, 1])
        q10, q11 = float(q[1, 0]), float(q[1, 1])
        c0, c1 = old
        n0, n1 = new
        get0, get1 = c0.get, c1.get
        for r in rows:
            x0 = get0(r, 0.0)
            x1 = get1(r, 0.0)
            n0[r] = q00 * x0 + q01 * x1
            n1[r] = q10 * x0 + q11 * x1
    else:
        rows_list = list(rows)
        x = np.array([[c.get(r, 0.0) for r in rows_list] for c in old])
        y = q @ x
        for t in range(k):
            new[t] = dict(zip(rows_list, y[t].tolist()))
    if drop_tol > 0:
        new = [{r: v for r, v in col.items() if abs(v) > drop_tol} for col in new]
    for j, col in zip(indices, new):
        if col:
            block[j] = col
        else:
            block.pop(j, None)


def transpose_block(block: dict) -> dict:
    out: dict = {}
    for j, col in block.items():
        for i, v in col.items():
            d = out.get(i)
            if d is None:
                out[i] = {j: v}
            else:
                d[j] = v
    return out


_EMPTY = MappingProxyType({})


class _BlockRow(dict):
    """Block row ``u``: ``{v: block}``; indexing a missing ``v`` creates the block pair."""

    __slots__ = ("grid", "u")

    def __init__(self, grid: "BlockGrid", u: int):
        super().__init__()
        self.grid = grid
        self.u = u

    def __missing__(self, v: int) -> dict:
        blk: dict = {}
        self[v] = blk
        if v != self.u:
            self.grid.rows[v].setdefault(self.u, {})
        return blk


class BlockGrid:
    """Sparse ``m x m`` grid: ``grid[u][v]`` is block ``(u, v)`` (created on demand)."""

    def __init__(self, m: int):
        self.rows = [_BlockRow(self, u) for u in range(m)]

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, u: int) -> _BlockRow:
        return self.rows[u]

    def peek(self, u: int, v: int):
        """Block ``(u, v)`` for reading; never creates it."""
        return self.rows[u].get(v, _EMPTY)

    def partners(self, v: int) -> list[int]:
        """Sorted block rows ``w`` whose block ``(w, v)`` may be nonempty."""
        return sorted(self.rows[v].keys())

    def items(self):
        """``(u, v, block)`` over existing blocks, in sorted order."""
        for u, row in enumerate(self.rows):
            for v in sorted(row):
                yield u, v, row[v]

    def put(self, u: int, v: int, blk: dict) -> None:
        self.rows[u][v] = blk
        if v != u:
            self.rows[v].setdefault(u, {})


class BlockedSparseMatrix:
    """Symmetric sparse ``n x n`` matrix in symmetric blocked form.

    Only indices covered by the partition are stored; everything else
    (e.g. rows/columns eliminated and dropped at reblock time) reads as 0.
    """

    def __init__(self, n: int, partition: Partition, blocks: BlockGrid | None = None,
                 drop_tol: float = 0.0):
        self.n = int(n)
        self.partition = partition
        self.drop_tol = float(drop_tol)
        m = len(partition)
        if blocks is None:
            blocks = BlockGrid(m)
        if len(blocks) != m:
            raise ValueError("block grid does not match the partition")
        self.blocks = blocks
        for c in partition.clusters:
            if len(c) and (c.min() < 0 or c.max() >= self.n):
                raise IndexError("partition references an index outside [0, n)")

    # ------------------------------------------------------------------ construction

    @classmethod
    def from_triplets(cls, n: int, entries, partition: Partition | None = None,
                      drop_tol: float = 0.0) -> "BlockedSparseMatrix":
        """Build from ``(i, j, value)`` triplets; duplicates are summed."""
        if partition is None:
            partition = Partition.trivial(n)
        mat = cls(n, partition, drop_tol=drop_tol)
        owner = partition._owner
        blocks = mat.blocks
        for i, j, v in entries:
            i, j, v = int(i), int(j), float(v)
            if not (0 <= i < n and 0 <= j < n):
                raise IndexError(f"entry ({i}, {j}) out of range for n={n}")
            if not np.isfinite(v):
                raise ValueError(f"non-finite value at ({i}, {j})")
            if i not in owner or j not in owner:
                raise IndexError(f"entry ({i}, {j}) not covered by the partition")
            col = blocks[owner[i]][owner[j]].setdefault(j, {})
            col[i] = col.get(i, 0.0) + v
        return mat

    @classmethod
    def from_scipy(cls, a, partition: Partition | None = None, drop_tol: float = 0.0) -> "BlockedSparseMatrix":
        a = sp.coo_matrix(a)
        a.sum_duplicates()
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        return cls.from_triplets(a.shape[0], zip(a.row.tolist(), a.col.tolist(), a.data.tolist()),
                                 partition, drop_tol)

    def copy(self) -> "BlockedSparseMatrix":
        blocks = BlockGrid(len(self.partition))
        for u, v, blk in self.blocks.items():
            blocks.put(u, v, {j: dict(col) for j, col in blk.items()})
        return BlockedSparseMatrix(self.n, self.partition, blocks, self.drop_tol)

    # ------------------------------------------------------------------ element access

    def _check(self, i: int, j: int) -> None:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"index ({i}, {j}) out of range for n={self.n}")

    def get(self, i: int, j: int) -> float:
        self._check(i, j)
        owner = self.partition._owner
        if i not in owner or j not in owner:
            return 0.0
        col = self.blocks.peek(owner[i], owner[j]).get(j)
        return 0.0 if col is None else col.get(i, 0.0)

    def set(self, i: int, j: int, value: float) -> None:
        """Set one entry.  Keeping the matrix symmetric is the caller's job."""
        self._check(i, j)
        owner = self.partition._owner
        if i not in owner or j not in owner:
            raise IndexError(f"index ({i}, {j}) is not covered by the partition")
        self.blocks[owner[i]][owner[j]].setdefault(j, {})[i] = float(value)

    def locate(self, i: int, j: int) -> tuple[int, int, int, int]:
        """Block coordinates ``(u, v, a, b)`` of global entry ``(i, j)``."""
        u, a = self.partition.lookup(i)
        v, b = self.partition.lookup(j)
        return u, v, a, b

    def block(self, u: int, v: int) -> sp.csc_matrix:
        """Block ``(u, v)`` in local coordinates."""
        rows_u, cols_v = self.partition.clusters[u], self.partition.clusters[v]
        off = self.partition._offset
        r, c, d = [], [], []
        for j, col in self.blocks.peek(u, v).items():
            b = off[j]
            for i, x in col.items():
                r.append(off[i])
                c.append(b)
                d.append(x)
        return sp.csc_matrix((d, (r, c)), shape=(len(rows_u), len(cols_v)))

    def column(self, j: int) -> dict:
        """Column ``j`` as ``{row: value}`` across all block rows."""
        v = self.partition.owner(j)
        out: dict = {}
        for w in self.blocks.partners(v):
            col = self.blocks.peek(w, v).get(j)
            if col:
                out.update(col)
        return out

    @property
    def nnz(self) -> int:
        return sum(len(col) for _, _, blk in self.blocks.items() for col in blk.values())

    def triplets(self) -> list[tuple[int, int, float]]:
        out = []
        for _, _, blk in self.blocks.items():
            for j, col in blk.items():
                out.extend((i, j, x) for i, x in col.items())
        out.sort()
        return out

    def to_scipy(self, fmt: str = "csr") -> sp.spmatrix:
        t = self.triplets()
        if t:
            i, j, x = zip(*t)
        else:
            i, j, x = (), (), ()
        return sp.coo_matrix((x, (i, j)), shape=(self.n, self.n)).asformat(fmt)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for _, _, blk in self.blocks.items():
            for j, col in blk.items():
                for i, x in col.items():
                    out[i, j] = x
        return out

    def columns_csc(self, cols: Sequence[int]) -> sp.csc_matrix:
        """The given columns (all stored rows) as an ``n x len(cols)`` CSC matrix."""
        owner = self.partition._owner
        cols = [int(j) for j in cols]
        wanted: dict = {}
        for j in cols:
            wanted.setdefault(owner[j], {})[j] = []
        for v, pieces in wanted.items():
            for w in self.blocks.partners(v):
                blk = self.blocks.peek(w, v)
                if len(blk) < len(pieces):
                    for j, col in blk.items():
                        out = pieces.get(j)
                        if out is not None and col:
                            out.append(col)
                else:
                    for j, out in pieces.items():
                        col = blk.get(j)
                        if col:
                            out.append(col)
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for j in cols:
            for col in wanted[owner[j]][j]:
                indices.extend(col.keys())
                data.extend(col.values())
            indptr.append(len(indices))
        out = sp.csc_matrix((np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64),
                             np.asarray(indptr, dtype=np.int64)), shape=(self.n, len(cols)))
        out.has_sorted_indices = False
        return out

    def dense_block(self, u: int, v: int) -> np.ndarray:
        return self.block(u, v).toarray()

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        a = self.to_scipy("csr")
        d = abs(a - a.T)
        return d.nnz == 0 or d.max() <= tol

    # ------------------------------------------------------------------ kernels

    def column_dot(self, j1: int, j2: int) -> float:
        owner = self.partition._owner
        v1, v2 = owner[j1], owner[j2]
        s = 0.0
        for w in sorted(set(self.blocks.partners(v1)) & set(self.blocks.partners(v2))):
            c1 = self.blocks.peek(w, v1).get(j1)
            c2 = self.blocks.peek(w, v2).get(j2)
            if not c1 or not c2:
                continue
            if len(c1) > len(c2):
                c1, c2 = c2, c1
            get = c2.get
            for i, x in c1.items():
                y = get(i)
                if y is not None:
                    s += x * y
        return s

    def column_norm_sq(self, j: int) -> float:
        return self.column_dot(j, j)

    def column_norms(self, cols: Sequence[int]) -> np.ndarray:
        x = self.columns_csc(cols)
        return np.sqrt(np.asarray(x.multiply(x).sum(axis=0)).ravel())

    def gram_of_cluster(self, u: int) -> np.ndarray:
        """Dense Gram matrix of the columns of cluster ``u`` over all stored rows."""
        x = self.columns_csc(self.partition.clusters[u].tolist())
        g = (x.T @ x).toarray()
        return 0.5 * (g + g.T)

    def apply_rotation_symmetric(self, indices: Sequence[int], q: np.ndarray) -> None:
        """In place ``A <- q A q^T`` for a k-point rotation on ``indices``.

        All indices must lie in one cluster.  Columns are rotated across every
        block row, then the new columns are mirrored into the rows.
        """
        indices = [int(i) for i in indices]
        owner = self.partition._owner
        us = {owner[i] for i in indices}
        if len(us) != 1:
            raise ValueError("rotation indices span multiple clusters")
        u = us.pop()
        q = np.asarray(q, dtype=float)
        kset = set(indices)
        partners = self.blocks.partners(u)
        for w in partners:
            rotate_columns(self.blocks[w][u], indices, q)
        # rows indices now hold (A q^T)[K, K]; left-multiply that corner by q
        blk = self.blocks[u][u]
        cols = [blk.get(j, {}) for j in indices]
        corner = np.array([[c.get(r, 0.0) for c in cols] for r in indices])
        corner = q @ corner
        for t, j in enumerate(indices):
            col = blk.setdefault(j, {})
            for s, r in enumerate(indices):
                col[r] = float(corner[s, t])
        # mirror rows K of the other columns from the new columns
        for w in partners:
            for j in indices:
                col = self.blocks.peek(w, u).get(j)
                if not col:
                    continue
                for r, x in col.items():
                    if r in kset:
                        continue
                    target = self.blocks[u][owner[r]]
                    tcol = target.get(r)
                    if tcol is None:
                        target[r] = {j: x}
                    else:
                        tcol[j] = x
        if self.drop_tol > 0:
            self._purge_small(indices)

    def _purge_small(self, indices: Sequence[int]) -> None:
        owner = self.partition._owner
        u = owner[indices[0]]
        for w in self.blocks.partners(u):
            for j in indices:
                col = self.blocks.peek(w, u).get(j)
                if not col:
                    continue
                for r in [r for r, x in col.items() if abs(x) <= self.drop_tol]:
                    del col[r]
        # rows K in other columns
        for v in self.blocks.partners(u):
            for j, col in self.blocks.peek(u, v).items():
                for r in indices:
                    if r in col and abs(col[r]) <= self.drop_tol:
                        del col[r]

    def reblock(self, new_partition: Partition, threads: int = 1) -> "BlockedSparseMatrix":
        """Two-phase repartition; indices absent from ``new_partition`` are dropped.

        Phase 1 reblocks every column of blocks row-wise (independently per
        old block column); phase 2 reblocks every new row of blocks
        column-wise (independently per new block row).
        """
        old = self.partition
        for c in new_partition.clusters:
            for i in c.tolist():
                if i not in old:
                    raise IndexError(f"new partition references index {i} absent from the matrix")
        m_old, m_new = len(old), len(new_partition)
        new_owner = new_partition._owner

        def phase1(v: int) -> dict:
            # column-of-blocks v: route every row to its new block row
            out: dict = {}
            for w in self.blocks.partners(v):
                for j, col in self.blocks.peek(w, v).items():
                    if j not in new_owner:
                        continue
                    for i, x in col.items():
                        u = new_owner.get(i)
                        if u is None:
                            continue
                        stripe = out.get(u)
                        if stripe is None:
                            stripe = out[u] = {}
                        d = stripe.get(j)
                        if d is None:
                            stripe[j] = {i: x}
                        else:
                            d[i] = x
            return out

        def phase2(parts: list) -> dict:
            # row-of-blocks u: route every column to its new block column
            row: dict = {}
            for stripe in parts:
                for j, col in stripe.items():
                    v = new_owner[j]
                    blk = row.get(v)
                    if blk is None:
                        blk = row[v] = {}
                    blk[j] = col
            return row

        stripes = pmap(phase1, range(m_old), threads)
        by_row: list[list[dict]] = [[] for _ in range(m_new)]
        for out in stripes:
            for u in sorted(out):
                by_row[u].append(out[u])
        rows = pmap(phase2, by_row, threads)
        blocks = BlockGrid(m_new)
        for u, row in enumerate(rows):
            for v in sorted(row):
                blocks.put(u, v, row[v])
        return BlockedSparseMatrix(self.n, new_partition, blocks, self.drop_tol)

    def multiply_vector(self, x: "BlockedVector") -> "BlockedVector":
        if x.partition != self.partition:
            raise ValueError("vector partition does not match matrix partition")
        off = self.partition._offset
        segs = [np.zeros(len(c)) for c in self.partition.clusters]
        for u, v, blk in self.blocks.items():
            y = segs[u]
            xv = x.segments[v]
            for j, col in blk.items():
                xj = xv[off[j]]
                if xj == 0.0:
                    continue
                for i, a in col.items():
                    y[off[i]] += a * xj
        return BlockedVector(self.partition, segs)


class BlockedVector:
    """A vector split into one dense segment per cluster of a partition."""

    def __init__(self, partition: Partition, segments: list[np.ndarray]):
        if len(segments) != len(partition):
            raise ValueError("one segment per cluster required")
        for s, c in zip(segments, partition.clusters):
            if len(s) != len(c):
                raise ValueError("segment length does not match cluster size")
        self.partition = partition
        self.segments = [np.asarray(s, dtype=float) for s in segments]

    @classmethod
    def from_dense(cls, x: np.ndarray, partition: Partition) -> "BlockedVector":
        x = np.asarray(x, dtype=float)
        return cls(partition, [x[c].copy() for c in partition.clusters])

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for s, c in zip(self.segments, self.partition.clusters):
            out[c] = s
        return out

    def reblock(self, new_partition: Partition) -> "BlockedVector":
        pos = {}
        for u, c in enumerate(self.partition.clusters):
            for a, i in enumerate(c.tolist()):
                pos[i] = (u, a)
        segs = []
        for c in new_partition.clusters:
            seg = np.empty(len(c))
            for a, i in enumerate(c.tolist()):
                if i not in pos:
                    raise IndexError(f"index {i} absent from vector")
                u, b = pos[i]
                seg[a] = self.segments[u][b]
            segs.append(seg)
        return BlockedVector(new_partition, segs)
