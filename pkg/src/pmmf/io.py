"""Reading matrices and graphs, Laplacian/symmetrize transforms, and the
factorization container.

Matrix Market files are read by ``scipy.io.mmread`` (which expands the
``symmetric`` qualifier and gives pattern entries the value 1); SNAP-style
edge lists are parsed here.  Everything comes back as :class:`Triplets`
with duplicates summed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .blocked import Partition
from .factorize import (CoreDiagonal, Elimination, FactorizeParams, MmfFactorization,
                        Rotation, Stage)

__all__ = [
    "DataError",
    "Triplets",
    "MatrixSource",
    "read_matrix_market",
    "write_matrix_market",
    "read_edge_list",
    "write_id_map",
    "laplacian",
    "symmetrize",
    "load_matrix",
    "save_factorization",
    "load_factorization",
    "CONTAINER_VERSION",
]

CONTAINER_VERSION = 1


class DataError(ValueError):
    """Input that cannot be parsed or does not satisfy a loader's contract."""


@dataclass
class Triplets:
    """Coordinate-format entries of a ``shape[0] x shape[1]`` matrix."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_scipy(cls, a) -> "Triplets":
        a = sp.coo_matrix(a)
        a.sum_duplicates()
        return cls(tuple(a.shape), a.row.astype(np.int64), a.col.astype(np.int64),
                   a.data.astype(float))

    @property
    def n(self) -> int:
        return int(self.shape[0])

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def to_scipy(self, fmt: str = "csr") -> sp.spmatrix:
        a = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=self.shape)
        a.sum_duplicates()
        return a.asformat(fmt)

    def as_set(self) -> set:
        return set(zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist()))


@dataclass
class MatrixSource:
    path: str
    format: str
    transform: str = "none"
    shift: float = 0.0
    n: int = 0
    nnz: int = 0
    gamma: float = 0.0
    id_map: list = field(default_factory=list, repr=False)

    def metadata(self) -> dict:
        return {"path": os.path.basename(self.path), "format": self.format, "transform": self.transform,
                "shift": self.shift, "n": self.n, "nnz": self.nnz, "gamma": self.gamma}


def _check_finite(vals: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(vals))
    if len(bad):
        raise DataError(f"{what}: non-finite value in entry {int(bad[0])}")


def read_matrix_market(path) -> Triplets:
    """Coordinate Matrix Market file as 0-based triplets, duplicates summed."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.readline().decode("latin-1").strip().lower()
    tokens = head.split()
    if len(tokens) != 5 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
        raise DataError(f"{path}: malformed Matrix Market header {head!r}")
    if tokens[2] != "coordinate":
        raise DataError(f"{path}: only coordinate format is supported, got {tokens[2]!r}")
    if tokens[3] not in ("real", "integer", "pattern"):
        raise DataError(f"{path}: unsupported field {tokens[3]!r}")
    if tokens[4] not in ("general", "symmetric"):
        raise DataError(f"{path}: unsupported symmetry {tokens[4]!r}")
    try:
        a = scipy.io.mmread(path)
    except Exception as err:  # scipy reports overflow and syntax problems in several ways
        raise DataError(f"{path}: {err}") from err
    t = Triplets.from_scipy(a)
    _check_finite(t.vals, path)
    return t


def write_matrix_market(path, t: Triplets, symmetric: bool = False) -> None:
    """Write triplets in coordinate format with round-trip precision."""
    a = t.to_scipy("coo")
    if symmetric:
        a = sp.tril(a, format="coo")
    scipy.io.mmwrite(os.fspath(path), a, symmetry="symmetric" if symmetric else "general",
                     precision=17)


def read_edge_list(path):
    """SNAP-style edge list as symmetric adjacency triplets.

    Lines are ``u v [w]``; ``#`` starts a comment.  Node ids are compacted
    to ``0..n-1`` in increasing order of the original id; the returned
    ``id_map[k]`` is the original id of node ``k``.  Each undirected edge
    contributes ``(u, v)`` and ``(v, u)``; a self-loop contributes ``(u, u)``
    once; duplicates are summed.  Returns ``(triplets, id_map)``.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    us, vs, ws = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise DataError(f"{path}:{lineno}: expected 'u v [w]', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: node ids must be integers") from None
            try:
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise DataError(f"{path}:{lineno}: weight must be a number") from None
            if not np.isfinite(w):
                raise DataError(f"{path}:{lineno}: non-finite weight")
            us.append(u)
            vs.append(v)
            ws.append(w)
    if not us:
        raise DataError(f"{path}: no edges")
    ids = np.unique(np.concatenate([us, vs]))
    u = np.searchsorted(ids, us)
    v = np.searchsorted(ids, vs)
    w = np.asarray(ws, dtype=float)
    off = u != v
    rows = np.concatenate([u, v[off]])
    cols = np.concatenate([v, u[off]])
    vals = np.concatenate([w, w[off]])
    n = len(ids)
    t = Triplets.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))
    return t, ids.tolist()


def write_id_map(path, id_map) -> None:
    with open(path, "w") as fh:
        json.dump({"original_ids": [int(i) for i in id_map]}, fh)
        fh.write("\n")


def laplacian(t: Triplets, n: int | None = None, shift: float = 0.0) -> Triplets:
    """Graph Laplacian ``D - W (+ shift I)`` of symmetric adjacency triplets."""
    n = t.n if n is None else int(n)
    if np.any(t.vals < 0):
        raise DataError("negative edge weights are not allowed for the Laplacian")
    w = sp.coo_matrix((t.vals, (t.rows, t.cols)), shape=(n, n)).tocsr()
    w.sum_duplicates()
    d = np.asarray(w.sum(axis=1)).ravel()
    lap = sp.diags(d + shift) - w
    return Triplets.from_scipy(lap)


def symmetrize(t: Triplets) -> Triplets:
    """``A + A^T``."""
    a = t.to_scipy("csr")
    return Triplets.from_scipy(a + a.T)


def _is_symmetric(a: sp.spmatrix) -> bool:
    d = (a - a.T).tocoo()
    d.eliminate_zeros()
    return d.nnz == 0


def load_matrix(path, format: str | None = None, transform: str = "none", shift: float = 0.0):
    """Read a file and apply a transform.  Returns ``(csr_matrix, MatrixSource)``.

    ``format`` defaults from the extension (``.mtx`` is Matrix Market,
    anything else an edge list).  The result must be square and exactly
    symmetric.
    """
    path = os.fspath(path)
    if format is None:
        format = "matrix_market" if path.lower().endswith(".mtx") else "edge_list"
    id_map: list = []
    if format == "matrix_market":
        t = read_matrix_market(path)
    elif format == "edge_list":
        t, id_map = read_edge_list(path)
    else:
        raise DataError(f"unknown format {format!r}")
    if t.shape[0] != t.shape[1]:
        raise DataError(f"{path}: matrix is {t.shape[0]}x{t.shape[1]}, not square")
    if transform == "laplacian":
        t = laplacian(t, shift=shift)
    elif transform == "symmetrize":
        t = symmetrize(t)
    elif transform != "none":
        raise DataError(f"unknown transform {transform!r}")
    a = t.to_scipy("csr")
    if transform != "laplacian" and shift:
        a = (a + shift * sp.eye(a.shape[0])).tocsr()
    if not _is_symmetric(a):
        raise DataError(f"{path}: matrix is not symmetric (try transform=symmetrize)")
    n = a.shape[0]
    src = MatrixSource(path, format, transform, shift, n, int(a.nnz),
                       float(a.nnz) / float(n * n) if n else 0.0, id_map)
    return a, src


# ---------------------------------------------------------------------- container


def _stage_to_dict(s: Stage) -> dict:
    return {
        "clusters": [c.tolist() for c in s.partition.clusters],
        "bypassed": s.bypassed.tolist(),
        "rotations": [{"indices": list(r.indices), "matrix": r.matrix.tolist(), "cluster": r.cluster}
                      for r in s.rotations],
        "eliminated": [[e.index, e.diag, e.mass] for e in s.eliminated],
    }


def _stage_from_dict(d: dict, p: int) -> Stage:
    rots = [Rotation(tuple(int(i) for i in r["indices"]), np.asarray(r["matrix"], dtype=float), p,
                     int(r["cluster"])) for r in d["rotations"]]
    elims = [Elimination(int(i), float(x), float(m)) for i, x, m in d["eliminated"]]
    return Stage(Partition(d["clusters"]), rots, elims, np.asarray(d["bypassed"], dtype=np.int64))


def save_factorization(f: MmfFactorization, path) -> None:
    """Write a factorization as versioned JSON (floats round-trip exactly)."""
    doc = {
        "format": "pmmf-factorization",
        "version": CONTAINER_VERSION,
        "n": f.n,
        "params": f.params.to_dict(),
        "residual_sq": f.residual_sq,
        "stages": [_stage_to_dict(s) for s in f.stages],
        "core": {"indices": f.h.core_indices.tolist(), "values": f.h.core.tolist()},
        "diagonal": {"indices": f.h.diag_indices.tolist(), "values": f.h.diag_values.tolist()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_factorization(path) -> MmfFactorization:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read factorization {path}: {err}") from err
    if doc.get("format") != "pmmf-factorization":
        raise DataError(f"{path}: not a factorization container")
    if doc.get("version") != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported container version {doc.get('version')!r}")
    core_idx = np.asarray(doc["core"]["indices"], dtype=np.int64)
    core = np.asarray(doc["core"]["values"], dtype=float).reshape(len(core_idx), len(core_idx))
    h = CoreDiagonal(core_idx, core, np.asarray(doc["diagonal"]["indices"], dtype=np.int64),
                     np.asarray(doc["diagonal"]["values"], dtype=float))
    stages = [_stage_from_dict(s, p) for p, s in enumerate(doc["stages"])]
    return MmfFactorization(int(doc["n"]), stages, h, float(doc["residual_sq"]),
                            FactorizeParams.from_dict(doc["params"]), {})
