"""Matrix-free arithmetic with a stored factorization.

``apply`` computes ``Q^T H Q v`` by pushing ``v`` through the stored
rotations one at a time, stage by stage; between stages the vector is
regathered into the next stage's blocked order (the vector analogue of
reblocking the matrix).  ``apply_inverse`` and ``apply_inv_sqrt`` replace
``H`` by a pseudo-inverse power computed from an eigendecomposition of
the core plus elementwise powers of the retained diagonal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .factorize import MmfFactorization

__all__ = [
    "ZERO_THRESHOLD",
    "CoreOperator",
    "apply",
    "apply_inverse",
    "apply_inv_sqrt",
    "reconstruct_dense",
    "rotation_matrix",
    "residual_frobenius",
    "best_rank_k_error",
    "NystromSketch",
    "nystrom_uniform",
]

logger = logging.getLogger(__name__)

ZERO_THRESHOLD = 1e-12
DENSE_CAP = 4096


@numba.njit(cache=True)
def _rotate_forward(v, idx, mats):
    nrot, k = idx.shape
    ncol = v.shape[1]
    tmp = np.empty(k)
    for t in range(nrot):
        for c in range(ncol):
            for a in range(k):
                tmp[a] = v[idx[t, a], c]
            for a in range(k):
                s = 0.0
                for b in range(k):
                    s += mats[t, a, b] * tmp[b]
                v[idx[t, a], c] = s


@numba.njit(cache=True)
def _rotate_backward(v, idx, mats):
    nrot, k = idx.shape
    ncol = v.shape[1]
    tmp = np.empty(k)
    for t in range(nrot - 1, -1, -1):
        for c in range(ncol):
            for a in range(k):
                tmp[a] = v[idx[t, a], c]
            for a in range(k):
                s = 0.0
                for b in range(k):
                    s += mats[t, b, a] * tmp[b]
                v[idx[t, a], c] = s


@dataclass
class _StagePlan:
    order: np.ndarray      # global indices in blocked order
    idx: np.ndarray        # (nrot, k) positions within ``order``
    mats: np.ndarray       # (nrot, k, k)


def _plans(f: MmfFactorization) -> list:
    plans = f._cache.get("plans")
    if plans is not None:
        return plans
    k = f.params.k
    plans = []
    for stage in f.stages:
        if not stage.rotations:
            continue
        order = stage.partition.indices
        pos = {int(i): a for a, i in enumerate(order.tolist())}
        idx = np.array([[pos[i] for i in r.indices] for r in stage.rotations], dtype=np.int64).reshape(-1, k)
        mats = np.array([r.matrix for r in stage.rotations], dtype=float).reshape(-1, k, k)
        plans.append(_StagePlan(order, idx, mats))
    f._cache["plans"] = plans
    return plans


def _as_columns(f: MmfFactorization, v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != f.n:
        raise ValueError(f"dimension mismatch: expected {f.n}, got {v.shape[0]}")
    return v.reshape(f.n, -1).copy(), v.ndim == 1


def _to_core_basis(f: MmfFactorization, w: np.ndarray) -> None:
    for plan in _plans(f):
        seg = np.ascontiguousarray(w[plan.order])
        _rotate_forward(seg, plan.idx, plan.mats)
        w[plan.order] = seg


def _from_core_basis(f: MmfFactorization, w: np.ndarray) -> None:
    for plan in reversed(_plans(f)):
        seg = np.ascontiguousarray(w[plan.order])
        _rotate_backward(seg, plan.idx, plan.mats)
        w[plan.order] = seg


class CoreOperator:
    """``H``, ``H^+`` or ``(H^+)^{1/2}`` of a factorization's core-diagonal matrix.

    Eigenvalues and diagonal entries with magnitude below ``zero_threshold``
    map to zero in the inverse modes; ``inv_sqrt`` also zeroes negative ones
    (counted in ``negative_count``).
    """

    MODES = ("forward", "inverse", "inv_sqrt")

    def __init__(self, f: MmfFactorization, mode: str = "forward", zero_threshold: float = ZERO_THRESHOLD):
        if mode not in self.MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.zero_threshold = zero_threshold
        h = f.h
        self.core_indices = h.core_indices
        self.diag_indices = h.diag_indices
        key = ("eig", zero_threshold)
        if key not in f._cache:
            f._cache[key] = np.linalg.eigh(h.core) if len(h.core) else (np.zeros(0), np.zeros((0, 0)))
        self.eigenvalues, self.eigenvectors = f._cache[key]
        self.negative_count = 0
        if mode == "forward":
            self.core = h.core
            self.diag = h.diag_values
            return
        lam, d = self.eigenvalues, h.diag_values
        self.core = self.eigenvectors @ (self._power(lam)[:, None] * self.eigenvectors.T)
        self.diag = self._power(d)
        if self.negative_count:
            logger.warning("inv_sqrt: %d negative eigenvalues/diagonal entries set to zero",
                           self.negative_count)

    def _power(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        big = np.abs(x) >= self.zero_threshold
        if self.mode == "inverse":
            out[big] = 1.0 / x[big]
        else:
            pos = big & (x > 0)
            self.negative_count += int(np.count_nonzero(big & (x < 0)))
            out[pos] = 1.0 / np.sqrt(x[pos])
        return out

    def __call__(self, w: np.ndarray) -> np.ndarray:
        out = np.zeros_like(w)
        out[self.diag_indices] = self.diag[:, None] * w[self.diag_indices]
        if len(self.core_indices):
            out[self.core_indices] = self.core @ w[self.core_indices]
        return out


def _core_operator(f: MmfFactorization, mode: str) -> CoreOperator:
    key = ("op", mode)
    op = f._cache.get(key)
    if op is None:
        op = f._cache[key] = CoreOperator(f, mode)
    return op


def _apply_mode(f: MmfFactorization, v, mode: str) -> np.ndarray:
    w, flat = _as_columns(f, v)
    _to_core_basis(f, w)
    w = _core_operator(f, mode)(w)
    _from_core_basis(f, w)
    return w.ravel() if flat else w


def apply(f: MmfFactorization, v) -> np.ndarray:
    """``A~ v``; ``v`` may be a vector or an ``n x r`` block of vectors."""
    return _apply_mode(f, v, "forward")


def apply_inverse(f: MmfFactorization, v) -> np.ndarray:
    """``A~^+ v`` (pseudo-inverse of the core and diagonal)."""
    return _apply_mode(f, v, "inverse")


def apply_inv_sqrt(f: MmfFactorization, v) -> np.ndarray:
    """``(A~^+)^{1/2} v``; negative core eigenvalues are zeroed."""
    return _apply_mode(f, v, "inv_sqrt")


def rotation_matrix(f: MmfFactorization) -> np.ndarray:
    """Dense product ``U = Q_P ... Q_1`` of all stored rotations."""
    if f.n > DENSE_CAP:
        raise ValueError(f"n={f.n} exceeds the dense cap {DENSE_CAP}")
    u = np.eye(f.n)
    _to_core_basis(f, u)
    return u


def reconstruct_dense(f: MmfFactorization, cap: int = DENSE_CAP) -> np.ndarray:
    """Explicit ``A~ = U^T H U`` (desk-scale only)."""
    if f.n > cap:
        raise ValueError(f"n={f.n} exceeds the dense cap {cap}")
    return apply(f, np.eye(f.n))


def _dense(a) -> np.ndarray:
    if sp.issparse(a):
        return a.toarray()
    if hasattr(a, "to_dense"):
        return a.to_dense()
    return np.asarray(a, dtype=float)


def residual_frobenius(f: MmfFactorization, a=None, method: str = "accumulated",
                       cap: int = DENSE_CAP) -> float:
    """``||A - A~||_F`` from the streamed elimination masses or densely."""
    if method == "accumulated":
        return float(np.sqrt(max(f.residual_sq, 0.0)))
    if method == "dense":
        if a is None:
            raise ValueError("dense residual needs the original matrix")
        if f.n > cap:
            raise ValueError(f"n={f.n} exceeds the dense cap {cap}")
        return float(np.linalg.norm(_dense(a) - reconstruct_dense(f, cap)))
    raise ValueError(f"unknown method {method!r}")


def best_rank_k_error(a, k: int) -> float:
    """``||A - A_k||_F`` for the best rank-k approximation of symmetric ``A``."""
    lam = np.linalg.eigvalsh(_dense(a))
    lam = np.sort(np.abs(lam))
    k = max(0, min(int(k), len(lam)))
    return float(np.sqrt(np.sum(lam[: len(lam) - k] ** 2)))


@dataclass
class NystromSketch:
    columns: np.ndarray
    c: np.ndarray
    w_pinv: np.ndarray

    def to_dense(self) -> np.ndarray:
        return self.c @ self.w_pinv @ self.c.T


def nystrom_uniform(a, m: int, seed: int = 0, rcond: float = 1e-10):
    """Uniform-column Nystrom sketch ``C W^+ C^T``; returns ``(frobenius_error, sketch)``."""
    a = _dense(a)
    n = a.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"core dimension m={m} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    cols = np.sort(rng.choice(n, size=m, replace=False))
    c = a[:, cols]
    w = a[np.ix_(cols, cols)]
    lam, vec = np.linalg.eigh(0.5 * (w + w.T))
    top = np.max(np.abs(lam)) if len(lam) else 0.0
    keep = np.abs(lam) > rcond * top
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    w_pinv = vec @ (inv[:, None] * vec.T)
    sketch = NystromSketch(cols, c, w_pinv)
    return float(np.linalg.norm(a - sketch.to_dense())), sketch
