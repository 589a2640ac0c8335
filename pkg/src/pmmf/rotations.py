"""Givens / k-point rotations that diagonalize small Gram submatrices."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["off_diag_norm_sq", "jacobi_angle", "rotation_from_gram", "jacobi_eigh"]

_SYM_TOL = 1e-9


def off_diag_norm_sq(column_norm_sq: float, diag_entry: float) -> float:
    """Squared off-diagonal norm of a column, clamped at zero."""
    return max(0.0, float(column_norm_sq) - float(diag_entry) ** 2)


def jacobi_angle(a: float, b: float, c: float) -> tuple[float, float]:
    """``(cos, sin)`` of the smallest angle with ``q g q^T`` diagonal.

    ``g = [[a, b], [b, c]]`` and ``q = [[cos, -sin], [sin, cos]]``.
    """
    if b == 0.0:
        return 1.0, 0.0
    tau = (c - a) / (2.0 * b)
    if tau >= 0:
        t = 1.0 / (tau + math.hypot(1.0, tau))
    else:
        t = -1.0 / (-tau + math.hypot(1.0, tau))
    cs = 1.0 / math.sqrt(1.0 + t * t)
    return cs, t * cs


def jacobi_eigh(g: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """Cyclic Jacobi: returns ``q`` (rows = eigenvectors) with ``q g q^T`` diagonal."""
    a = np.array(g, dtype=float)
    k = a.shape[0]
    q = np.eye(k)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return q
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(k - 1):
            for r in range(p + 1, k):
                if a[p, r] == 0.0:
                    continue
                cs, sn = jacobi_angle(a[p, p], a[p, r], a[r, r])
                rot = np.array([[cs, -sn], [sn, cs]])
                idx = [p, r]
                a[idx, :] = rot @ a[idx, :]
                a[:, idx] = a[:, idx] @ rot.T
                a[p, r] = a[r, p] = 0.0
                q[idx, :] = rot @ q[idx, :]
    return q


def rotation_from_gram(g_sub: np.ndarray) -> np.ndarray:
    """Orthogonal ``q`` such that ``q @ g_sub @ q.T`` is diagonal.

    k = 2 uses the closed-form Jacobi angle; larger k runs cyclic Jacobi
    sweeps.  Each row is sign-fixed so that its largest-magnitude entry is
    positive (first one on ties).
    """
    g = np.asarray(g_sub, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("Gram submatrix must be square")
    if np.max(np.abs(g - g.T), initial=0.0) > _SYM_TOL * max(1.0, np.max(np.abs(g), initial=0.0)):
        raise ValueError("Gram submatrix is not symmetric")
    k = g.shape[0]
    if k == 2:
        cs, sn = jacobi_angle(g[0, 0], 0.5 * (g[0, 1] + g[1, 0]), g[1, 1])
        q = np.array([[cs, -sn], [sn, cs]])
    else:
        q = jacobi_eigh(0.5 * (g + g.T))
    lead = np.argmax(np.abs(q), axis=1)
    signs = np.where(q[np.arange(k), lead] < 0, -1.0, 1.0)
    return q * signs[:, None]
