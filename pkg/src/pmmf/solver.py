"""Conjugate gradients with symmetric (split) preconditioning.

A preconditioner ``M = E E^T`` is used through its split factors: CG runs
on ``E^{-1} A E^{-T} y = E^{-1} b`` and returns ``x = E^{-T} y``.  For the
Jacobi and pMMF preconditioners ``E = M^{1/2}``; SSOR and incomplete
Cholesky use their triangular factors.  Convergence is always measured on
the residual of the original system, ``||b - A x|| / ||b||``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import transform
from ._parallel import pmap
from .factorize import FactorizeParams, MmfFactorization, factorize

__all__ = [
    "SolveConfig",
    "SolveReport",
    "ExperimentReport",
    "Preconditioner",
    "IdentityPreconditioner",
    "JacobiPreconditioner",
    "SSORPreconditioner",
    "ICPreconditioner",
    "ICBreakdown",
    "PmmfPreconditioner",
    "cg",
    "pcg_symmetric",
    "jacobi_preconditioner",
    "ssor_preconditioner",
    "ic_preconditioner",
    "pmmf_preconditioner",
    "make_preconditioner",
    "random_rhs",
    "run_experiment",
]

logger = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "jacobi", "ssor", "ic", "pmmf")


@dataclass
class SolveConfig:
    tol: float = 1e-5
    max_iter: int = 100
    preconditioner: str = "none"
    pmmf: FactorizeParams = field(default_factory=FactorizeParams)
    rhs_count: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveReport:
    """One solve: residual norms ``||b - A x_k||`` for k = 0, 1, ..."""

    residuals: np.ndarray
    iterations: int
    converged: bool
    breakdown: bool = False
    wall_ms: float = 0.0


@dataclass
class ExperimentReport:
    """Many right-hand sides for one method.

    ``mean_residual[k]`` / ``std_residual[k]`` average over the runs that
    reached iteration ``k`` (``counts[k]`` of them).
    """

    method: str
    mean_residual: np.ndarray
    std_residual: np.ndarray
    counts: np.ndarray
    iterations: list
    converged: list
    setup_ms: float = 0.0
    solve_ms: list = field(default_factory=list)
    note: str = ""


def _operator(a):
    if callable(a) and not hasattr(a, "shape"):
        raise TypeError("operator must have a shape; wrap callables in a LinearOperator")
    return spla.aslinearoperator(a)


def cg(a, b, cfg: SolveConfig | None = None):
    """Plain conjugate gradients from ``x_0 = 0``.  Returns ``(x, SolveReport)``."""
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    op = _operator(a)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveReport(np.zeros(1), 0, True)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    res = [np.sqrt(rr)]
    breakdown = False
    for _ in range(cfg.max_iter):
        if res[-1] / bnorm <= cfg.tol:
            break
        ap = op.matvec(p)
        pap = p @ ap
        if pap <= 0.0:
            breakdown = True
            break
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        res.append(np.sqrt(rr_new))
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = np.array(res)
    return x, SolveReport(res, len(res) - 1, bool(res[-1] / bnorm <= cfg.tol), breakdown,
                          1e3 * (time.perf_counter() - t0))


def pcg_symmetric(a, b, precond, cfg: SolveConfig | None = None):
    """CG on ``E^{-1} A E^{-T} y = E^{-1} b``, returning ``x = E^{-T} y``.

    ``precond`` is a :class:`Preconditioner` or a callable applying a
    symmetric ``M^{-1/2}``.
    """
    cfg = cfg or SolveConfig()
    if not isinstance(precond, Preconditioner):
        precond = _CallablePreconditioner(precond)
    t0 = time.perf_counter()
    op = _operator(a)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveReport(np.zeros(1), 0, True)
    r = b.copy()
    rh = np.array(precond.split_left(b), dtype=float)
    p = rh.copy()
    rr = rh @ rh
    res = [np.linalg.norm(r)]
    breakdown = False
    for _ in range(cfg.max_iter):
        if res[-1] / bnorm <= cfg.tol:
            break
        z = np.asarray(precond.split_right(p), dtype=float)
        az = op.matvec(z)
        w = np.asarray(precond.split_left(az), dtype=float)
        pw = p @ w
        if pw <= 0.0:
            breakdown = True
            break
        alpha = rr / pw
        x += alpha * z
        r -= alpha * az
        rh -= alpha * w
        rr_new = rh @ rh
        res.append(np.linalg.norm(r))
        p = rh + (rr_new / rr) * p
        rr = rr_new
    res = np.array(res)
    return x, SolveReport(res, len(res) - 1, bool(res[-1] / bnorm <= cfg.tol), breakdown,
                          1e3 * (time.perf_counter() - t0))


# ---------------------------------------------------------------------- preconditioners


class Preconditioner:
    """``M = E E^T``: ``solve`` applies ``M^{-1}``, the split methods ``E^{-1}`` and ``E^{-T}``."""

    name = "preconditioner"

    def solve(self, v):
        return self.split_right(self.split_left(v))

    def split_left(self, v):
        raise NotImplementedError

    def split_right(self, v):
        raise NotImplementedError

    def as_linear_operator(self, n: int) -> spla.LinearOperator:
        return spla.LinearOperator((n, n), matvec=self.solve, dtype=float)


class IdentityPreconditioner(Preconditioner):
    name = "none"

    def split_left(self, v):
        return np.array(v, dtype=float)

    split_right = split_left
    solve = split_left


class _CallablePreconditioner(Preconditioner):
    name = "callable"

    def __init__(self, inv_sqrt):
        self._f = inv_sqrt

    def split_left(self, v):
        return self._f(v)

    split_right = split_left


class JacobiPreconditioner(Preconditioner):
    """``M = diag(A)``; zero diagonal entries get a zero inverse."""

    name = "jacobi"

    def __init__(self, a):
        d = np.asarray(sp.csr_matrix(a).diagonal(), dtype=float)
        self.inv = np.zeros_like(d)
        nz = d != 0
        self.inv[nz] = 1.0 / d[nz]
        self.inv_sqrt = np.zeros_like(d)
        pos = d > 0
        self.inv_sqrt[pos] = 1.0 / np.sqrt(d[pos])

    def solve(self, v):
        v = np.asarray(v, dtype=float)
        return self.inv.reshape(-1, *([1] * (v.ndim - 1))) * v

    def split_left(self, v):
        v = np.asarray(v, dtype=float)
        return self.inv_sqrt.reshape(-1, *([1] * (v.ndim - 1))) * v

    split_right = split_left


class SSORPreconditioner(Preconditioner):
    """``M = w/(2-w) (D/w + L) D^{-1} (D/w + L)^T`` for ``A = L + D + L^T``."""

    name = "ssor"

    def __init__(self, a, omega: float = 1.0):
        if not 0.0 < omega < 2.0:
            raise ValueError("omega must lie in (0, 2)")
        a = sp.csr_matrix(a, dtype=float)
        d = a.diagonal()
        zero = np.flatnonzero(d == 0)
        if len(zero):
            raise ValueError(f"SSOR needs a nonzero diagonal; row {int(zero[0])} is zero")
        if np.any(d < 0):
            raise ValueError(f"SSOR split needs a positive diagonal; row {int(np.flatnonzero(d < 0)[0])} is negative")
        self.omega = omega
        lower = sp.tril(a, k=-1, format="csr") + sp.diags(d / omega)
        self.lower = lower.tocsr()
        self.upper = lower.T.tocsr()
        self.scale = np.sqrt(d) * np.sqrt((2.0 - omega) / omega)

    def _s(self, v):
        return self.scale.reshape(-1, *([1] * (np.ndim(v) - 1)))

    def split_left(self, v):
        v = np.asarray(v, dtype=float)
        return self._s(v) * spla.spsolve_triangular(self.lower, v, lower=True)

    def split_right(self, v):
        v = np.asarray(v, dtype=float)
        return spla.spsolve_triangular(self.upper, self._s(v) * v, lower=False)


class ICBreakdown(ArithmeticError):
    pass


def _ic0(a: sp.csr_matrix) -> sp.csr_matrix:
    """IC(0): lower ``L`` on the lower-triangular pattern of ``a`` with ``L L^T ~ a``."""
    n = a.shape[0]
    low = sp.tril(a, format="csr")
    low.sort_indices()
    rows: list[dict] = []
    for i in range(n):
        lo, hi = low.indptr[i], low.indptr[i + 1]
        cols = low.indices[lo:hi].tolist()
        vals = low.data[lo:hi].tolist()
        row: dict = {}
        diag = 0.0
        for j, aij in zip(cols, vals):
            if j == i:
                diag = aij
                continue
            rj = rows[j]
            s = aij
            small, big = (row, rj) if len(row) < len(rj) else (rj, row)
            for t, x in small.items():
                if t < j:
                    y = big.get(t)
                    if y is not None:
                        s -= x * y
            row[j] = s / rj[j]
        piv = diag - sum(x * x for x in row.values())
        if not piv > 0.0:
            raise ICBreakdown(f"non-positive pivot {piv:.3g} at row {i}")
        row[i] = np.sqrt(piv)
        rows.append(row)
    r, c, v = [], [], []
    for i, row in enumerate(rows):
        for j, x in row.items():
            r.append(i)
            c.append(j)
            v.append(x)
    return sp.csr_matrix((v, (r, c)), shape=(n, n))


class ICPreconditioner(Preconditioner):
    """Zero fill-in incomplete Cholesky, ``M = L L^T``.

    On a non-positive pivot the factorization is retried once on
    ``A + alpha diag(A)`` with ``alpha = max_i sum_j |a_ij| / a_ii``.
    """

    name = "ic"

    def __init__(self, a):
        a = sp.csr_matrix(a, dtype=float)
        self.alpha = 0.0
        try:
            self.lower = _ic0(a)
        except ICBreakdown as err:
            d = a.diagonal()
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.asarray(abs(a).sum(axis=1)).ravel() / d
            self.alpha = float(np.max(ratios[np.isfinite(ratios)], initial=0.0))
            logger.info("IC(0) broke down (%s); retrying with diagonal compensation %.3g", err, self.alpha)
            self.lower = _ic0((a + self.alpha * sp.diags(d)).tocsr())
        self.upper = self.lower.T.tocsr()

    def split_left(self, v):
        return spla.spsolve_triangular(self.lower, np.asarray(v, dtype=float), lower=True)

    def split_right(self, v):
        return spla.spsolve_triangular(self.upper, np.asarray(v, dtype=float), lower=False)


class PmmfPreconditioner(Preconditioner):
    """``M = A~``: applies ``A~^+`` and ``(A~^+)^{1/2}`` through the rotations."""

    name = "pmmf"

    def __init__(self, f: MmfFactorization):
        self.factorization = f

    def solve(self, v):
        return transform.apply_inverse(self.factorization, v)

    def split_left(self, v):
        return transform.apply_inv_sqrt(self.factorization, v)

    split_right = split_left


def jacobi_preconditioner(a) -> JacobiPreconditioner:
    return JacobiPreconditioner(a)


def ssor_preconditioner(a, omega: float = 1.0) -> SSORPreconditioner:
    return SSORPreconditioner(a, omega)


def ic_preconditioner(a) -> ICPreconditioner:
    return ICPreconditioner(a)


def pmmf_preconditioner(a, params: FactorizeParams | None = None, threads: int = 1) -> PmmfPreconditioner:
    return PmmfPreconditioner(factorize(a, params, threads=threads))


def make_preconditioner(name: str, a, params: FactorizeParams | None = None, threads: int = 1):
    """Build a preconditioner by name.  Returns ``(preconditioner, note)``.

    An incomplete Cholesky that breaks down twice falls back to Jacobi.
    """
    if name == "none":
        return IdentityPreconditioner(), ""
    if name == "jacobi":
        return JacobiPreconditioner(a), ""
    if name == "ssor":
        return SSORPreconditioner(a), ""
    if name == "ic":
        try:
            pc = ICPreconditioner(a)
        except ICBreakdown as err:
            return JacobiPreconditioner(a), f"ic failed ({err}); fell back to jacobi"
        note = "IC(0) with diagonal compensation" if pc.alpha else "IC(0)"
        return pc, note
    if name == "pmmf":
        return pmmf_preconditioner(a, params, threads), ""
    raise ValueError(f"unknown preconditioner {name!r}")


def random_rhs(n: int, count: int, seed: int) -> np.ndarray:
    """``count`` unit-norm right-hand sides with standard normal entries, as columns."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, count))
    return b / np.linalg.norm(b, axis=0)


def _aggregate(reports: list) -> tuple:
    longest = max(len(r.residuals) for r in reports)
    mean = np.zeros(longest)
    std = np.zeros(longest)
    counts = np.zeros(longest, dtype=int)
    for k in range(longest):
        vals = np.array([r.residuals[k] for r in reports if len(r.residuals) > k])
        counts[k] = len(vals)
        mean[k] = vals.mean()
        std[k] = vals.std()
    return mean, std, counts


def run_experiment(a, cfg: SolveConfig, threads: int = 1, b: np.ndarray | None = None) -> ExperimentReport:
    """Build ``cfg.preconditioner`` once, then solve for ``cfg.rhs_count`` random ``b``."""
    a = sp.csr_matrix(a, dtype=float)
    n = a.shape[0]
    if b is None:
        b = random_rhs(n, cfg.rhs_count, cfg.seed)
    t0 = time.perf_counter()
    pc, note = make_preconditioner(cfg.preconditioner, a, cfg.pmmf, threads)
    setup_ms = 1e3 * (time.perf_counter() - t0)

    def one(col):
        if cfg.preconditioner == "none":
            return cg(a, b[:, col], cfg)[1]
        return pcg_symmetric(a, b[:, col], pc, cfg)[1]

    reports = pmap(one, range(b.shape[1]), threads)
    mean, std, counts = _aggregate(reports)
    return ExperimentReport(
        method=cfg.preconditioner,
        mean_residual=mean,
        std_residual=std,
        counts=counts,
        iterations=[r.iterations for r in reports],
        converged=[r.converged for r in reports],
        setup_ms=setup_ms,
        solve_ms=[r.wall_ms for r in reports],
        note=note,
    )
