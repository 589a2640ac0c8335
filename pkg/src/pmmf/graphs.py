"""Synthetic test graphs and matrices.

Graph specs are short strings:

``grid:RxC``
    2-D grid graph (4-neighbour adjacency).
``regular:N:D``
    random D-regular graph on N nodes.
``smallworld:N:K:P``
    connected Watts-Strogatz graph, K nearest neighbours, rewiring P.
``poisson:RxC``
    5-point Dirichlet Laplacian of an RxC grid (a matrix, not a graph).
"""

from __future__ import annotations

import networkx as nx
import numpy as np
import scipy.sparse as sp

__all__ = [
    "grid_adjacency",
    "grid_laplacian",
    "poisson2d",
    "random_regular_adjacency",
    "small_world_adjacency",
    "graph_laplacian",
    "parse_graph_spec",
]


def _path_adjacency(n: int) -> sp.csr_matrix:
    return sp.diags([np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="csr")


def grid_adjacency(rows: int, cols: int) -> sp.csr_matrix:
    """Adjacency of the ``rows x cols`` grid; node ``(r, c)`` is ``r * cols + c``."""
    return (sp.kron(_path_adjacency(rows), sp.eye(cols)) + sp.kron(sp.eye(rows), _path_adjacency(cols))).tocsr()


def graph_laplacian(w, shift: float = 0.0) -> sp.csr_matrix:
    """``D - W + shift I`` for a symmetric nonnegative adjacency ``W``."""
    w = sp.csr_matrix(w, dtype=float)
    d = np.asarray(w.sum(axis=1)).ravel()
    return (sp.diags(d + shift) - w).tocsr()


def grid_laplacian(rows: int, cols: int, shift: float = 0.0) -> sp.csr_matrix:
    return graph_laplacian(grid_adjacency(rows, cols), shift)


def poisson2d(rows: int, cols: int) -> sp.csr_matrix:
    """5-point finite-difference Laplacian with Dirichlet boundary (SPD)."""
    t_r = sp.diags([-np.ones(rows - 1), 2 * np.ones(rows), -np.ones(rows - 1)], [-1, 0, 1])
    t_c = sp.diags([-np.ones(cols - 1), 2 * np.ones(cols), -np.ones(cols - 1)], [-1, 0, 1])
    return (sp.kron(t_r, sp.eye(cols)) + sp.kron(sp.eye(rows), t_c)).tocsr()


def random_regular_adjacency(n: int, degree: int, seed: int = 0) -> sp.csr_matrix:
    g = nx.random_regular_graph(degree, n, seed=seed)
    return nx.to_scipy_sparse_array(g, nodelist=range(n), format="csr", dtype=float)


def small_world_adjacency(n: int, k: int, p: float, seed: int = 0) -> sp.csr_matrix:
    g = nx.connected_watts_strogatz_graph(n, k, p, seed=seed)
    return nx.to_scipy_sparse_array(g, nodelist=range(n), format="csr", dtype=float)


def _dims(text: str) -> tuple:
    r, _, c = text.partition("x")
    return int(r), int(c or r)


def parse_graph_spec(spec: str, seed: int = 0):
    """Build the object named by ``spec``.  Returns ``(matrix, is_adjacency)``."""
    kind, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    try:
        if kind == "grid" and len(args) == 1:
            return grid_adjacency(*_dims(args[0])), True
        if kind == "poisson" and len(args) == 1:
            return poisson2d(*_dims(args[0])), False
        if kind == "regular" and len(args) == 2:
            return random_regular_adjacency(int(args[0]), int(args[1]), seed), True
        if kind == "smallworld" and len(args) == 3:
            return small_world_adjacency(int(args[0]), int(args[1]), float(args[2]), seed), True
    except nx.NetworkXError as err:
        raise ValueError(f"graph spec {spec!r}: {err}") from err
    raise ValueError(f"unrecognized graph spec {spec!r}")
