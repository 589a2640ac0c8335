"""
Factorizing a graph Laplacian
=============================

Build a small-world graph, factor its Laplacian and look at what came out.
"""

import numpy as np

from pmmf import FactorizeParams, factorize, graphs, transform

# a 400-node Watts-Strogatz graph; the Laplacian is symmetric and sparse
adj = graphs.small_world_adjacency(400, 6, 0.1, seed=1)
a = graphs.graph_laplacian(adj)
print("n =", a.shape[0], " nnz =", a.nnz)

# 15 stages of Givens rotations, about half of each cluster eliminated per stage
f = factorize(a, FactorizeParams(core_min=40, seed=1))
print("active set per stage:", f.active_sizes)
print("rotations:", len(f.rotations), " core:", f.core_dim)

# the residual is accumulated while eliminating; check it against the dense one
acc = transform.residual_frobenius(f)
dense = transform.residual_frobenius(f, a, method="dense")
print(f"residual {acc:.6f} (dense {dense:.6f}), relative {acc / np.linalg.norm(a.toarray()):.3f}")

# apply the factorization to a vector without ever forming it
v = np.random.default_rng(0).standard_normal(a.shape[0])
print("||A~ v - A v|| / ||A v|| =", np.linalg.norm(transform.apply(f, v) - a @ v) / np.linalg.norm(a @ v))

# wall time per phase
for phase, sec in f.timings.items():
    print(f"  {phase:<10} {1e3 * sec:8.1f} ms")
