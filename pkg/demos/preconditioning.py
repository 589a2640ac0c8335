"""
Preconditioned conjugate gradients
==================================

Solve with a shifted grid Laplacian using plain CG and four preconditioners,
over the same 20 random right-hand sides.
"""

import numpy as np

from pmmf import SolveConfig, graphs, run_experiment
from pmmf.solver import random_rhs

a = graphs.grid_laplacian(32, 32, shift=1e-3)
b = random_rhs(a.shape[0], 20, seed=0)

for name in ("none", "jacobi", "ssor", "ic", "pmmf"):
    rep = run_experiment(a, SolveConfig(tol=1e-5, max_iter=400, preconditioner=name), b=b)
    its = np.mean(rep.iterations)
    ms = np.sum(rep.solve_ms) / np.sum(rep.iterations)
    print(f"{name:<7} iterations {its:7.2f}  converged {sum(rep.converged):2d}/20  "
          f"setup {rep.setup_ms:7.1f} ms  {ms:.3f} ms/iteration  {rep.note}")

# mean residual curve of the pMMF runs, every 20 iterations
rep = run_experiment(a, SolveConfig(tol=1e-5, max_iter=400, preconditioner="pmmf"), b=b)
print(np.array2string(rep.mean_residual[::20], precision=2))
