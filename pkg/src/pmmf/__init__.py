"""Parallel multiresolution matrix factorization (pMMF) for sparse symmetric matrices.

``factorize`` computes ``A ~ Q_1^T ... Q_P^T H Q_P ... Q_1`` with sparse
orthogonal stages and a core-diagonal ``H``; :mod:`pmmf.transform` applies
the factorization (and its inverse and inverse square root) matrix-free,
and :mod:`pmmf.solver` uses it as a CG preconditioner.
"""

from . import graphs, io, transform
from .blocked import BlockedSparseMatrix, BlockedVector, Partition
from .clustering import ClusterOutcome, ClusterParams, cluster_columns
from .factorize import (FactorizationError, FactorizeParams, MmfFactorization, factorize,
                        find_rotations_in_cluster, stage_apply_all_blocks)
from .rotations import jacobi_angle, off_diag_norm_sq, rotation_from_gram
from .solver import (SolveConfig, SolveReport, cg, ic_preconditioner, jacobi_preconditioner,
                     pcg_symmetric, pmmf_preconditioner, run_experiment, ssor_preconditioner)
from .transform import (apply, apply_inv_sqrt, apply_inverse, nystrom_uniform, reconstruct_dense,
                        residual_frobenius)

__version__ = "0.1.0"

__all__ = [
    "BlockedSparseMatrix",
    "BlockedVector",
    "Partition",
    "ClusterOutcome",
    "ClusterParams",
    "cluster_columns",
    "FactorizationError",
    "FactorizeParams",
    "MmfFactorization",
    "factorize",
    "find_rotations_in_cluster",
    "stage_apply_all_blocks",
    "jacobi_angle",
    "off_diag_norm_sq",
    "rotation_from_gram",
    "SolveConfig",
    "SolveReport",
    "cg",
    "pcg_symmetric",
    "jacobi_preconditioner",
    "ssor_preconditioner",
    "ic_preconditioner",
    "pmmf_preconditioner",
    "run_experiment",
    "apply",
    "apply_inverse",
    "apply_inv_sqrt",
    "reconstruct_dense",
    "residual_frobenius",
    "nystrom_uniform",
]
