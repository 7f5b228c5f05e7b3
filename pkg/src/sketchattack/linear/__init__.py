"""Linear sketches over prime fields and exact rationals."""
from .aux import (RealAuxParams, aux_fp, aux_real_large, aux_real_small, exp_mantissas,
                  log_magnitude_ratio, shifted_thresholds_fp)
from .basis import (BasisPool, ChangeOfBasis, GreedyBasisSketchMap, SpanSketchMap, basis_pool,
                    gamma0_estimate, greedy_basis, linear_pool_cap, verify_linear_pool)
from .fields import QQ, Echelon, PrimeField, RationalField, is_prime, rank, rank_mod_p
from .matrix import (PrimeFieldMatrix, QueryVector, RealMatrix, load_matrix, save_matrix,
                     sketch_vector)

__all__ = [
    "RealAuxParams", "aux_fp", "aux_real_large", "aux_real_small", "exp_mantissas",
    "log_magnitude_ratio", "shifted_thresholds_fp", "BasisPool", "ChangeOfBasis",
    "GreedyBasisSketchMap", "SpanSketchMap", "basis_pool", "gamma0_estimate", "greedy_basis",
    "linear_pool_cap", "verify_linear_pool", "QQ", "Echelon", "PrimeField", "RationalField",
    "is_prime", "rank", "rank_mod_p", "PrimeFieldMatrix", "QueryVector", "RealMatrix",
    "load_matrix", "save_matrix", "sketch_vector",
]
