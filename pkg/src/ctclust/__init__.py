"""Clustering of irregularly sampled trajectories with CTMC-driven hidden
Markov models under a Dirichlet-process mixture."""

import os as _os

__version__ = "0.1.0"


def _cap_threads() -> None:
    # CTCLUST_THREADS caps the BLAS/OpenMP pools; it must take effect
    # before numpy loads its backing libraries, hence here. Sampling
    # order never depends on it, so results are identical at any value.
    cap = _os.environ.get("CTCLUST_THREADS")
    if not cap:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        _os.environ.setdefault(var, cap)


_cap_threads()

from .ctmc import (
    GeneratorMatrix,
    InitialDistribution,
    StochasticMatrix,
    generator_eigenvalues,
    transition_matrix,
    transition_matrices,
    validate_generator,
)
from .errors import CTClustError

__all__ = [
    "CTClustError",
    "GeneratorMatrix",
    "InitialDistribution",
    "StochasticMatrix",
    "generator_eigenvalues",
    "transition_matrix",
    "transition_matrices",
    "validate_generator",
    "__version__",
]
