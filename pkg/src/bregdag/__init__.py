"""Sparse DAG learning via Bregman proximal gradient.

Entry points:

- :func:`bregdag.solver.fit` learns a weighted DAG from a sample matrix.
- :mod:`bregdag.simulate` draws benchmark graphs and linear-SCM data.
- :func:`bregdag.metrics.evaluate` scores a recovered structure.
- ``python -m bregdag`` exposes generate / fit / eval / sweep commands.

Convention used everywhere: ``W[i, j]`` is the weight of edge ``i -> j``
and samples satisfy ``X = X W + E`` with observations as rows.
"""

from .metrics import EvalReport, evaluate
from .penalty import (
    PenaltyParams,
    SmoothnessReport,
    bregman_divergence,
    is_acyclic_exact,
    is_acyclic_numeric,
    kernel_gradient,
    kernel_value,
    penalty_gradient,
    penalty_residual,
    penalty_value,
    relative_smoothness_check,
)
from .prox import InnerOptions, InnerSolution, ProxProblem, composite_prox, solve
from .simulate import Dataset, GraphSpec, NoiseSpec, generate, sample_dag, sample_data
from .solver import FitConfig, FitResult, fit, l2_error, objective, threshold

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "evaluate",
    "PenaltyParams",
    "SmoothnessReport",
    "bregman_divergence",
    "is_acyclic_exact",
    "is_acyclic_numeric",
    "kernel_gradient",
    "kernel_value",
    "penalty_gradient",
    "penalty_residual",
    "penalty_value",
    "relative_smoothness_check",
    "InnerOptions",
    "InnerSolution",
    "ProxProblem",
    "composite_prox",
    "solve",
    "Dataset",
    "GraphSpec",
    "NoiseSpec",
    "generate",
    "sample_dag",
    "sample_data",
    "FitConfig",
    "FitResult",
    "fit",
    "l2_error",
    "objective",
    "threshold",
    "__version__",
]
