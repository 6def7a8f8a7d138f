"""Threshold analysis, equilibrium continuation and periodic orbits."""

from .center_manifold import (
    CenterManifoldWeights,
    alpha_c,
    bifurcation_coefficients_numeric,
    center_manifold_coefficients,
    critical_alpha,
    null_vectors,
)
from .continuation import (
    FREE_PARAMETERS,
    BifurcationEvent,
    Branch,
    ContinuationSettings,
    TestFunctionValues,
    branch_directions,
    continue_equilibria,
    switch_branch,
    test_functions,
)

__all__ = [
    "CenterManifoldWeights", "alpha_c", "bifurcation_coefficients_numeric",
    "center_manifold_coefficients", "critical_alpha", "null_vectors",
    "FREE_PARAMETERS", "BifurcationEvent", "Branch", "ContinuationSettings",
    "TestFunctionValues", "branch_directions", "continue_equilibria",
    "switch_branch", "test_functions",
]
