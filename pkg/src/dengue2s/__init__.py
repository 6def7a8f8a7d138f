"""Two-strain host-vector dengue model: simulation, equilibria and bifurcations."""

from .model import (
    PARAMETER_NAMES,
    STATE_NAMES,
    InvalidStateError,
    ParameterSet,
    State,
    clamp_state,
    disease_free_state,
    jacobian,
    strain_swap,
    swap_derivative,
    vector_field,
)
from .analysis import (
    EquilibriumRecord,
    classify_stability,
    dfe_analytic_eigenvalues,
    disease_free_equilibrium,
    one_strain_equilibrium,
    r0,
    refine_equilibrium,
    two_strain_symmetric_equilibrium,
)

__version__ = "0.1.0"
