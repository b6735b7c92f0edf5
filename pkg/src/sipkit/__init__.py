"""Boundary-driven symmetric inclusion process.

Submodules
----------
model
    Configurations, parameters, transitions and the generator.
analytic
    Closed-form profiles, equilibrium marginals, LEQ and McLennan coefficients.
exactsolve
    Truncated master equation: stationary law, Poisson solves, Dyson series.
kmc
    Exact stochastic simulation with batch-means error bars.
cli
    Command-line front end (``sipkit`` console script).
"""
from .analytic import (
    DensityProfile,
    EquilibriumMarginal,
    LinearCorrection,
    density_profile_general,
    density_profile_perturbed,
    density_profile_weak,
    leq_first_order_coefficients,
    marginal_pmf,
    mclennan_coefficients,
    mean_occupancy,
    particle_flux,
    single_site_potential,
    stationary_current,
    theta_from_density,
)
from .errors import (
    DegenerateDenominatorError,
    ParameterError,
    SIPError,
    SolvabilityError,
    SolverError,
    StateSpaceTooLarge,
)
from .kmc import RngStream, SimEstimates, available_backends, kmc_step, occupancy_histogram, run_simulation
from .model import (
    Configuration,
    ModelParams,
    Transition,
    TransitionKind,
    entropy_production_w1,
    enumerate_transitions,
    generator_apply,
    local_force_F1,
    perturbed_params,
)

__version__ = "0.1.0"
