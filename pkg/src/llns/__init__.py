"""Spectral Galerkin laboratory for stochastic Navier-Stokes equations with conservative noise."""

from .basis import (
    Basis,
    ModeIndex,
    SpectralField,
    TrilinearTable,
    build_table,
    eigenvalue,
    enumerate_modes,
    evaluate_physical,
    leray_project,
    nonlinear_term,
    norm,
    trilinear_coeff,
)
from .dynamics import (
    Forcing,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    drift,
    energy,
    energy_identity_check,
    energy_residual,
    simulate,
    skeleton,
    step,
)
from .noise import NoiseParams, ScalingSchedule, check_scaling, sample_increment, sigma, trace_AQ
from .rate import (
    RateBreakdown,
    S_function,
    Z_bound,
    compactness_F,
    dynamic_cost,
    energy_excess,
    initial_rate,
    lambda_functional,
    residual,
    total_rate,
)

__version__ = "0.1.0"
