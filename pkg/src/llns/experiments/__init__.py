"""Statistical and structural experiments built on the Galerkin dynamics."""

from .blowup import BlowupReport, blowup_family, extended_basis, wave_amplitude
from .gaussian import (
    ExpMoment,
    exp_moment_bound,
    exp_moment_closed_form,
    gaussian_exp_moment,
    sample_gaussian_initial,
)
from .rare import RareEventResult, always, l2v_exceeds, rare_event_estimate
from .symmetry import (
    ReversalReport,
    StationarityReport,
    coupled_triples,
    stationarity_test,
    time_reversal_test,
)
from .tilt import TiltReport, path_entropy, tilted_initial_mean, tilted_simulate

__all__ = [
    "BlowupReport",
    "ExpMoment",
    "RareEventResult",
    "ReversalReport",
    "StationarityReport",
    "TiltReport",
    "always",
    "blowup_family",
    "coupled_triples",
    "exp_moment_bound",
    "exp_moment_closed_form",
    "extended_basis",
    "gaussian_exp_moment",
    "l2v_exceeds",
    "path_entropy",
    "rare_event_estimate",
    "sample_gaussian_initial",
    "stationarity_test",
    "tilted_initial_mean",
    "tilted_simulate",
    "time_reversal_test",
    "wave_amplitude",
]
