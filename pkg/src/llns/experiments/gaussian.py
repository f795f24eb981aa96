"""Gaussian initial data and its exponential moments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..basis import SpectralField
from ..noise import NoiseParams


def initial_std(params: NoiseParams, basis) -> np.ndarray:
    """Per-mode standard deviation ``sqrt(eps/2) sigma`` of the Gaussian law."""
    return math.sqrt(params.epsilon / 2.0) * params.sigma_vector(basis)


def sample_gaussian_initial(
    u0: SpectralField, params: NoiseParams, rng: np.random.Generator, size: int | None = None
) -> SpectralField | np.ndarray:
    """Draw from ``G(P_m u0, eps Q_delta / 2)``.

    With ``size`` given, returns an array of shape (size, n_modes) instead of a field.
    """
    sd = initial_std(params, u0.basis)
    if size is None:
        return SpectralField(u0.basis, u0.coeffs + sd * rng.standard_normal(len(u0.basis)))
    return u0.coeffs + sd * rng.standard_normal((size, len(u0.basis)))


@dataclass
class ExpMoment:
    eta: float
    closed_form: float
    mc_estimate: float
    mc_se: float
    samples: int

    @property
    def z(self) -> float:
        return (self.mc_estimate - self.closed_form) / self.mc_se if self.mc_se > 0 else 0.0


def exp_moment_closed_form(eta: float, u0: SpectralField, params: NoiseParams) -> float:
    """``eps log E exp(eta |U|^2 / eps)`` summed mode by mode.

    Per mode with mean ``mu`` and variance ``eps sigma^2 / 2``:
    ``-(eps/2) log(1 - eta sigma^2) + eta mu^2 / (1 - eta sigma^2)``.
    """
    s2 = params.sigma_vector(u0.basis) ** 2
    if params.epsilon == 0:
        return float(eta * u0.coeffs @ u0.coeffs)
    q = eta * s2
    if np.any(q >= 1):
        raise ValueError(f"eta={eta} violates integrability (eta sigma^2 must stay below 1)")
    mu2 = u0.coeffs**2
    return float(np.sum(-0.5 * params.epsilon * np.log1p(-q) + eta * mu2 / (1 - q)))


def exp_moment_bound(eta: float, u0: SpectralField, params: NoiseParams) -> float:
    """Upper bound ``eta (1-eta)^-2 |u0|^2 + C(eta) sum eps sigma^2`` with ``C = -log(1-eta)/2``."""
    if not eta < 1:
        raise ValueError("eta must be < 1")
    s2 = params.sigma_vector(u0.basis) ** 2
    c_eta = -0.5 * math.log1p(-eta)
    return float(eta * (1 - eta) ** -2 * (u0.coeffs @ u0.coeffs) + c_eta * params.epsilon * s2.sum())


def gaussian_exp_moment(
    eta: float,
    u0: SpectralField,
    params: NoiseParams,
    rng: np.random.Generator,
    samples: int = 100_000,
    chunk: int = 20_000,
) -> ExpMoment:
    """Closed form against a Monte Carlo estimate with delta-method standard error."""
    closed = exp_moment_closed_form(eta, u0, params)
    if params.epsilon == 0:
        return ExpMoment(eta, closed, closed, 0.0, samples)
    xs = []
    for start in range(0, samples, chunk):
        draws = sample_gaussian_initial(u0, params, rng, size=min(chunk, samples - start))
        xs.append(eta * np.sum(draws**2, axis=1) / params.epsilon)
    x = np.concatenate(xs)
    n = len(x)
    log_mean = logsumexp(x) - math.log(n)
    # relative spread of exp(x) computed in a shifted scale to avoid overflow
    w = np.exp(x - x.max())
    rel_sd = w.std(ddof=1) / w.mean()
    eps = params.epsilon
    return ExpMoment(eta, closed, float(eps * log_mean), float(eps * rel_sd / math.sqrt(n)), n)
