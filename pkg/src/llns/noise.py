"""Noise regularization Q_delta, Hilbert-Schmidt traces and increment sampling."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

from .basis import FOUR_PI_SQ, Basis, ModeIndex, SpectralField, eigenvalue

BETA_MIN = 1.25

# lattice radius used for the explicit part of an untruncated trace
TRACE_LATTICE_RADIUS = 48


class NoiseConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseParams:
    """Noise intensity ``epsilon``, correlation ``delta``, exponent ``beta``, cutoff ``m``.

    ``m=None`` stands for the untruncated problem and is only allowed with
    ``delta > 0``.
    """

    epsilon: float
    delta: float = 0.0
    beta: float = 1.5
    m: int | None = 2

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise NoiseConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.delta >= 0:
            raise NoiseConfigError(f"delta must be >= 0, got {self.delta}")
        if not self.beta > BETA_MIN:
            raise NoiseConfigError(
                f"beta must exceed 5/4 for a finite regularized trace, got {self.beta}"
            )
        if self.m is None and self.delta == 0:
            raise NoiseConfigError("delta = 0 requires a finite Galerkin cutoff m")
        if self.m is not None and self.m < 0:
            raise NoiseConfigError(f"m must be >= 0, got {self.m}")

    @property
    def basis(self) -> Basis:
        if self.m is None:
            raise NoiseConfigError("untruncated parameters have no finite basis")
        return Basis.galerkin(self.m)

    def sigma_vector(self, basis: Basis | None = None) -> np.ndarray:
        basis = self.basis if basis is None else basis
        return sigma_from_eigenvalues(basis.eigenvalues, self.delta, self.beta)

    def increment_std(self, dt: float, basis: Basis | None = None) -> np.ndarray:
        """Per-mode standard deviation ``sqrt(eps dt) lambda^1/2 sigma``."""
        basis = self.basis if basis is None else basis
        lam = basis.eigenvalues
        return math.sqrt(self.epsilon * dt) * np.sqrt(lam) * self.sigma_vector(basis)


def sigma_from_eigenvalues(lam, delta: float, beta: float) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if delta == 0:
        return np.ones_like(lam)
    return 1.0 / np.sqrt(1.0 + delta * lam ** (2 * beta))


def sigma(params: NoiseParams, mode: ModeIndex) -> float:
    """Square-root eigenvalue ``(1 + delta lambda^{2 beta})^{-1/2}`` of Q_delta."""
    return float(sigma_from_eigenvalues(eigenvalue(mode), params.delta, params.beta))


def _lattice_sum(radius: int, delta: float, beta: float) -> tuple[float, int]:
    """Sum of ``2 lambda sigma^2`` over the full lattice ``0 < |k| <= radius``."""
    r = np.arange(-radius, radius + 1)
    sq = r**2
    total = 0.0
    count = 0
    for a in sq:
        k2 = a + sq[:, None] + sq[None, :]
        k2 = k2[(k2 > 0) & (k2 <= radius * radius)]
        lam = FOUR_PI_SQ * k2
        total += float(np.sum(2.0 * lam * sigma_from_eigenvalues(lam, delta, beta) ** 2))
        count += k2.size
    return total, count


def _log_shell_integrand(s: float, delta: float, beta: float) -> float:
    """Log of ``shell_density(r) * r`` at ``r = e^s``, stable for any ``s``."""
    log_lam = math.log(FOUR_PI_SQ) + 2.0 * s
    log_num = math.log(8.0 * math.pi) + 3.0 * s + log_lam
    return log_num - float(np.logaddexp(0.0, math.log(delta) + 2.0 * beta * log_lam))


def _tail_integral(r0: float, delta: float, beta: float) -> float:
    """Continuum estimate of the lattice sum beyond radius ``r0``."""
    # integrate in log r: the integrand is smooth and decays at both ends,
    # though only like r^(5 - 4 beta) at infinity when beta is close to 5/4
    val, _ = integrate.quad(
        lambda s: math.exp(_log_shell_integrand(s, delta, beta)),
        math.log(r0), np.inf, limit=400, epsabs=0.0, epsrel=1e-10,
    )
    return val


def continuum_trace(delta: float, beta: float) -> float:
    """Integral replacing the whole lattice sum; scales exactly as delta^(-5/(4 beta))."""
    if delta <= 0:
        raise ValueError("continuum trace diverges at delta = 0")
    return _tail_integral(math.exp(-30.0), delta, beta)


def trace_AQ(params: NoiseParams) -> float:
    """``Tr[P_m A Q_delta] = sum lambda sigma^2`` over B_m.

    For ``m=None`` the lattice is summed exactly up to a fixed radius and the
    remaining tail is replaced by its continuum integral, starting from the
    radius of the ball whose volume equals the number of summed points.
    """
    if params.m is not None:
        basis = Basis.galerkin(params.m)
        lam = basis.eigenvalues
        return float(np.sum(lam * params.sigma_vector(basis) ** 2))
    head, count = _lattice_sum(TRACE_LATTICE_RADIUS, params.delta, params.beta)
    r_eff = (3.0 * (count + 1) / (4.0 * math.pi)) ** (1.0 / 3.0)
    return head + _tail_integral(r_eff, params.delta, params.beta)


@dataclass
class ScalingSchedule:
    """Sequence of ``(epsilon, delta, m)`` with strictly decreasing epsilon."""

    entries: list[tuple[float, float, int | None]] = field(default_factory=list)
    beta: float = 1.5

    def __post_init__(self):
        if not self.entries:
            raise NoiseConfigError("schedule must be nonempty")
        eps = [e[0] for e in self.entries]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise NoiseConfigError("epsilon must be strictly decreasing along the schedule")
        if any(e <= 0 for e in eps):
            raise NoiseConfigError("epsilon must be positive along the schedule")

    def params(self) -> list[NoiseParams]:
        return [NoiseParams(e, d, self.beta, m) for e, d, m in self.entries]

    def __iter__(self):
        return iter(self.params())

    def __len__(self) -> int:
        return len(self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "delta", "m"])
        for e, d, m in self.entries:
            w.writerow([repr(float(e)), repr(float(d)), "" if m is None else str(m)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, beta: float = 1.5) -> "ScalingSchedule":
        rows = csv.DictReader(io.StringIO(text))
        entries = [
            (float(r["epsilon"]), float(r["delta"]), int(r["m"]) if r["m"].strip() else None)
            for r in rows
        ]
        return cls(entries, beta)

    @classmethod
    def read(cls, path: str | Path, beta: float = 1.5) -> "ScalingSchedule":
        return cls.from_csv(Path(path).read_text(), beta)


def check_scaling(schedule: ScalingSchedule) -> list[float]:
    """``epsilon_i * trace_AQ(params_i)`` along the schedule."""
    return [p.epsilon * trace_AQ(p) for p in schedule.params()]


def sample_increment(params: NoiseParams, dt: float, rng: np.random.Generator) -> SpectralField:
    """One Brownian increment of the Galerkin noise, as a spectral field."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    basis = params.basis
    z = rng.standard_normal(len(basis))
    return SpectralField(basis, z * params.increment_std(dt, basis))


def replica_rng(master_seed: int, replica_id: int) -> np.random.Generator:
    """Independent generator for one replica, derived by spawn-key splitting."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replica_id),))
    return np.random.default_rng(ss)


def schedule_from_pairs(eps: Sequence[float], delta: Sequence[float], m: Sequence[int | None], beta=1.5):
    return ScalingSchedule(list(zip(eps, delta, m)), beta)
