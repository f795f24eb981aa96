"""Plane-wave perturbations that lose regularity at a vanishing extra control cost."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..basis import COS, SIN, Basis, ModeIndex, build_table, canonicalize, half_lattice
from ..dynamics import Forcing, Trajectory

FOUR_PI_SQ = 4.0 * math.pi**2


@dataclass
class BlowupReport:
    n: int
    tau: float
    h1_peak: float
    extra_cost: float
    linear_cost: float
    cross_cost: float

    def to_dict(self) -> dict:
        return {"experiment": "blowup", **{k: getattr(self, k) for k in self.__dataclass_fields__}}


def extended_basis(base: Basis, n: int) -> Basis:
    """``base`` plus every wave mode with wavevector ``(n,0,0) + k'``, ``|k'| <= m``.

    These are all the frequencies reached by ``B(u, w) + B(w, u)`` when ``u``
    lives in ``base`` and ``w`` is carried by ``(n, 0, 0)``.
    """
    m = base.m
    if n <= 2 * m:
        raise ValueError(f"n={n} must exceed 2m={2 * m} to separate the plane wave from the base modes")
    ks = set()
    shifts = [(0, 0, 0)] + half_lattice(m) + [tuple(-c for c in k) for k in half_lattice(m)]
    for kp in shifts:
        k, _ = canonicalize((n + kp[0], kp[1], kp[2]))
        ks.add(k)
    extra = []
    for k in sorted(ks, key=lambda k: (sum(c * c for c in k), k)):
        for pol in (0, 1):
            for parity in (COS, SIN):
                md = ModeIndex(kind="wave", k=k, pol=pol, parity=parity)
                if base.find(md) is None:
                    extra.append(md)
    return Basis(list(base.modes) + extra, m=base.m)


def wave_amplitude(t: np.ndarray, n: int, tau: float) -> np.ndarray:
    """Amplitude ``W(t)`` of ``w = W (0, sin 2 pi n x1, 0)``; zero before ``tau``."""
    t = np.asarray(t, dtype=float)
    a = n**2 * FOUR_PI_SQ
    w1 = np.exp(-a * np.abs(t - tau - 1.0 / n))
    w2 = np.exp(-FOUR_PI_SQ * n - a * np.abs(t - tau))
    return np.where(t > tau, (w1 - w2) / math.sqrt(n), 0.0)


def _growth_amplitude(t: np.ndarray, n: int, tau: float) -> np.ndarray:
    """Amplitude of ``w^(n,1)`` restricted to its growth window ``[tau, tau + 1/n]``."""
    a = n**2 * FOUR_PI_SQ
    inside = (t >= tau) & (t <= tau + 1.0 / n)
    return np.where(inside, np.exp(-a * np.abs(t - tau - 1.0 / n)) / math.sqrt(n), 0.0)


def blowup_family(
    n: int,
    tau: float,
    base: Trajectory,
    base_forcing: Forcing,
    quad_points: int = 4001,
) -> tuple[Trajectory, Forcing, BlowupReport]:
    """Build ``v^(n) = u + w^(n)`` after ``tau`` and its skeleton forcing.

    The forcing is ``f + 2 A w^(n,1) 1_[tau, tau+1/n] + P(B(u, w) + B(w, u))`` on the
    extended basis. The report gives ``|v^(n)(tau + 1/n)|_{H^1}`` and
    ``|g^(n) - g|^2_{L^2 M}`` for the matrix control
    ``2 grad w^(n,1) 1_[tau, tau+1/n] + w (x) u + u (x) w``.
    """
    if not base.t0 <= tau < base.t0 + base.T:
        raise ValueError("tau must lie inside the base time range")
    if base_forcing.basis != base.basis or base_forcing.steps != base.steps:
        raise ValueError("base forcing must live on the base trajectory grid")
    ext = extended_basis(base.basis, n)
    nb = len(base.basis)
    # e = sqrt(2) u1 sin(2 pi n x1) with u1 = (0, -1, 0), so w has coefficient -W / sqrt(2)
    wmode = ext.index(ModeIndex(kind="wave", k=(n, 0, 0), pol=0, parity=SIN))
    lam_n = ext.eigenvalues[wmode]

    t = base.times
    states = np.zeros((len(t), len(ext)))
    states[:, :nb] = base.states
    wcoef = -wave_amplitude(t, n, tau) / math.sqrt(2.0)
    states[:, wmode] += wcoef

    table = build_table(ext)
    f = np.zeros_like(states)
    f[:, :nb] = base_forcing.values
    f[:, wmode] += 2.0 * lam_n * (-_growth_amplitude(t, n, tau) / math.sqrt(2.0))
    u_ext = np.zeros_like(states)
    u_ext[:, :nb] = base.states
    w_ext = np.zeros_like(states)
    w_ext[:, wmode] = wcoef
    for i in np.flatnonzero(wcoef != 0):
        f[i] += table.bilinear(u_ext[i], w_ext[i]) + table.bilinear(w_ext[i], u_ext[i])
    traj = Trajectory(ext, base.dt, states, base.t0)
    forcing = Forcing(ext, base.dt, f, base.t0)

    # H^1 norm at the peak time, with the base state interpolated linearly
    t_peak = tau + 1.0 / n
    base_peak = np.array([np.interp(t_peak, t, base.states[:, j]) for j in range(nb)])
    h1_sq = float(np.sum((1.0 + base.basis.eigenvalues) * base_peak**2))
    h1_sq += (1.0 + lam_n) * (wave_amplitude(np.array([t_peak]), n, tau)[0] ** 2) / 2.0
    h1_peak = math.sqrt(h1_sq)

    # |2 grad w1|^2 = 4 lam W^2 / 2 integrates in closed form over the growth window
    linear_cost = (1.0 - math.exp(-8.0 * math.pi**2 * n)) / n
    # |w (x) u + u (x) w|^2 = W^2 (|u|^2 + |u_y|^2) since sin^2 averages to 1/2 against
    # low frequencies; the cross term with grad w vanishes (div u = 0, w . grad w = 0)
    s = np.linspace(tau, base.t0 + base.T, quad_points)
    W2 = wave_amplitude(s, n, tau) ** 2
    u_sq = np.array([np.interp(s, t, base.states[:, j]) for j in range(nb)]).T
    vy = base.basis.vectors[:, 1]
    fields_y = _y_component_norm2(base.basis, u_sq, vy)
    cross_cost = float(np.trapezoid(W2 * (np.sum(u_sq**2, axis=1) + fields_y), s))
    report = BlowupReport(n, tau, h1_peak, linear_cost + cross_cost, linear_cost, cross_cost)
    return traj, forcing, report


def _y_component_norm2(basis: Basis, coeffs: np.ndarray, vy: np.ndarray) -> np.ndarray:
    """``|u_y|^2_{L^2}`` for each row of coefficients.

    ``u_y = sum c e_y``; the mode profiles are orthonormal as scalars except
    that distinct polarizations at the same wavevector and parity share one
    profile, so contributions are grouped by (wavevector, parity, axis).
    """
    groups: dict = {}
    for j, md in enumerate(basis.modes):
        key = (md.k, md.parity) if md.is_wave else ("const",)
        groups.setdefault(key, []).append(j)
    out = np.zeros(coeffs.shape[0])
    for idx in groups.values():
        out += (coeffs[:, idx] @ vy[idx]) ** 2
    return out
