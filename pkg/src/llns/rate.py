"""Rate functional, optimal-control recovery, the variational functional and penalties."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre
from scipy import optimize

from .basis import Basis, SpectralField, TrilinearTable, build_table
from .dynamics import Forcing, Trajectory, trapezoid

CONSTANT_TOL = 1e-8


class InfiniteCostError(ValueError):
    """The residual has a mean-flow component, which no matrix divergence can produce."""

    def __init__(self, size: float):
        self.size = size
        super().__init__(f"constant-mode residual {size:.3e} exceeds tolerance: cost is infinite")


def time_derivative(traj: Trajectory) -> np.ndarray:
    """Centered differences inside, one-sided at the two endpoints."""
    c = traj.states
    if len(c) < 2:
        raise ValueError("trajectory needs at least two states")
    d = np.empty_like(c)
    d[1:-1] = (c[2:] - c[:-2]) / (2 * traj.dt)
    d[0] = (c[1] - c[0]) / traj.dt
    d[-1] = (c[-1] - c[-2]) / traj.dt
    return d


def residual_components(traj: Trajectory, table: TrilinearTable | None = None) -> np.ndarray:
    """``du/dt + A u + B(u)`` at every node, constant modes included."""
    table = build_table(traj.basis) if table is None else table
    c = traj.states
    return time_derivative(traj) + traj.basis.eigenvalues * c + table.apply(c)


def residual(
    traj: Trajectory, table: TrilinearTable | None = None, tol: float = CONSTANT_TOL
) -> Forcing:
    """Force ``f`` solving the skeleton equation ``du/dt = -A u - B(u) + f`` along ``traj``.

    Raises InfiniteCostError when the mean-flow part of the residual exceeds ``tol``.
    """
    r = residual_components(traj, table)
    const = np.abs(r[:, ~traj.basis.is_wave]).max(initial=0.0)
    if const > tol:
        raise InfiniteCostError(const)
    return Forcing(traj.basis, traj.dt, r, traj.t0)


def _inverse_weights(basis: Basis) -> np.ndarray:
    w = np.zeros(len(basis))
    w[basis.is_wave] = 1.0 / basis.eigenvalues[basis.is_wave]
    return w


def cost_density(f: Forcing) -> np.ndarray:
    """Per-node homogeneous H^-1 density ``1/2 sum f^2 / lambda``."""
    return 0.5 * (f.values**2) @ _inverse_weights(f.basis)


def dynamic_cost(traj: Trajectory, table: TrilinearTable | None = None) -> float:
    """``J(u) = 1/2 int |residual|^2_{H^-1}`` (trapezoid); ``inf`` for mean-flow residuals."""
    try:
        f = residual(traj, table)
    except InfiniteCostError:
        return math.inf
    return trapezoid(cost_density(f), traj.dt)


def initial_rate(v: SpectralField, u0: SpectralField) -> float:
    """Gaussian initial rate ``|v - u0|_H^2`` (no factor 1/2: the variance is eps Q / 2)."""
    d = v - u0
    return float(d.coeffs @ d.coeffs)


@dataclass
class RateBreakdown:
    initial: float
    dynamic: float
    total: float
    residual_profile: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["profile"] = d.pop("residual_profile")
        return json.dumps(d, indent=2, sort_keys=True)


def total_rate(
    traj: Trajectory,
    u0: SpectralField,
    table: TrilinearTable | None = None,
    initial: Callable[[SpectralField, SpectralField], float] = initial_rate,
) -> RateBreakdown:
    """``I = I0(u(0)) + J(u)``; the initial term is pluggable for non-Gaussian laws."""
    i0 = initial(traj[0], u0)
    try:
        f = residual(traj, table)
    except InfiniteCostError:
        return RateBreakdown(i0, math.inf, math.inf, [])
    profile = cost_density(f)
    j = trapezoid(profile, traj.dt)
    return RateBreakdown(float(i0), float(j), float(i0 + j), profile.tolist())


def control_matrix_norm(f: Forcing) -> np.ndarray:
    """``|g|_M^2 = sum f^2 / lambda`` per node for the optimal gradient control ``g = -grad A^-1 f``."""
    return (f.values**2) @ _inverse_weights(f.basis)


def time_regularity(traj: Trajectory, table: TrilinearTable | None = None) -> float:
    """``int |du/dt|^2_{H^-1 hom}``; finite whenever the dynamic cost is."""
    d = time_derivative(traj)
    if np.abs(d[:, ~traj.basis.is_wave]).max(initial=0.0) > CONSTANT_TOL:
        return math.inf
    return trapezoid((d**2) @ _inverse_weights(traj.basis), traj.dt)


# --- variational functional -------------------------------------------------

def lambda_functional(
    phi: Trajectory,
    u: Trajectory,
    table: TrilinearTable | None = None,
    dphi: np.ndarray | None = None,
) -> float:
    """Discrete ``Lambda(phi, u)``.

    ``<u(T),phi(T)> - <u(0),phi(0)> - int (<d_t phi, u> - sum lambda phi c
    - <phi, B(u)>) - 1/2 int sum lambda phi^2``. The time derivative of ``phi``
    is taken from ``dphi`` when supplied, otherwise by finite differences.
    """
    if phi.basis != u.basis or phi.states.shape != u.states.shape or phi.dt != u.dt:
        raise ValueError("test field and trajectory must share basis and time grid")
    table = build_table(u.basis) if table is None else table
    return float(_linear_part(phi.states, dphi if dphi is not None else time_derivative(phi), u, table)
                 - 0.5 * trapezoid((phi.states**2) @ u.basis.eigenvalues, u.dt))


def _linear_part(p: np.ndarray, dp: np.ndarray, u: Trajectory, table: TrilinearTable,
                 conv: np.ndarray | None = None) -> float:
    c = u.states
    lam = u.basis.eigenvalues
    conv = table.apply(c) if conv is None else conv
    integrand = np.sum(dp * c, axis=1) - np.sum(lam * p * c, axis=1) - np.sum(p * conv, axis=1)
    return float(c[-1] @ p[-1] - c[0] @ p[0] - trapezoid(integrand, u.dt))


@dataclass
class Dictionary:
    """Test fields ``phi_j(t) = e_mode * P_l(2 t / T - 1)`` with Legendre polynomials ``P_l``."""

    modes: Sequence[int]
    degree: int

    def elements(self, u: Trajectory):
        t = u.times - u.t0
        T = u.T
        s = 2 * t / T - 1
        n = len(u.basis)
        for mode in self.modes:
            for l in range(self.degree + 1):
                coef = np.zeros(l + 1)
                coef[l] = 1.0
                val = legendre.legval(s, coef)
                der = legendre.legval(s, legendre.legder(coef)) * 2 / T
                p = np.zeros((len(t), n))
                dp = np.zeros((len(t), n))
                p[:, mode] = val
                dp[:, mode] = der
                yield p, dp


@dataclass
class DualityResult:
    sup: float
    coefficients: np.ndarray
    linear: np.ndarray
    gram: np.ndarray


def dictionary_sup(u: Trajectory, dictionary: Dictionary, table: TrilinearTable | None = None) -> DualityResult:
    """``sup_a Lambda(sum a_j phi_j, u) = 1/2 F^T G^+ F`` over the dictionary span.

    ``F_j`` is the linear part of Lambda and ``G_jk = int sum lambda phi_j phi_k``.
    The maximizer ``a = G^+ F`` is the Riesz representer of the residual on the span.
    """
    table = build_table(u.basis) if table is None else table
    conv = table.apply(u.states)
    lam = u.basis.eigenvalues
    elems = list(dictionary.elements(u))
    F = np.array([_linear_part(p, dp, u, table, conv) for p, dp in elems])
    # elements are single-mode, so the Gram matrix is block diagonal by mode
    k = len(elems)
    G = np.zeros((k, k))
    for a in range(k):
        for b in range(a, k):
            G[a, b] = G[b, a] = trapezoid(np.sum(lam * elems[a][0] * elems[b][0], axis=1), u.dt)
    coef = np.linalg.pinv(G, rcond=1e-12) @ F
    return DualityResult(float(0.5 * F @ coef), coef, F, G)


def random_test_field(u: Trajectory, rng: np.random.Generator, modes: int = 4, degree: int = 3) -> tuple[Trajectory, np.ndarray]:
    """A random smooth test field (few wave modes, low-degree polynomial in time)."""
    wave = np.flatnonzero(u.basis.is_wave)
    chosen = rng.choice(wave, size=min(modes, len(wave)), replace=False)
    d = Dictionary(chosen, degree)
    p = np.zeros_like(u.states)
    dp = np.zeros_like(u.states)
    for a, (pj, dpj) in zip(rng.standard_normal(len(chosen) * (degree + 1)), d.elements(u)):
        p += a * pj
        dp += a * dpj
    return Trajectory(u.basis, u.dt, p, u.t0), dp


# --- energy violation and its penalty ---------------------------------------

def energy_excess(traj: Trajectory, ustar0: SpectralField) -> float:
    """``max_t (1/2|u(t)|^2 + int_0^t |u|_V^2 - 1/2|u*_0|^2)^+`` over grid nodes."""
    c = traj.states
    diss = (c**2) @ traj.basis.eigenvalues
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (diss[1:] + diss[:-1]) * traj.dt)])
    viol = 0.5 * np.sum(c**2, axis=1) + cum - 0.5 * float(ustar0.coeffs @ ustar0.coeffs)
    return float(max(viol.max(), 0.0))


def _norm2(u0) -> float:
    if isinstance(u0, SpectralField):
        return float(u0.coeffs @ u0.coeffs)
    return float(u0) ** 2


def Z_bound(eta: float, u0) -> float:
    """Closed-form exponential-moment bound ``eta (1 - eta)^-2 |u0|^2``; ``u0`` may be a norm."""
    if not eta < 1:
        raise ValueError(f"eta must be < 1, got {eta}")
    return eta * (1 - eta) ** -2 * _norm2(u0)


def Z_star(x: float, u0) -> float:
    """Legendre transform ``sup_{0 <= eta < 1} (eta x - Z_bound(eta))``.

    The objective is concave; its maximizer solves ``x = a (1+eta)/(1-eta)^3``
    with ``a = |u0|^2``, located by a bracketed root search.
    """
    a = _norm2(u0)
    if x <= a:
        return 0.0
    if a == 0.0:
        return float(x)
    g = lambda e: a * (1 + e) / (1 - e) ** 3 - x
    hi = 1 - 1e-16
    e = optimize.brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-13)
    return float(e * x - a * e / (1 - e) ** 2)


def S_function(excess: float, u0) -> float:
    """Penalty ``S(4 theta) = max_lam min(Z*(lam), theta^2/(2 lam), Z*(|u0|^2 + theta))``.

    ``Z*`` is nondecreasing and ``theta^2/(2 lam)`` decreasing in ``lam``, so the
    max-min of the first two sits at their crossing; a log grid brackets the
    crossing and a root search refines it.
    """
    if excess < 0:
        raise ValueError("excess must be nonnegative")
    if excess == 0:
        return 0.0
    theta = excess / 4.0
    a = _norm2(u0)
    cap = Z_star(a + theta, u0)
    h = lambda lam: Z_star(lam, u0) - theta**2 / (2 * lam)
    grid = np.geomspace(max(a, 1e-12) * (1 + 1e-9) if a > 0 else 1e-12, 1e12, 241)
    vals = np.array([h(l) for l in grid])
    idx = np.flatnonzero(vals >= 0)
    if len(idx) == 0:
        raise RuntimeError("no crossing found on the lambda grid")
    j = idx[0]
    if j == 0:
        lam = grid[0]
    else:
        lam = optimize.brentq(h, grid[j - 1], grid[j], xtol=1e-14, rtol=1e-10)
    inner = min(Z_star(lam, u0), theta**2 / (2 * lam))
    return float(min(inner, cap))


# --- compactness functional ---------------------------------------------------

@dataclass
class CompactnessTerms:
    l2v: float
    linf_h: float
    seminorm: float
    l2_hgamma: float

    @property
    def total(self) -> float:
        return self.l2v + self.linf_h + self.seminorm + self.l2_hgamma


def compactness_terms(traj: Trajectory, alpha: float = 0.25, gamma: float = 3.0) -> CompactnessTerms:
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    c = traj.states
    lam = traj.basis.eigenvalues
    l2v = trapezoid((c**2) @ lam, traj.dt)
    linf = float(np.max(np.sum(c**2, axis=1)))
    w = 1.0 / (1.0 + lam**gamma)
    gram = (c * w) @ c.T
    sq = np.diag(gram)
    dist = sq[:, None] + sq[None, :] - 2 * gram
    t = traj.times
    gap = np.abs(t[:, None] - t[None, :])
    np.fill_diagonal(gap, 1.0)
    kernel = np.maximum(dist, 0.0) / gap ** (1 + 2 * alpha)
    np.fill_diagonal(kernel, 0.0)
    semi = float(traj.dt**2 * kernel.sum())
    l2h = trapezoid(sq, traj.dt)
    return CompactnessTerms(float(l2v), linf, semi, float(l2h))


def compactness_F(traj: Trajectory, alpha: float = 0.25, gamma: float = 3.0) -> float:
    """``|u|^2_{L2 V} + |u|^2_{Linf H} + |u|^2_{W^{alpha,2} H^-gamma}``."""
    return compactness_terms(traj, alpha, gamma).total
