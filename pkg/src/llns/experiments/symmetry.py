"""Stationarity of the Gaussian measure and time-reversal symmetry at delta = 0."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..basis import Basis, build_table
from ..dynamics import EXPONENTIAL_RK2, IntegratorConfig, ensemble_blocks
from ..noise import NoiseParams


def _require_white(params: NoiseParams):
    if params.delta != 0:
        raise ValueError("the Gaussian measure is invariant only for delta = 0")
    if params.m is None:
        raise ValueError("a finite cutoff m is required")


class Moments:
    """Streaming first and second moments of a batch of scalar statistics."""

    def __init__(self, k: int):
        self.n = 0
        self.s1 = np.zeros(k)
        self.s2 = np.zeros(k)

    def add(self, x: np.ndarray) -> None:
        self.n += x.shape[0]
        self.s1 += x.sum(axis=0)
        self.s2 += (x**2).sum(axis=0)

    @property
    def mean(self) -> np.ndarray:
        return self.s1 / self.n

    @property
    def var(self) -> np.ndarray:
        return np.maximum(self.s2 / self.n - self.mean**2, 0.0) * self.n / (self.n - 1)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.var / self.n)


def _z(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    out = np.zeros_like(diff)
    ok = se > 0
    out[ok] = diff[ok] / se[ok]
    out[~ok & (diff != 0)] = np.inf
    return out


@dataclass
class StationarityReport:
    epsilon: float
    m: int
    T: float
    replicas: int
    seed: int
    mean_z: np.ndarray
    var_z: np.ndarray
    energy_z: float
    cross_z: np.ndarray
    threshold: float = 4.0

    @property
    def max_var_z(self) -> float:
        return float(np.max(np.abs(self.var_z))) if self.var_z.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_var_z <= self.threshold and float(np.max(np.abs(self.mean_z), initial=0)) <= self.threshold

    def to_dict(self) -> dict:
        return {
            "experiment": "stationarity",
            "epsilon": self.epsilon,
            "m": self.m,
            "T": self.T,
            "replicas": self.replicas,
            "seed": self.seed,
            "max_abs_mean_z": float(np.max(np.abs(self.mean_z), initial=0.0)),
            "max_abs_var_z": self.max_var_z,
            "energy_z": self.energy_z,
            "max_abs_cross_z": float(np.max(np.abs(self.cross_z), initial=0.0)),
            "mean_z": self.mean_z.tolist(),
            "var_z": self.var_z.tolist(),
            "threshold": self.threshold,
            "passed": self.passed,
        }


def stationarity_test(
    params: NoiseParams,
    T: float = 1.0,
    replicas: int = 10_000,
    seed: int = 0,
    dt: float = 1e-3,
    scheme: str = EXPONENTIAL_RK2,
    block_size: int = 500,
) -> StationarityReport:
    """Start from ``G(0, eps I / 2)``, integrate to ``T`` and test the law at ``T``.

    Per wave mode: z-scores of the mean against 0 and of the variance against
    ``eps/2``; the energy at ``T`` against its start (paired); cross moments
    ``E[c_a c_b]`` against 0.
    """
    _require_white(params)
    basis = Basis.galerkin(params.m)
    wave = np.flatnonzero(basis.is_wave)
    k = len(wave)
    target = params.epsilon / 2.0
    cfg = IntegratorConfig(scheme=scheme, dt=dt, T=T)
    first = Moments(k)
    second = Moments(k)
    fourth = Moments(k)
    denergy = Moments(1)
    iu = np.triu_indices(k, 1)
    cross = Moments(len(iu[0]))
    for blk in ensemble_blocks(
        basis.zeros(), params, cfg, replicas, seed, block_size=block_size,
        record_steps=[0, cfg.steps], gaussian_start=True,
    ):
        c0 = blk.states[:, 0, wave]
        c = blk.states[:, 1, wave]
        first.add(c)
        second.add(c**2)
        fourth.add(c**4)
        denergy.add((np.sum(c**2, axis=1) - np.sum(c0**2, axis=1))[:, None])
        cross.add((c[:, :, None] * c[:, None, :])[:, iu[0], iu[1]])
    n = first.n
    mean_z = _z(first.mean, first.se)
    var_hat = second.mean - first.mean**2
    # standard error of the variance estimator from the empirical fourth moment
    var_se = np.sqrt(np.maximum(fourth.mean - second.mean**2, 0.0) / n)
    var_z = _z(var_hat - target, var_se)
    energy_z = float(_z(denergy.mean, denergy.se)[0])
    cross_z = _z(cross.mean, cross.se)
    return StationarityReport(
        params.epsilon, params.m, T, replicas, seed, mean_z, var_z, energy_z, cross_z
    )


# --- time reversal -------------------------------------------------------------

LAG_FRACTIONS = ((0.2, 0.8), (0.4, 0.6))


def coupled_triples(basis: Basis, count: int = 24, tau: float = 0.01) -> list[tuple[int, int, int]]:
    """Triad-coupled ``(a, b, c)`` with the largest predicted third moment.

    ``E[c_a(t) c_b(t) c_c(t + tau)]`` is driven by the symmetrized coefficient
    ``B_cab + B_cba``; the score weighs it by the linear response
    ``int_0^tau e^{-lam_c (tau - s)} e^{-(lam_a + lam_b) s} ds``.
    """
    D = build_table(basis).dense()
    sym = D + D.transpose(0, 2, 1)
    lam = basis.eigenvalues
    scores = []
    wave = np.flatnonzero(basis.is_wave)
    for c in wave:
        for a in wave:
            for b in wave:
                if b < a or abs(sym[c, a, b]) < 1e-12:
                    continue
                rate = lam[a] + lam[b] - lam[c]
                resp = tau * math.exp(-lam[c] * tau) if abs(rate) < 1e-12 else (
                    math.exp(-lam[c] * tau) - math.exp(-(lam[a] + lam[b]) * tau)
                ) / rate
                scores.append((abs(sym[c, a, b]) * resp, (int(a), int(b), int(c))))
    scores.sort(key=lambda s: (-s[0], s[1]))
    return [t for _, t in scores[:count]]


@dataclass
class ReversalReport:
    epsilon: float
    m: int
    T: float
    replicas: int
    seed: int
    second_z: np.ndarray
    third_z: np.ndarray
    control_third_z: np.ndarray
    triples: list
    linear: bool
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.second_z)), np.max(np.abs(self.third_z), initial=0.0)))

    @property
    def control_max_abs_z(self) -> float:
        return float(np.max(np.abs(self.control_third_z), initial=0.0))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.threshold

    def to_dict(self) -> dict:
        return {
            "experiment": "reversal",
            "epsilon": self.epsilon,
            "m": self.m,
            "T": self.T,
            "replicas": self.replicas,
            "seed": self.seed,
            "linear_only": self.linear,
            "max_abs_second_z": float(np.max(np.abs(self.second_z))),
            "max_abs_third_z": float(np.max(np.abs(self.third_z), initial=0.0)),
            "control_max_abs_third_z": self.control_max_abs_z,
            "triples": [list(t) for t in self.triples],
            "threshold": self.threshold,
            "passed": self.passed,
            "control_detected": self.control_max_abs_z > self.threshold,
        }


def _pair_stats(S: np.ndarray, nodes: dict, triples, pairs, table) -> np.ndarray:
    """Per replica: autocovariances, cross covariances and third moments at each lag pair.

    The last third-moment column is the aggregate ``<c(t2), B(c(t1), c(t1))>``,
    a fixed linear combination of all triad third moments; it has far more
    power than any single triple.
    """
    cols = []
    for t1, t2 in LAG_FRACTIONS:
        x1, x2 = S[:, nodes[t1]], S[:, nodes[t2]]
        cols.append(x1 * x2)
        a, b = pairs
        cols.append(x1[:, a] * x2[:, b])
        cols.append(x1[:, b] * x2[:, a])
        ta, tb, tc = triples
        cols.append(x1[:, ta] * x1[:, tb] * x2[:, tc])
        cols.append(np.sum(x2 * table.apply(x1), axis=1)[:, None])
    return np.concatenate(cols, axis=1)


def time_reversal_test(
    params: NoiseParams,
    T: float = 0.05,
    replicas: int = 10_000,
    seed: int = 0,
    dt: float = 2.5e-4,
    scheme: str = EXPONENTIAL_RK2,
    nonlinear: bool = True,
    n_triples: int = 24,
    block_size: int = 500,
) -> ReversalReport:
    """Two-sample comparison of the forward law and the law of ``-u(T - t)``.

    The ensemble is split into two independent halves. The first half gives
    forward statistics at the lag pairs; the second half is reversed and
    negated before the same statistics are computed. A non-negated reversal of
    the second half is the negative control: under the true dynamics it flips
    the sign of every third moment.
    """
    _require_white(params)
    basis = Basis.galerkin(params.m)
    wave = np.flatnonzero(basis.is_wave)
    cfg = IntegratorConfig(scheme=scheme, dt=dt, T=T, nonlinear=nonlinear)
    N = cfg.steps
    fracs = sorted({f for p in LAG_FRACTIONS for f in p})
    steps = [int(round(f * N)) for f in fracs]
    if any(abs(s * dt - f * T) > 1e-9 * T for s, f in zip(steps, fracs)):
        raise ValueError("lag times must fall on the time grid")
    triples = coupled_triples(basis, n_triples, tau=0.2 * T)
    if not triples:
        raise ValueError(f"no triad-coupled modes in B_{params.m}; use m >= 2")
    tri = tuple(np.array(x) for x in zip(*triples))
    pair_set = sorted({(a, c) for a, _, c in triples if a != c} | {(b, c) for _, b, c in triples if b != c})
    pairs = tuple(np.array(x) for x in zip(*pair_set))
    table = build_table(basis)
    nodes = {f: j for j, f in enumerate(fracs)}
    # reversal maps time fraction f to 1 - f
    rev_nodes = {f: nodes[round(1 - f, 10)] for f in fracs}
    half = replicas // 2
    fwd = rev = ctl = None
    for blk in ensemble_blocks(
        basis.zeros(), params, cfg, 2 * half, seed, block_size=block_size,
        record_steps=steps, gaussian_start=True,
    ):
        S = blk.states
        in_a = blk.replica_ids < half
        if in_a.any():
            x = _pair_stats(S[in_a], nodes, tri, pairs, table)
            fwd = fwd or Moments(x.shape[1])
            fwd.add(x)
        if (~in_a).any():
            Sb = S[~in_a]
            xr = _pair_stats(-Sb, rev_nodes, tri, pairs, table)
            xc = _pair_stats(Sb, rev_nodes, tri, pairs, table)
            rev = rev or Moments(xr.shape[1])
            ctl = ctl or Moments(xc.shape[1])
            rev.add(xr)
            ctl.add(xc)
    se = np.sqrt(fwd.se**2 + rev.se**2)
    z = _z(fwd.mean - rev.mean, se)
    zc = _z(fwd.mean - ctl.mean, np.sqrt(fwd.se**2 + ctl.se**2))
    # columns per lag pair: n modes, |pairs|, |pairs|, |triples| + 1 aggregate
    n, p, t = len(basis), len(pair_set), len(triples) + 1
    width = n + 2 * p + t
    second_cols, third_cols = [], []
    for j in range(len(LAG_FRACTIONS)):
        off = j * width
        second_cols.extend(off + wave)
        second_cols.extend(range(off + n, off + n + 2 * p))
        third_cols.extend(range(off + n + 2 * p, off + width))
    return ReversalReport(
        params.epsilon, params.m, T, 2 * half, seed,
        z[second_cols], z[third_cols], zc[third_cols], triples, not nonlinear,
    )
