"""Direct and importance-sampled estimates of small probabilities on the eps log scale."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..basis import SpectralField, build_table
from ..dynamics import EXPONENTIAL, Forcing, IntegratorConfig, Stepper, Trajectory, ensemble_blocks
from ..noise import NoiseParams, ScalingSchedule

Event = Callable[[Trajectory], bool]


@dataclass
class RareEventResult:
    epsilon: float
    p_hat: float
    eps_log_p: float
    se: float
    hits: int
    replicas: int
    tilted: bool
    upper_bound_only: bool = False
    p_se: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def l2v_exceeds(level: float) -> Event:
    """Event ``int |u|_V^2 dt > level``."""

    def event(traj: Trajectory) -> bool:
        d = (traj.states**2) @ traj.basis.eigenvalues
        return bool(np.trapezoid(d, dx=traj.dt) > level)

    return event


def always(traj: Trajectory) -> bool:
    return True


def _estimate(weights: np.ndarray | None, hits: np.ndarray, eps: float, tilted: bool) -> RareEventResult:
    R = len(hits)
    k = int(hits.sum())
    if weights is None:
        p = k / R
        p_se = math.sqrt(p * (1 - p) / R) if R > 1 else 0.0
    else:
        # self-normalized importance sampling with the delta-method standard error
        w = weights / weights.sum()
        p = float(np.sum(w * hits))
        p_se = float(math.sqrt(np.sum(w**2 * (hits - p) ** 2)))
    if k == 0:
        bound = 3.0 / R  # rule of three: one-sided 95% upper bound
        return RareEventResult(eps, 0.0, eps * math.log(bound), math.nan, 0, R, tilted, True, 0.0)
    se = eps * p_se / p
    return RareEventResult(eps, p, eps * math.log(p), se, k, R, tilted, False, p_se)


def rare_event_estimate(
    event: Event,
    schedule: ScalingSchedule,
    u0: SpectralField,
    cfg: IntegratorConfig,
    replicas: int = 1000,
    seed: int = 0,
    tilt: Forcing | None = None,
    gaussian_start: bool = False,
    block_size: int = 200,
) -> list[RareEventResult]:
    """Estimate ``eps log P(event)`` for every entry of the schedule.

    With ``tilt`` the paths are sampled with the added drift ``sigma f`` and
    reweighted by the exact likelihood ratio of the exponential scheme,
    ``log(p/q) = -sum (2 eta s + s^2) / (2 v)`` over steps and noisy modes.
    """
    if tilt is not None and cfg.scheme != EXPONENTIAL:
        raise ValueError("importance sampling needs the exponential scheme (Gaussian transitions)")
    out = []
    for params in schedule.params():
        if params.m != u0.basis.m:
            raise ValueError("schedule cutoff must match the initial field")
        basis = u0.basis
        table = build_table(basis)
        run_cfg = IntegratorConfig(cfg.scheme, cfg.dt, cfg.T, record_noise=tilt is not None,
                                   nonlinear=cfg.nonlinear)
        drift = None
        if tilt is not None:
            drift = Forcing(basis, tilt.dt, tilt.values * params.sigma_vector(basis), tilt.t0)
            stepper = Stepper(basis, params, run_cfg, table)
            shift = stepper.gain * drift.midpoints()
            var = stepper.injected_std**2
            ok = var > 0
        hits, logw = [], []
        for blk in ensemble_blocks(
            u0, params, run_cfg, replicas, seed, block_size=block_size,
            forcing=drift, gaussian_start=gaussian_start, table=table,
        ):
            for r in range(blk.states.shape[0]):
                hits.append(event(Trajectory(basis, cfg.dt, blk.states[r])))
            if tilt is not None:
                eta = blk.noise[:, :, ok]
                s = shift[None, :, ok]
                logw.extend((-np.sum((2 * eta * s + s**2) / (2 * var[ok]), axis=(1, 2))).tolist())
        h = np.asarray(hits, dtype=float)
        w = None
        if tilt is not None:
            lw = np.asarray(logw)
            w = np.exp(lw - lw.max())
        out.append(_estimate(w, h, params.epsilon, tilt is not None))
    return out
