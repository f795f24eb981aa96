"""Time integration of the Galerkin SDE, the deterministic flow and the skeleton equation."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .basis import (
    Basis,
    SpectralField,
    TrilinearTable,
    basis_from_csv,
    basis_to_csv,
    build_table,
)
from .noise import NoiseParams, replica_rng

SEMI_IMPLICIT = "semi_implicit_euler"
EXPONENTIAL = "exponential_euler"
EXPONENTIAL_RK2 = "exponential_rk2"
SCHEMES = (SEMI_IMPLICIT, EXPONENTIAL, EXPONENTIAL_RK2)

# largest coefficient magnitude accepted before a step is declared divergent
OVERFLOW_LIMIT = 1e150


class IntegrationError(FloatingPointError):
    """Raised when coefficients become non-finite; carries the failing step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite coefficients at step {step}")


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = EXPONENTIAL
    dt: float = 1e-3
    T: float = 1.0
    record_noise: bool = False
    nonlinear: bool = True  # switch used only by linear (OU) oracle tests

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.dt <= self.T:
            raise ValueError(f"dt={self.dt} must not exceed T={self.T}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class Trajectory:
    """States on a uniform grid ``t0 + i dt``; ``states`` has shape (N+1, n_modes)."""

    basis: Basis
    dt: float
    states: np.ndarray
    t0: float = 0.0
    noise_log: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != len(self.basis):
            raise ValueError(f"states must have shape (N+1, {len(self.basis)})")
        if self.noise_log is not None:
            self.noise_log = np.asarray(self.noise_log, dtype=float)
            if self.noise_log.shape != (self.steps, len(self.basis)):
                raise ValueError("noise log must have exactly one row per step")

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def T(self) -> float:
        return self.dt * self.steps

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> SpectralField:
        return SpectralField(self.basis, self.states[i])

    @property
    def fields(self) -> list[SpectralField]:
        return [self[i] for i in range(len(self))]

    def scaled(self, a: float) -> "Trajectory":
        return Trajectory(self.basis, self.dt, a * self.states, self.t0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# t0={self.t0!r}\n# dt={self.dt!r}\n")
        for key, val in self.meta.items():
            buf.write(f"# {key}={val}\n")
        for line in basis_to_csv(self.basis).splitlines():
            buf.write(f"# basis {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "mode_id", "coeff"])
        for i, row in enumerate(self.states):
            for j, c in enumerate(row):
                w.writerow([i, j, repr(float(c))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        meta, basis_lines, body = {}, [], []
        for line in text.splitlines():
            if line.startswith("# basis "):
                basis_lines.append(line[len("# basis "):])
            elif line.startswith("# "):
                key, _, val = line[2:].partition("=")
                meta[key.strip()] = val.strip()
            elif line:
                body.append(line)
        basis = basis_from_csv("\n".join(basis_lines) + "\n")
        rows = list(csv.DictReader(io.StringIO("\n".join(body) + "\n")))
        n_steps = max(int(r["step"]) for r in rows) + 1
        states = np.zeros((n_steps, len(basis)))
        for r in rows:
            states[int(r["step"]), int(r["mode_id"])] = float(r["coeff"])
        t0 = float(meta.pop("t0", 0.0))
        dt = float(meta.pop("dt"))
        return cls(basis, dt, states, t0, meta=meta)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read(cls, path: str | Path) -> "Trajectory":
        return cls.from_csv(Path(path).read_text())


@dataclass
class Forcing:
    """Spectral forcing on the trajectory grid, values of shape (N+1, n_modes).

    Constant-mode components are forced to zero: a matrix divergence cannot
    act on the mean flow.
    """

    basis: Basis
    dt: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.basis):
            raise ValueError(f"forcing values must have shape (N+1, {len(self.basis)})")
        self.values[:, ~self.basis.is_wave] = 0.0

    @classmethod
    def from_function(
        cls, basis: Basis, dt: float, steps: int, fn: Callable[[float], np.ndarray], t0: float = 0.0
    ) -> "Forcing":
        t = t0 + dt * np.arange(steps + 1)
        return cls(basis, dt, np.array([fn(s) for s in t]), t0)

    @classmethod
    def zeros(cls, basis: Basis, dt: float, steps: int) -> "Forcing":
        return cls(basis, dt, np.zeros((steps + 1, len(basis))))

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def __getitem__(self, i: int) -> SpectralField:
        return SpectralField(self.basis, self.values[i])

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.values[1:] + self.values[:-1])

    def h_minus1_cost(self, weights: np.ndarray | None = None) -> float:
        """``1/2 int sum f^2 / lambda dt`` (trapezoid), optionally with extra per-mode weights."""
        lam = self.basis.eigenvalues
        wave = self.basis.is_wave
        w = np.zeros(len(self.basis))
        w[wave] = 1.0 / lam[wave]
        if weights is not None:
            w = w * weights
        density = (self.values**2) @ w
        return 0.5 * trapezoid(density, self.dt)

    def scaled(self, a: float) -> "Forcing":
        return Forcing(self.basis, self.dt, a * self.values, self.t0)


def trapezoid(y: np.ndarray, dt: float, axis: int = 0) -> np.ndarray | float:
    y = np.asarray(y, dtype=float)
    if y.shape[axis] < 2:
        return np.zeros(np.delete(y.shape, axis)) if y.ndim > 1 else 0.0
    out = np.trapezoid(y, dx=dt, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def phi1(z: np.ndarray) -> np.ndarray:
    """``(e^z - 1)/z`` with the removable singularity filled in (``phi1(0) = 1``)."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def phi2(z: np.ndarray) -> np.ndarray:
    """``(e^z - 1 - z)/z^2`` with ``phi2(0) = 1/2``; series near zero avoids cancellation."""
    z = np.asarray(z, dtype=float)
    out = np.full_like(z, 0.5)
    small = np.abs(z) < 1e-3
    out[small] = 0.5 + z[small] / 6 + z[small] ** 2 / 24
    big = ~small
    out[big] = (np.expm1(z[big]) - z[big]) / z[big] ** 2
    return out


# --- drift and energy ---------------------------------------------------------

def drift(u: SpectralField, table: TrilinearTable) -> SpectralField:
    """Deterministic drift ``-lambda c - B(c, c)``."""
    return SpectralField(u.basis, -u.basis.eigenvalues * u.coeffs - table.apply(u.coeffs))


def energy(u: SpectralField | np.ndarray) -> float | np.ndarray:
    c = u.coeffs if isinstance(u, SpectralField) else np.asarray(u)
    return 0.5 * np.sum(c**2, axis=-1)


def dissipation(u: SpectralField | np.ndarray, basis: Basis | None = None):
    if isinstance(u, SpectralField):
        return float(u.basis.eigenvalues @ u.coeffs**2)
    return np.asarray(u) ** 2 @ basis.eigenvalues


class Stepper:
    """Vectorized one-step map shared by single runs and ensembles."""

    def __init__(self, basis: Basis, params: NoiseParams, cfg: IntegratorConfig, table):
        self.basis = basis
        self.cfg = cfg
        self.table = table
        lam = basis.eigenvalues
        x = lam * cfg.dt
        self.std = params.increment_std(cfg.dt, basis)
        self.correction = None
        if cfg.scheme in (EXPONENTIAL, EXPONENTIAL_RK2):
            self.lin = np.exp(-x)
            self.gain = phi1(-x) * cfg.dt
            # exact Ornstein-Uhlenbeck increment: variance eps sigma^2 (1 - e^{-2x}) / 2
            self.noise_gain = np.sqrt(phi1(-2.0 * x))
            if cfg.scheme == EXPONENTIAL_RK2:
                self.correction = phi2(-x) * cfg.dt
        else:
            self.lin = 1.0 / (1.0 + x)
            self.gain = cfg.dt / (1.0 + x)
            self.noise_gain = 1.0 / (1.0 + x)
        self.injected_std = self.std * self.noise_gain

    def __call__(self, c: np.ndarray, f: np.ndarray | None, z: np.ndarray | None):
        """Advance; returns (new state, injected noise or None)."""
        nonlinear = self.cfg.nonlinear
        conv = -self.table.apply(c) if nonlinear else None
        rhs = np.zeros_like(c) if conv is None else conv
        if f is not None:
            rhs = rhs + f
        new = self.lin * c + self.gain * rhs
        eta = None
        if z is not None:
            eta = z * self.injected_std
            new = new + eta
        if self.correction is not None and nonlinear:
            # second-order exponential corrector on the convective term
            new = new + self.correction * (-self.table.apply(new) - conv)
        return new, eta


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def step(
    u: SpectralField,
    params: NoiseParams,
    cfg: IntegratorConfig,
    forcing_value: SpectralField | None = None,
    rng=None,
    table: TrilinearTable | None = None,
) -> SpectralField:
    """One step of the chosen scheme.

    Exponential scheme: ``c' = e^{-x} c + phi1(-x) dt (-B(c) + f) + eta`` with
    ``x = lambda dt`` and ``eta`` the exact Ornstein-Uhlenbeck increment.
    Semi-implicit scheme: ``c' = (c + dt (-B(c) + f) + xi) / (1 + x)``.
    """
    table = build_table(u.basis) if table is None else table
    stepper = Stepper(u.basis, params, cfg, table)
    z = None
    if params.epsilon > 0:
        z = _as_rng(rng).standard_normal(len(u.basis))
    f = None if forcing_value is None else forcing_value.coeffs
    new, _ = stepper(u.coeffs, f, z)
    if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > OVERFLOW_LIMIT:
        raise IntegrationError(0)
    return SpectralField(u.basis, new)


# --- ensembles ---------------------------------------------------------------

NOISE_CHUNK = 256


@dataclass
class EnsembleBlock:
    """Recorded states of a contiguous block of replicas.

    ``states`` has shape (replicas, len(record_steps), n_modes); ``noise`` is
    (replicas, N, n_modes) when noise recording was requested.
    """

    replica_ids: np.ndarray
    record_steps: np.ndarray
    states: np.ndarray
    noise: np.ndarray | None = None


def _initial_states(u0: np.ndarray, rngs, params: NoiseParams, basis: Basis, gaussian: bool):
    c = np.tile(u0, (len(rngs), 1))
    if gaussian:
        sd = math.sqrt(params.epsilon / 2.0) * params.sigma_vector(basis)
        for r, g in enumerate(rngs):
            c[r] += sd * g.standard_normal(len(basis))
    return c


def run_block(
    u0: SpectralField,
    params: NoiseParams,
    cfg: IntegratorConfig,
    rngs: Sequence[np.random.Generator],
    forcing: Forcing | None = None,
    table: TrilinearTable | None = None,
    record_steps: Sequence[int] | None = None,
    gaussian_start: bool = False,
    replica_ids: Sequence[int] | None = None,
    extra_drift: np.ndarray | None = None,
    observer: Callable[[int, np.ndarray, np.ndarray | None], None] | None = None,
) -> EnsembleBlock:
    """Integrate one vectorized block; each row draws only from its own generator.

    ``extra_drift`` (N, n) or (n,) is added to the forcing midpoint values and
    is used by the tilted sampler. ``observer(i, state, eta)`` is called after
    every step with the new state.
    """
    basis = u0.basis
    table = build_table(basis) if table is None else table
    n = len(basis)
    N = cfg.steps
    stepper = Stepper(basis, params, cfg, table)
    rec = np.arange(N + 1) if record_steps is None else np.asarray(record_steps, dtype=int)
    rec_pos = {int(s): j for j, s in enumerate(rec)}
    R = len(rngs)
    out = np.empty((R, len(rec), n))
    noise = np.empty((R, N, n)) if cfg.record_noise else None
    fmid = None
    if forcing is not None:
        if forcing.steps != N:
            raise ValueError(f"forcing has {forcing.steps} steps, integrator expects {N}")
        fmid = forcing.midpoints()
    if extra_drift is not None:
        extra = np.broadcast_to(extra_drift, (N, n))
        fmid = extra if fmid is None else fmid + extra

    c = _initial_states(u0.coeffs, rngs, params, basis, gaussian_start)
    if 0 in rec_pos:
        out[:, rec_pos[0]] = c
    noisy = params.epsilon > 0
    z_chunk = None
    for i in range(N):
        j = i % NOISE_CHUNK
        if noisy and j == 0:
            length = min(NOISE_CHUNK, N - i)
            z_chunk = np.stack([g.standard_normal((length, n)) for g in rngs])
        z = z_chunk[:, j] if noisy else None
        f = None if fmid is None else fmid[i]
        with np.errstate(over="ignore", invalid="ignore"):
            c, eta = stepper(c, f, z)
        if not np.all(np.isfinite(c)) or np.max(np.abs(c)) > OVERFLOW_LIMIT:
            raise IntegrationError(i + 1)
        if noise is not None:
            noise[:, i] = eta if eta is not None else 0.0
        if observer is not None:
            observer(i + 1, c, eta)
        pos = rec_pos.get(i + 1)
        if pos is not None:
            out[:, pos] = c
    ids = np.arange(R) if replica_ids is None else np.asarray(replica_ids)
    return EnsembleBlock(ids, rec, out, noise)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("LLNS_THREADS", "1")))
    except ValueError:
        return 1


def ensemble_blocks(
    u0: SpectralField,
    params: NoiseParams,
    cfg: IntegratorConfig,
    replicas: int,
    master_seed: int,
    block_size: int = 500,
    **kwargs,
) -> Iterator[EnsembleBlock]:
    """Yield blocks of replicas in replica-id order.

    Replica ``r`` always uses ``replica_rng(master_seed, r)``, so results do not
    depend on the block size or on the number of worker threads.
    """
    table = kwargs.pop("table", None) or build_table(u0.basis)
    starts = list(range(0, replicas, block_size))

    def work(start):
        ids = np.arange(start, min(start + block_size, replicas))
        rngs = [replica_rng(master_seed, r) for r in ids]
        return run_block(u0, params, cfg, rngs, table=table, replica_ids=ids, **kwargs)

    threads = thread_count()
    if threads == 1:
        for s in starts:
            yield work(s)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map preserves submission order, keeping aggregation deterministic
        yield from pool.map(work, starts)


def simulate(
    u0: SpectralField,
    params: NoiseParams,
    cfg: IntegratorConfig,
    forcing: Forcing | None = None,
    rng=None,
    table: TrilinearTable | None = None,
) -> Trajectory:
    """Single sample path (deterministic given the generator or seed)."""
    rngs = [_as_rng(rng)]
    block = run_block(u0, params, cfg, rngs, forcing=forcing, table=table)
    noise = block.noise[0] if block.noise is not None else None
    meta = {"epsilon": params.epsilon, "delta": params.delta, "beta": params.beta, "scheme": cfg.scheme}
    return Trajectory(u0.basis, cfg.dt, block.states[0], 0.0, noise, meta)


def skeleton(
    u0: SpectralField,
    forcing: Forcing | None,
    cfg: IntegratorConfig,
    table: TrilinearTable | None = None,
) -> Trajectory:
    """Deterministic controlled flow ``du/dt = -A u - B(u) + f``."""
    params = NoiseParams(0.0, 0.0, 1.5, u0.basis.m)
    return simulate(u0, params, cfg, forcing, rng=0, table=table)


# --- energy bookkeeping -------------------------------------------------------

def energy_residual(
    traj: Trajectory,
    params: NoiseParams,
    forcing: Forcing | None = None,
) -> np.ndarray:
    """Running sum of ``dE + dt |u_i|_V^2 - <u_i, eta_i> - <u_i, f> dt - (eps/2) tr dt``.

    ``eta_i`` is the noise actually injected in step ``i`` (from the noise log).
    """
    if traj.noise_log is None:
        raise ValueError("trajectory carries no noise log; rerun with record_noise=True")
    c = traj.states
    dt = traj.dt
    lam = traj.basis.eigenvalues
    dE = 0.5 * np.sum(c[1:] ** 2 - c[:-1] ** 2, axis=1)
    diss = dt * (c[:-1] ** 2 @ lam)
    mart = np.sum(c[:-1] * traj.noise_log, axis=1)
    tr = float(lam @ params.sigma_vector(traj.basis) ** 2)
    r = dE + diss - mart - 0.5 * params.epsilon * tr * dt
    if forcing is not None:
        r -= dt * np.sum(c[:-1] * forcing.midpoints(), axis=1)
    return np.cumsum(r)


def energy_identity_check(traj: Trajectory, forcing: Forcing | None = None) -> float:
    """Defect ``1/2|u(T)|^2 + int |u|_V^2 - 1/2|u(0)|^2 - int <u, f>`` (trapezoid)."""
    c = traj.states
    diss = c**2 @ traj.basis.eigenvalues
    work = np.zeros(len(c)) if forcing is None else np.sum(c * forcing.values, axis=1)
    return float(
        0.5 * c[-1] @ c[-1] - 0.5 * c[0] @ c[0] + trapezoid(diss - work, traj.dt)
    )


def ensemble_summary(energies: np.ndarray, cfg: IntegratorConfig, seed: int) -> dict:
    """JSON-ready summary of per-replica energy series of shape (replicas, N+1)."""
    return {
        "replicas": int(energies.shape[0]),
        "T": cfg.T,
        "dt": cfg.dt,
        "mean_energy": energies.mean(axis=0).tolist(),
        "var_energy": energies.var(axis=0, ddof=1).tolist() if energies.shape[0] > 1 else [0.0] * energies.shape[1],
        "seed": int(seed),
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
