"""Batch command-line front end.

Every subcommand reads an optional INI-style config (``--config``), lets flags
override its values, writes its outputs into ``--output-dir`` and finishes with
a ``manifest.json`` listing each file with its sha256.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .basis import COS, SIN, Basis, ModeIndex, SpectralField, build_table, read_field
from .dynamics import (
    SCHEMES,
    Forcing,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    simulate,
    skeleton,
)
from .noise import BETA_MIN, NoiseConfigError, NoiseParams, ScalingSchedule, trace_AQ
from .rate import total_rate

log = logging.getLogger("llns")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SUBCOMMANDS = (
    "simulate", "skeleton", "rate", "tilt", "stationarity", "reversal",
    "blowup", "traces", "gaussmoment", "rareevent",
)

# config keys and their types; the same names are used as flags (with dashes)
KEYS = {
    "m": int, "epsilon": float, "delta": float, "beta": float,
    "T": float, "dt": float, "scheme": str, "seed": int,
    "replicas": int, "eta": float, "samples": int,
    "n": str, "tau": float, "m_max": int, "delta_grid": str,
    "u0": str, "v0": str, "u0_mode": str, "v0_mode": str, "force": str,
    "forcing": str, "trajectory": str, "schedule": str, "level": float,
    "gaussian_start": bool, "record_noise": bool, "nonlinear": bool,
    "output_dir": str,
}


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------

def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _convert(key: str, value):
    kind = KEYS.get(key)
    if kind is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    if value is None or value == "":
        return None
    if key == "m" and str(value).strip().lower() in ("none", "inf", "infinity"):
        return None
    try:
        if kind is bool:
            return _parse_bool(value)
        if kind is int:
            return int(float(value)) if isinstance(value, str) and "e" in value.lower() else int(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def read_config(path: str | Path) -> dict:
    """Flatten every section of a key = value file into one dict."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep case: "T" and "t" differ
    text = p.read_text()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    out = {}
    for section in cp.sections():
        for key, val in cp.items(section):
            out[key] = _convert(key, val)
    return out


def validate_config(config: dict) -> list[str]:
    """Diagnostics for violated constraints; an empty list means the config is valid."""
    diags = []
    beta = config.get("beta")
    if beta is not None and not beta > BETA_MIN:
        diags.append(f"beta={beta} violates beta > 5/4 (needed for a finite regularized noise trace)")
    delta = config.get("delta")
    if delta is not None and delta < 0:
        diags.append(f"delta={delta} violates delta >= 0")
    if delta == 0 and config.get("m") is None and "m" in config:
        diags.append("delta = 0 requires a finite Galerkin cutoff m (spatially white noise is supercritical)")
    eps = config.get("epsilon")
    if eps is not None and eps < 0:
        diags.append(f"epsilon={eps} violates epsilon >= 0")
    dt, T = config.get("dt"), config.get("T")
    if dt is not None and dt <= 0:
        diags.append(f"dt={dt} violates dt > 0")
    if dt is not None and T is not None and dt >= T:
        diags.append(f"dt={dt} violates dt < T={T}")
    eta = config.get("eta")
    if eta is not None and eta >= 1:
        diags.append(f"eta={eta} violates eta < 1 (Gaussian exponential moment integrability)")
    m = config.get("m")
    if m is not None and m < 0:
        diags.append(f"m={m} violates m >= 0")
    scheme = config.get("scheme")
    if scheme is not None and scheme not in SCHEMES:
        diags.append(f"scheme={scheme!r} is not one of {', '.join(SCHEMES)}")
    reps = config.get("replicas")
    if reps is not None and reps < 1:
        diags.append(f"replicas={reps} violates replicas >= 1")
    return diags


DEFAULTS = {
    "m": 2, "epsilon": 0.1, "delta": 0.0, "beta": 1.5, "T": 1.0, "dt": 1e-3,
    "scheme": "exponential_euler", "seed": 0, "replicas": 1000, "samples": 100_000,
    "gaussian_start": False, "record_noise": False, "nonlinear": True, "output_dir": ".",
}


# --- field and forcing helpers --------------------------------------------------

def parse_mode_spec(spec: str, basis: Basis) -> np.ndarray:
    """``"kx,ky,kz,pol,parity:value;..."`` (or ``"const,axis:value"``) to coefficients."""
    c = np.zeros(len(basis))
    for item in filter(None, (s.strip() for s in spec.split(";"))):
        head, _, val = item.partition(":")
        if not val:
            raise ConfigError(f"mode spec {item!r} lacks ':value'")
        parts = [p.strip() for p in head.split(",")]
        try:
            if parts[0] == "const":
                md = ModeIndex.constant(int(parts[1]))
            else:
                k = tuple(int(p) for p in parts[:3])
                parity = parts[4] if len(parts) > 4 else COS
                if parity not in (COS, SIN):
                    raise ConfigError(f"parity must be cos or sin in {item!r}")
                md = ModeIndex.wave(k, int(parts[3]), parity)
            idx = basis.find(md)
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad mode spec {item!r}: {exc}") from exc
        if idx is None:
            raise ConfigError(f"mode {head} is not in the basis of cutoff m={basis.m}")
        c[idx] += float(val)
    return c


def _field(cfg: dict, key: str, basis: Basis) -> SpectralField:
    path, spec = cfg.get(key), cfg.get(f"{key}_mode")
    if path:
        u = read_field(_input_path(path))
        if u.basis != basis:
            raise ConfigError(f"{key} field does not match the basis of m={basis.m}")
        return u
    if spec:
        return SpectralField(basis, parse_mode_spec(spec, basis))
    return basis.zeros()


def _forcing(cfg: dict, basis: Basis, dt: float, steps: int) -> Forcing | None:
    if cfg.get("forcing"):
        tr = Trajectory.read(_input_path(cfg["forcing"]))
        if tr.basis != basis or tr.steps != steps or tr.dt != dt:
            raise ConfigError("forcing file does not match basis or time grid")
        return Forcing(basis, dt, tr.states)
    if cfg.get("force"):
        vals = parse_mode_spec(cfg["force"], basis)
        return Forcing(basis, dt, np.tile(vals, (steps + 1, 1)))
    return None


def _input_path(p: str) -> Path:
    path = Path(p)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    return path


def _params(cfg: dict) -> NoiseParams:
    try:
        return NoiseParams(cfg["epsilon"], cfg["delta"], cfg["beta"], cfg["m"])
    except NoiseConfigError as exc:
        raise ConfigError(str(exc)) from exc


def _integrator(cfg: dict, record_noise: bool | None = None) -> IntegratorConfig:
    try:
        return IntegratorConfig(
            cfg["scheme"], cfg["dt"], cfg["T"],
            cfg["record_noise"] if record_noise is None else record_noise, cfg["nonlinear"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o))

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _csv_float(x: float) -> str:
    return repr(float(x))


# --- subcommands ------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> list[Path]:
    params = _params(cfg)
    basis = params.basis
    icfg = _integrator(cfg)
    u0 = _field(cfg, "u0", basis)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(0,)))
    if cfg["gaussian_start"]:
        from .experiments.gaussian import sample_gaussian_initial

        u0 = sample_gaussian_initial(u0, params, rng)
    traj = simulate(u0, params, icfg, _forcing(cfg, basis, icfg.dt, icfg.steps), rng)
    traj.meta.update({"seed": cfg["seed"], "m": params.m})
    path = out / "trajectory.csv"
    traj.write(path)
    files = [path]
    if traj.noise_log is not None:
        noise = Trajectory(basis, icfg.dt, np.vstack([np.zeros(len(basis)), traj.noise_log]))
        npath = out / "noise.csv"
        noise.write(npath)
        files.append(npath)
    return files


def cmd_skeleton(cfg: dict, out: Path) -> list[Path]:
    m = cfg["m"]
    basis = Basis.galerkin(m)
    icfg = _integrator(cfg)
    u0 = _field(cfg, "u0", basis)
    f = _forcing(cfg, basis, icfg.dt, icfg.steps)
    traj = skeleton(u0, f, icfg)
    traj.meta.update({"m": m})
    path = out / "trajectory.csv"
    traj.write(path)
    files = [path]
    if f is not None:
        fpath = out / "forcing.csv"
        Trajectory(basis, icfg.dt, f.values).write(fpath)
        files.append(fpath)
    return files


def cmd_rate(cfg: dict, out: Path) -> list[Path]:
    if not cfg.get("trajectory"):
        raise ConfigError("rate needs --trajectory")
    traj = Trajectory.read(_input_path(cfg["trajectory"]))
    u0 = _field(cfg, "u0", traj.basis) if (cfg.get("u0") or cfg.get("u0_mode")) else traj[0]
    br = total_rate(traj, u0, build_table(traj.basis))
    path = out / "rate.json"
    path.write_text(br.to_json() + "\n")
    return [path]


def cmd_tilt(cfg: dict, out: Path) -> list[Path]:
    from .experiments.tilt import tilted_simulate

    params = _params(cfg)
    basis = params.basis
    icfg = _integrator(cfg, record_noise=False)
    f = _forcing(cfg, basis, icfg.dt, icfg.steps) or Forcing.zeros(basis, icfg.dt, icfg.steps)
    rep = tilted_simulate(
        f, _field(cfg, "v0", basis), _field(cfg, "u0", basis), params, icfg,
        cfg["replicas"], cfg["seed"],
    )
    path = out / "tilt.json"
    path.write_text(_json({**rep.to_dict(), "seed": cfg["seed"]}))
    return [path]


def cmd_stationarity(cfg: dict, out: Path) -> list[Path]:
    from .experiments.symmetry import stationarity_test

    params = _params(cfg)
    rep = stationarity_test(params, cfg["T"], cfg["replicas"], cfg["seed"], cfg["dt"], cfg["scheme"])
    path = out / "stationarity.json"
    path.write_text(_json(rep.to_dict()))
    return [path]


def cmd_reversal(cfg: dict, out: Path) -> list[Path]:
    from .experiments.symmetry import time_reversal_test

    params = _params(cfg)
    rep = time_reversal_test(
        params, cfg["T"], cfg["replicas"], cfg["seed"], cfg["dt"], cfg["scheme"], cfg["nonlinear"]
    )
    path = out / "reversal.json"
    path.write_text(_json(rep.to_dict()))
    return [path]


def cmd_blowup(cfg: dict, out: Path) -> list[Path]:
    from .experiments.blowup import blowup_family

    basis = Basis.galerkin(cfg["m"])
    icfg = _integrator(cfg)
    f = _forcing(cfg, basis, icfg.dt, icfg.steps) or Forcing.zeros(basis, icfg.dt, icfg.steps)
    base = skeleton(_field(cfg, "u0", basis), f, icfg)
    tau = cfg.get("tau")
    if tau is None:
        tau = 0.25 * icfg.T
    ns = [int(s) for s in str(cfg.get("n") or "8,16,32").split(",")]
    reports = []
    for n in ns:
        try:
            _, _, rep = blowup_family(n, tau, base, f)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        d = rep.to_dict()
        d["h1_peak_over_sqrt_n"] = rep.h1_peak / math.sqrt(n)
        d["extra_cost_times_n"] = rep.extra_cost * n
        reports.append(d)
    path = out / "blowup.json"
    path.write_text(_json({"experiment": "blowup", "reports": reports}))
    return [path]


def _delta_grid(spec: str) -> list[float]:
    """``a:b`` gives one value per decade from a to b; ``a:b:k`` gives k log-spaced values."""
    parts = spec.split(":")
    try:
        if len(parts) == 1:
            return [float(parts[0])]
        a, b = float(parts[0]), float(parts[1])
        if len(parts) == 3:
            k = int(parts[2])
        else:
            k = int(round(math.log10(b / a))) + 1
        return [float(x) for x in np.geomspace(a, b, k)]
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad delta grid {spec!r}") from exc


def cmd_traces(cfg: dict, out: Path) -> list[Path]:
    m_max = cfg.get("m_max") or 8
    beta = cfg["beta"]
    deltas = _delta_grid(cfg.get("delta_grid") or "0")
    rows = ["m,delta,beta,trace"]
    for d in deltas:
        for m in range(0, m_max + 1):
            t = trace_AQ(NoiseParams(1.0, d, beta, m))
            rows.append(f"{m},{_csv_float(d)},{_csv_float(beta)},{_csv_float(t)}")
        if d > 0:
            t = trace_AQ(NoiseParams(1.0, d, beta, None))
            rows.append(f",{_csv_float(d)},{_csv_float(beta)},{_csv_float(t)}")
    path = out / "traces.csv"
    path.write_text("\n".join(rows) + "\n")
    return [path]


def cmd_gaussmoment(cfg: dict, out: Path) -> list[Path]:
    from .experiments.gaussian import exp_moment_bound, gaussian_exp_moment

    params = _params(cfg)
    eta = cfg.get("eta")
    if eta is None:
        raise ConfigError("gaussmoment needs --eta")
    u0 = _field(cfg, "u0", params.basis)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(0,)))
    try:
        res = gaussian_exp_moment(eta, u0, params, rng, cfg["samples"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rep = {
        "experiment": "gaussmoment", "eta": eta, "epsilon": params.epsilon, "seed": cfg["seed"],
        "closed_form": res.closed_form, "mc_estimate": res.mc_estimate, "mc_se": res.mc_se,
        "z": res.z, "bound": exp_moment_bound(eta, u0, params), "samples": res.samples,
        "passed": abs(res.z) <= 3.0,
    }
    path = out / "gaussmoment.json"
    path.write_text(_json(rep))
    return [path]


def cmd_rareevent(cfg: dict, out: Path) -> list[Path]:
    from .experiments.rare import l2v_exceeds, rare_event_estimate

    if cfg.get("schedule"):
        schedule = ScalingSchedule.read(_input_path(cfg["schedule"]), cfg["beta"])
    else:
        schedule = ScalingSchedule([(cfg["epsilon"], cfg["delta"], cfg["m"])], cfg["beta"])
    ms = {m for _, _, m in schedule.entries}
    if len(ms) != 1 or None in ms:
        raise ConfigError("rareevent needs a single finite cutoff m across the schedule")
    basis = Basis.galerkin(ms.pop())
    icfg = _integrator(cfg, record_noise=False)
    level = cfg.get("level")
    if level is None:
        raise ConfigError("rareevent needs --level (threshold on the L2-in-time V norm squared)")
    tilt = _forcing(cfg, basis, icfg.dt, icfg.steps)
    res = rare_event_estimate(
        l2v_exceeds(level), schedule, _field(cfg, "u0", basis), icfg,
        cfg["replicas"], cfg["seed"], tilt=tilt, gaussian_start=cfg["gaussian_start"],
    )
    path = out / "rareevent.json"
    path.write_text(_json({"experiment": "rareevent", "level": level, "seed": cfg["seed"],
                           "results": [r.to_dict() for r in res]}))
    return [path]


COMMANDS = {
    "simulate": cmd_simulate, "skeleton": cmd_skeleton, "rate": cmd_rate, "tilt": cmd_tilt,
    "stationarity": cmd_stationarity, "reversal": cmd_reversal, "blowup": cmd_blowup,
    "traces": cmd_traces, "gaussmoment": cmd_gaussmoment, "rareevent": cmd_rareevent,
}


# --- argument parsing and the run entry point ---------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="llns", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"llns {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--verbose", "-v", action="store_true")
        for key, kind in KEYS.items():
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, dest=key, default=None, nargs="?", const="true")
            else:
                p.add_argument(flag, dest=key, default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for key in KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _convert(key, val)
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(argv: list[str] | None = None) -> int:
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = resolve_config(args)
        diags = validate_config(cfg)
        if diags:
            for d in diags:
                print(f"config error: {d}", file=sys.stderr)
            return EXIT_CONFIG
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        log.info("running %s into %s", args.command, out)
        files = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # library preconditions (bad cutoff for an experiment, mismatched grids, ...)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = {
        "subcommand": args.command,
        "config": {k: cfg[k] for k in sorted(cfg) if cfg[k] is not None},
        "version": __version__,
        "wall_time_seconds": time.perf_counter() - start,
        "files": {p.name: _sha256(p) for p in files},
    }
    (out / "manifest.json").write_text(_json(manifest))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
