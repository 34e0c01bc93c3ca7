"""Command-line front end.

Configurations are YAML files with optional sections ``system``, ``field``,
``integrator``, ``trajectory``, ``ensemble`` and ``verify``.  Omitted keys
take the default parameter set of the model.  Unknown keys are rejected.

Exit codes: 0 success, 1 configuration error, 2 numerical failure (or a
failed verification check), 3 partial ensemble.
"""

from __future__ import annotations

import argparse
import dataclasses
import difflib
import json
import math
import os
import platform
import re
import subprocess
import sys
import time
from dataclasses import dataclass
from dataclasses import field as dc_field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .dynamics import (
    ConfigurationError,
    IntegratorConfig,
    NumericalBlowupError,
    initial_state,
    integrate_trajectory,
    load_checkpoint,
    save_checkpoint,
)
from .ensemble import (
    RIGID_MASS_FACTOR,
    EnsembleConfig,
    EnsembleError,
    EnsembleStats,
    run_ensemble,
    trajectory_seed,
)
from .field import FieldParams
from .ground_state import (
    GeometryOptimizationError,
    NotAMinimumError,
    normal_modes,
    relaxed_geometry,
    sample_wigner,
)
from .model import LatticeState, SystemParams
from .observables import rectification_and_efficiency
from .verification import kernel_checks, markovian_checks

MODES = ("trajectory", "ensemble", "phase-sweep", "verify")
WORKERS_ENV = "SSHJ_WORKERS"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_PARTIAL = 3


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


@dataclass(frozen=True)
class TrajectoryOptions:
    phase: float | None = None  # relative phase phi_2w - 2 phi_w; None keeps the field section
    rigid: bool = False
    wigner: bool = False  # sample the initial lattice instead of starting at the minimum
    zero_point: bool = True
    seed: int = 0
    geometry_cache: str | None = None
    restart: str | None = None  # checkpoint to resume from
    checkpoint: str | None = None  # write the final state here


@dataclass(frozen=True)
class EnsembleOptions:
    n_trajectories: int = 1000
    base_seed: int = 0
    phases: tuple = (0.0,)
    n_phases: int | None = None  # evenly spaced grid on [0, 2 pi); excludes ``phases``
    rigid: bool = False
    rigid_wigner: bool = False
    zero_point: bool = True
    workers: int | None = None
    geometry_cache: str | None = None
    max_failure_fraction: float = 0.01


@dataclass(frozen=True)
class VerifyOptions:
    n_sites: int = 8
    gamma_eff: float = 0.1
    t_leads: tuple = (5.0, 10.0, 20.0)
    tolerance: float = 0.02
    t_final: float = 30.0


@dataclass
class RunConfig:
    mode: str
    system: SystemParams
    field: FieldParams
    integrator: IntegratorConfig
    trajectory: TrajectoryOptions
    ensemble: EnsembleOptions
    verify: VerifyOptions
    output_dir: Path
    workers: int = 1
    resolved: dict = dc_field(default_factory=dict)

    def ensemble_config(self) -> EnsembleConfig:
        e = self.ensemble
        return EnsembleConfig(
            system=self.system, field=self.field, integrator=self.integrator,
            n_trajectories=e.n_trajectories, base_seed=e.base_seed, phases=tuple(e.phases),
            rigid=e.rigid, rigid_wigner=e.rigid_wigner, zero_point=e.zero_point,
            workers=self.workers, geometry_cache=e.geometry_cache,
            max_failure_fraction=e.max_failure_fraction)


SECTIONS = {
    "system": SystemParams,
    "field": FieldParams,
    "integrator": IntegratorConfig,
    "trajectory": TrajectoryOptions,
    "ensemble": EnsembleOptions,
    "verify": VerifyOptions,
}
TOP_LEVEL = ("mode", "output_dir", *SECTIONS)


# Parsing


def _line_map(node, prefix=(), out=None) -> dict:
    """Source line (1-based) of every mapping key, by key path."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (str(key_node.value),)
            out[path] = key_node.start_mark.line + 1
            _line_map(value_node, path, out)
    return out


def _where(lines: dict, path: tuple) -> str:
    line = lines.get(path)
    return f" (line {line})" if line else ""


def _unknown(key: str, allowed, lines, path) -> ConfigError:
    hint = difflib.get_close_matches(key, list(allowed), n=1)
    extra = f"; did you mean {hint[0]!r}?" if hint else ""
    return ConfigError(f"unknown key {'.'.join(path)!r}{_where(lines, path)}{extra}")


_PI_EXPR = re.compile(r"^\s*([-+]?\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def parse_phase(value) -> float:
    """Phase in radians from a number or an expression such as ``pi/2`` or ``3*pi/4``."""
    if isinstance(value, bool):
        raise ValueError(f"phase must be a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = _PI_EXPR.match(str(value))
    if not m:
        raise ValueError(f"cannot read phase {value!r}")
    coef = m.group(1)
    scale = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    denom = float(m.group(2)) if m.group(2) else 1.0
    return scale * math.pi / denom


def _coerce(value, default, name: str):
    """Match ``value`` to the type of the field default."""
    if name == "phases" or name == "t_leads":
        items = value if isinstance(value, (list, tuple)) else [value]
        conv = parse_phase if name == "phases" else float
        return tuple(conv(v) for v in items)
    if name == "phase":
        return None if value is None else parse_phase(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"expected true/false, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(default, int) or name in ("workers", "n_phases"):
        if value is None and default is None:
            return None
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ValueError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    if default is None or isinstance(default, str):
        if value is None or isinstance(value, str):
            return value
        raise ValueError(f"expected a string, got {value!r}")
    return value


def _build_section(name: str, cls, raw, lines):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r}{_where(lines, (name,))} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = {k: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
                for k, f in fields.items()}
    kwargs = {}
    for key, value in raw.items():
        path = (name, str(key))
        if key not in fields:
            raise _unknown(str(key), fields, lines, path)
        try:
            kwargs[key] = _coerce(value, defaults[key], key)
        except ValueError as exc:
            raise ConfigError(f"{name}.{key}{_where(lines, path)}: {exc}") from None
    try:
        return cls(**kwargs), kwargs
    except ValueError as exc:  # dataclass validation; messages name the field
        msg = str(exc)
        key = next((k for k in kwargs if msg.startswith(k)), None)
        loc = f"{name}.{key}{_where(lines, (name, key))}" if key else f"{name}{_where(lines, (name,))}"
        raise ConfigError(f"{loc}: {msg}") from None


def _as_plain(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        out[f.name] = list(val) if isinstance(val, tuple) else val
    return out


def build_config(raw: dict | None, lines: dict | None = None, mode: str | None = None,
                 output_dir=None, workers: int | None = None, seed: int | None = None) -> RunConfig:
    """Validate a parsed document and apply command-line overrides."""
    raw = {} if raw is None else raw
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    for key in raw:
        if key not in TOP_LEVEL:
            raise _unknown(str(key), TOP_LEVEL, lines, (str(key),))

    mode = mode or raw.get("mode") or "trajectory"
    if mode not in MODES:
        raise ConfigError(f"mode{_where(lines, ('mode',))}: must be one of {MODES}, got {mode!r}")

    system, _ = _build_section("system", SystemParams, raw.get("system"), lines)
    fp, _ = _build_section("field", FieldParams, raw.get("field"), lines)
    integ_raw = dict(raw.get("integrator") or {})
    integ_raw.setdefault("t_final", fp.duration)
    integrator, _ = _build_section("integrator", IntegratorConfig, integ_raw, lines)
    traj, _ = _build_section("trajectory", TrajectoryOptions, raw.get("trajectory"), lines)
    ens, ens_kw = _build_section("ensemble", EnsembleOptions, raw.get("ensemble"), lines)
    ver, _ = _build_section("verify", VerifyOptions, raw.get("verify"), lines)

    if ens.n_phases is not None:
        if "phases" in ens_kw:
            raise ConfigError("ensemble: give either 'phases' or 'n_phases', not both")
        if ens.n_phases < 1:
            raise ConfigError("ensemble.n_phases must be >= 1")
        ens = dataclasses.replace(
            ens, phases=tuple(2 * math.pi * k / ens.n_phases for k in range(ens.n_phases)), n_phases=None)
    if seed is not None:
        ens = dataclasses.replace(ens, base_seed=seed)
        traj = dataclasses.replace(traj, seed=seed)
    if not integrator.markovian:
        raise ConfigError("integrator.markovian: the memory-kernel propagator is only used in verify mode")
    if mode in ("trajectory", "ensemble", "phase-sweep"):
        try:
            integrator.check_resolution(fp)
        except ConfigurationError as exc:
            raise ConfigError(f"integrator.dt: {exc}") from None
    if traj.phase is not None and not 0.0 <= traj.phase < 2 * math.pi:
        raise ConfigError(f"trajectory.phase must lie in [0, 2 pi), got {traj.phase}")

    if workers is None:
        workers = ens.workers
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        try:
            workers = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    if workers < 1:
        raise ConfigError("workers must be >= 1")

    cfg = RunConfig(mode, system, fp, integrator, traj, ens, ver,
                    Path(output_dir or raw.get("output_dir") or "output"), workers)
    try:
        cfg.ensemble_config()  # phase range and counts
    except ValueError as exc:
        raise ConfigError(f"ensemble: {exc}") from None
    if mode == "phase-sweep" and len(ens.phases) < 2:
        raise ConfigError("phase-sweep mode needs at least two phases")

    cfg.resolved = {
        "mode": mode, "output_dir": str(cfg.output_dir),
        **{name: _as_plain(getattr(cfg, name)) for name in SECTIONS},
    }
    cfg.resolved["ensemble"]["workers"] = workers
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run configuration."""
    text = Path(path).read_text()
    return parse_config_text(text, source=str(path))


def parse_config_text(text: str, source: str = "<string>", **overrides) -> RunConfig:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{source}:{where}: YAML parse error: {problem}") from None
    return build_config(raw, _line_map(node) if node is not None else {}, **overrides)


# Output


UNITS = "t fs; E V/A; jL jR electrons/fs into the lead; qL qR |e|; norm electrons; eps_k eV"


def _fmt(x) -> str:
    return repr(float(x))


def write_timeseries(path: Path, times, field_, j_left, j_right, q_left, q_right, norm, spectrum,
                     extra=None, header_lines=()) -> None:
    """CSV with comment header.  Columns: t,E,jL,jR,qL,qR,norm,eps_1..eps_K[,extras]."""
    spectrum = np.asarray(spectrum)
    k = spectrum.shape[1] if spectrum.ndim == 2 else 0
    extra = extra or {}
    cols = ["t", "E", "jL", "jR", "qL", "qR", "norm"] + [f"eps_{i + 1}" for i in range(k)] + list(extra)
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# units: {UNITS}\n")
        fh.write(f"# eps_1..eps_{k}: instantaneous levels nearest the Fermi energy, ascending\n")
        fh.write(",".join(cols) + "\n")
        for i in range(len(times)):
            row = [times[i], field_[i], j_left[i], j_right[i], q_left[i], q_right[i], norm[i]]
            row += list(spectrum[i]) if k else []
            row += [v[i] for v in extra.values()]
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_sweep(path: Path, rows: list[dict], header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("# units: phase rad; rectification and rectification_stderr |e|; eta dimensionless"
                 " (empty when qL + qR < 1e-6)\n")
        fh.write("phase,rectification,rectification_stderr,eta\n")
        for r in rows:
            eta = "" if r["eta"] is None else _fmt(r["eta"])
            fh.write(f"{_fmt(r['phase'])},{_fmt(r['rectification'])},"
                     f"{_fmt(r['rectification_stderr'])},{eta}\n")


def _git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def write_manifest(cfg: RunConfig, status: str, outputs: list[str], results: dict,
                   seeds: dict, wall: float, argv=None) -> Path:
    manifest = {
        "status": status,
        "mode": cfg.mode,
        "config": cfg.resolved,
        "seeds": seeds,
        "outputs": outputs,
        "results": results,
        "wall_time_s": wall,
        "code": {"package": "sshjunction", "version": __version__, "git": _git_revision()},
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__, "platform": platform.platform()},
        "argv": list(argv) if argv is not None else None,
    }
    path = cfg.output_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


# Modes


def run_trajectory(cfg: RunConfig):
    opts = cfg.trajectory
    p = cfg.system.with_(rigid_mass_factor=RIGID_MASS_FACTOR) if opts.rigid else cfg.system
    fp = cfg.field if opts.phase is None else cfg.field.with_relative_phase(opts.phase)
    seeds = {"seed": opts.seed, "scheme": "SeedSequence([seed, 0, 0])" if opts.wigner else None}
    if opts.restart:
        init = load_checkpoint(opts.restart)
        if init.lattice.n_sites != p.n_sites:
            raise ConfigError(f"trajectory.restart: checkpoint has {init.lattice.n_sites} sites, "
                              f"system.n_sites is {p.n_sites}")
    else:
        u_star = relaxed_geometry(cfg.system, opts.geometry_cache)
        if opts.wigner:
            modes = normal_modes(u_star, p)
            rng = np.random.default_rng(trajectory_seed(opts.seed, 0, 0))
            lattice = sample_wigner(modes, rng, opts.zero_point).lattice()
        else:
            lattice = LatticeState(u_star)
        init = initial_state(lattice, p)
    res = integrate_trajectory(init, cfg.integrator, fp, p)
    outputs = ["timeseries.csv"]
    write_timeseries(cfg.output_dir / "timeseries.csv", res.times, res.field, res.j_left,
                     res.j_right, res.q_left, res.q_right, res.norm, res.spectrum,
                     header_lines=[f"sshjunction {__version__} trajectory, relative phase "
                                   f"{fp.relative_phase!r} rad"])
    if opts.checkpoint:
        save_checkpoint(opts.checkpoint, res.final_state)
        outputs.append(str(opts.checkpoint))
    rect, eta = rectification_and_efficiency(res)
    results = {"q_left": float(res.q_left[-1]), "q_right": float(res.q_right[-1]),
               "rectification": rect, "eta": eta,
               "charge_balance_error": res.charge_balance_error(), **res.meta}
    return EXIT_OK, outputs, results, seeds


def _write_ensemble(cfg: RunConfig, stats: EnsembleStats, partial: bool) -> list[str]:
    tag = ["PARTIAL RESULT: ensemble failure cap exceeded"] if partial else []
    outputs = []
    multi = len(stats.phases) > 1
    for k, ps in enumerate(stats.phases):
        name = f"timeseries_phase{k}.csv" if multi else "timeseries.csv"
        write_timeseries(
            cfg.output_dir / name, ps.times, ps.field, ps.j_left_mean, ps.j_right_mean,
            ps.q_left_t, ps.q_right_t, ps.norm_t, ps.spectrum_t,
            extra={"jL_stderr": ps.j_left_se, "jR_stderr": ps.j_right_se},
            header_lines=tag + [f"ensemble mean over {ps.n_ok} trajectories "
                                f"({ps.n_failed} failed), relative phase {ps.phase!r} rad"])
        outputs.append(name)
    write_sweep(cfg.output_dir / "sweep.csv", stats.table(), header_lines=tag)
    outputs.append("sweep.csv")
    return outputs


def _ensemble_results(stats: EnsembleStats) -> dict:
    rows = stats.table()
    for row, ps in zip(rows, stats.phases):
        row["failures"] = ps.failures
        row["max_balance_mismatch"] = ps.max_balance_mismatch
        row["eta_mean_of_trajectories"] = ps.eta_trajectories[0]
    return {"phases": rows}


def run_ensemble_mode(cfg: RunConfig, progress=None):
    ecfg = cfg.ensemble_config()
    seeds = {"base_seed": ecfg.base_seed, "scheme": "SeedSequence([base_seed, phase_index, index])"}
    try:
        stats = run_ensemble(ecfg, progress=progress)
    except EnsembleError as exc:
        if exc.stats is None:
            raise
        outputs = _write_ensemble(cfg, exc.stats, partial=True)
        return EXIT_PARTIAL, outputs, {**_ensemble_results(exc.stats), "error": str(exc)}, seeds
    return EXIT_OK, _write_ensemble(cfg, stats, partial=False), _ensemble_results(stats), seeds


def run_verify(cfg: RunConfig, out=None):
    out = out or sys.stdout
    v = cfg.verify
    checks = kernel_checks()
    mk_checks, comps = markovian_checks(v.t_leads, n_sites=v.n_sites, tolerance=v.tolerance,
                                        t_final=v.t_final, gamma_eff=v.gamma_eff, system=cfg.system)
    checks += mk_checks
    width = max(len(c.name) for c in checks)
    out.write(f"{'check':<{width}}  {'value':>12}  {'tolerance':>10}  result\n")
    for c in checks:
        out.write(f"{c.name:<{width}}  {c.value:12.4e}  {c.tolerance:10.2e}  "
                  f"{'PASS' if c.passed else 'FAIL'}\n")
    with open(cfg.output_dir / "verify.csv", "w") as fh:
        fh.write("check,value,tolerance,passed\n")
        for c in checks:
            fh.write(f"\"{c.name}\",{_fmt(c.value)},{_fmt(c.tolerance)},{int(c.passed)}\n")
    with open(cfg.output_dir / "memory_decay.csv", "w") as fh:
        fh.write("# units: t fs; absorbed electrons (wide-band and memory-kernel propagators)\n")
        fh.write("t_lead,t,absorbed_markov,absorbed_nonmarkov\n")
        for c in comps:
            for t, a, b in zip(c.times, c.absorbed_markov, c.absorbed_nonmarkov):
                fh.write(f"{_fmt(c.t_lead)},{_fmt(t)},{_fmt(a)},{_fmt(b)}\n")
    ok = all(c.passed for c in checks)
    results = {"checks": [dataclasses.asdict(c) for c in checks]}
    return (EXIT_OK if ok else EXIT_NUMERICAL), ["verify.csv", "memory_decay.csv"], results, {}


def run(cfg: RunConfig, argv=None, progress=None, out=None) -> int:
    """Execute ``cfg`` and write its artifacts.  Returns the exit status."""
    out = out or sys.stdout
    start = time.perf_counter()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "resolved_config.yaml").write_text(yaml.safe_dump(cfg.resolved, sort_keys=False))
    try:
        if cfg.mode == "trajectory":
            code, outputs, results, seeds = run_trajectory(cfg)
        elif cfg.mode == "verify":
            code, outputs, results, seeds = run_verify(cfg, out)
        else:
            code, outputs, results, seeds = run_ensemble_mode(cfg, progress)
    except (ConfigError, ConfigurationError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        write_manifest(cfg, "config-error", [], {"error": str(exc)}, {}, time.perf_counter() - start, argv)
        return EXIT_CONFIG
    except (NumericalBlowupError, GeometryOptimizationError, NotAMinimumError, EnsembleError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        write_manifest(cfg, "failed", [], {"error": f"{type(exc).__name__}: {exc}"}, {},
                       time.perf_counter() - start, argv)
        return EXIT_NUMERICAL
    status = {EXIT_OK: "ok", EXIT_PARTIAL: "partial", EXIT_NUMERICAL: "checks-failed"}[code]
    write_manifest(cfg, status, ["resolved_config.yaml", *outputs], results, seeds,
                   time.perf_counter() - start, argv)
    if cfg.mode == "trajectory":
        r = results
        eta = "undefined" if r["eta"] is None else f"{r['eta']:+.4f}"
        out.write(f"qL = {r['q_left']:.6e}  qR = {r['q_right']:.6e}  eta = {eta}\n")
    elif cfg.mode != "verify":
        for row in results["phases"]:
            eta = "undefined" if row["eta"] is None else f"{row['eta']:+.4f}"
            out.write(f"phase {row['phase']:.4f}  rectification {row['rectification']:+.4e} "
                      f"+/- {row['rectification_stderr']:.2e}  eta {eta}\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sshjunction",
        description="Laser-driven rectification in SSH molecular junctions (Ehrenfest dynamics).")
    ap.add_argument("config", help="YAML run configuration")
    ap.add_argument("--mode", choices=MODES, help="override the configured mode")
    ap.add_argument("--workers", type=int,
                    help=f"worker processes for ensembles (default: config, then ${WORKERS_ENV}, then 1)")
    ap.add_argument("--output-dir", "-o", help="directory for CSV files and the manifest")
    ap.add_argument("--seed", type=int, help="override ensemble.base_seed and trajectory.seed")
    ap.add_argument("--quiet", action="store_true", help="suppress per-trajectory progress lines")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        if not Path(args.config).is_file():
            raise ConfigError(f"{args.config}: no such file")
        text = Path(args.config).read_text()
        cfg = parse_config_text(text, source=args.config, mode=args.mode, output_dir=args.output_dir,
                                workers=args.workers, seed=args.seed)
    except ConfigError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    return run(cfg, argv=argv, progress=None if args.quiet else sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
