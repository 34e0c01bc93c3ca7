"""Wigner-sampled trajectory ensembles and relative-phase sweeps."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from dataclasses import field as dc_field

import numpy as np

from .dynamics import IntegratorConfig, initial_state, integrate_trajectory
from .field import FieldParams
from .ground_state import NormalModeBasis, normal_modes, relaxed_geometry, sample_wigner
from .model import LatticeState, SystemParams
from .observables import efficiency, rectification_and_efficiency

RIGID_MASS_FACTOR = 1e6


class EnsembleError(RuntimeError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class EnsembleConfig:
    system: SystemParams = dc_field(default_factory=SystemParams)
    field: FieldParams = dc_field(default_factory=FieldParams)
    integrator: IntegratorConfig = dc_field(default_factory=IntegratorConfig)
    n_trajectories: int = 1000
    base_seed: int = 0
    phases: tuple = (0.0,)
    rigid: bool = False
    rigid_wigner: bool = False  # rigid wire: sample mass-scaled Wigner widths instead of one frozen geometry
    zero_point: bool = True
    workers: int = 1
    geometry_cache: str | None = None
    max_failure_fraction: float = 0.01

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if not self.phases:
            raise ValueError("at least one phase is required")
        for ph in self.phases:
            if not 0.0 <= ph < 2 * np.pi:
                raise ValueError(f"phase {ph} outside [0, 2 pi)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def dynamics_params(self) -> SystemParams:
        if self.rigid:
            return self.system.with_(rigid_mass_factor=RIGID_MASS_FACTOR)
        return self.system

    @property
    def samples_per_phase(self) -> int:
        return 1 if (self.rigid and not self.rigid_wigner) else self.n_trajectories

    def with_(self, **changes) -> "EnsembleConfig":
        return replace(self, **changes)


def trajectory_seed(base_seed: int, phase_index: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, phase_index, index])


@dataclass
class _Task:
    phase_index: int
    index: int
    phase: float
    seed: np.random.SeedSequence
    system: SystemParams
    field: FieldParams
    integrator: IntegratorConfig
    u_star: np.ndarray
    modes: NormalModeBasis | None
    zero_point: bool


def _run_task(task: _Task) -> dict:
    start = time.perf_counter()
    try:
        if task.modes is None:
            lattice = LatticeState(task.u_star)
        else:
            sample = sample_wigner(task.modes, np.random.default_rng(task.seed), task.zero_point)
            lattice = sample.lattice()
        init = initial_state(lattice, task.system)
        res = integrate_trajectory(init, task.integrator, task.field.with_relative_phase(task.phase),
                                   task.system)
        rect, eta = rectification_and_efficiency(res)
        return {
            "ok": True, "phase_index": task.phase_index, "index": task.index,
            "times": res.times, "field": res.field, "j_left": res.j_left, "j_right": res.j_right,
            "q_left_t": res.q_left, "q_right_t": res.q_right, "norm": res.norm,
            "spectrum": res.spectrum,
            "q_left": float(res.q_left[-1]), "q_right": float(res.q_right[-1]),
            "rectification": rect, "eta": eta,
            "balance_mismatch": float(abs(res.absorbed[-1] - (res.q_left[-1] - res.q_left[0])
                                          - (res.q_right[-1] - res.q_right[0]))),
            "electrons": float(res.norm[0]),
            "wall": time.perf_counter() - start,
        }
    except Exception as exc:  # recorded, excluded from the averages
        return {"ok": False, "phase_index": task.phase_index, "index": task.index,
                "error": f"{type(exc).__name__}: {exc}", "wall": time.perf_counter() - start}


def _mean_se(samples: np.ndarray):
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=0)
    if samples.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])


@dataclass
class PhaseStats:
    """Ensemble averages at one relative phase; ``*_se`` are standard errors of the mean."""

    phase: float
    n_ok: int
    n_failed: int
    times: np.ndarray
    field: np.ndarray
    j_left_mean: np.ndarray
    j_left_se: np.ndarray
    j_right_mean: np.ndarray
    j_right_se: np.ndarray
    q_left_t: np.ndarray  # mean charge series
    q_right_t: np.ndarray
    norm_t: np.ndarray
    spectrum_t: np.ndarray
    q_left_samples: np.ndarray
    q_right_samples: np.ndarray
    eta_samples: np.ndarray  # trajectories with undefined eta are omitted
    max_balance_mismatch: float
    electrons: float
    failures: list = dc_field(default_factory=list)

    @property
    def q_left(self):
        return _mean_se(self.q_left_samples)

    @property
    def q_right(self):
        return _mean_se(self.q_right_samples)

    @property
    def rectification(self):
        return _mean_se(self.q_left_samples - self.q_right_samples)

    @property
    def eta(self) -> float | None:
        """Efficiency of the ensemble-averaged charges."""
        return efficiency(float(self.q_left_samples.mean()), float(self.q_right_samples.mean()))

    @property
    def eta_trajectories(self):
        if self.eta_samples.size == 0:
            return None, None
        return _mean_se(self.eta_samples)


@dataclass
class EnsembleStats:
    phases: list
    seeds: dict
    wall_time: float = 0.0

    def table(self) -> list[dict]:
        rows = []
        for ps in self.phases:
            rect, rect_se = ps.rectification
            rows.append({"phase": ps.phase, "rectification": float(rect),
                         "rectification_stderr": float(rect_se), "eta": ps.eta,
                         "q_left": float(ps.q_left[0]), "q_right": float(ps.q_right[0]),
                         "n_trajectories": ps.n_ok, "n_failed": ps.n_failed})
        return rows


def _aggregate(phase: float, results: list[dict]) -> PhaseStats:
    good = [r for r in results if r["ok"]]
    bad = [(r["index"], r["error"]) for r in results if not r["ok"]]
    if not good:
        raise EnsembleError(f"all trajectories failed at phase {phase}: {bad[:3]}")
    jl_mean, jl_se = _mean_se(np.stack([r["j_left"] for r in good]))
    jr_mean, jr_se = _mean_se(np.stack([r["j_right"] for r in good]))

    def mean_of(key):
        return np.stack([r[key] for r in good]).mean(axis=0)

    return PhaseStats(
        phase=phase, n_ok=len(good), n_failed=len(bad), times=good[0]["times"],
        field=good[0]["field"], j_left_mean=jl_mean, j_left_se=jl_se, j_right_mean=jr_mean,
        j_right_se=jr_se, q_left_t=mean_of("q_left_t"), q_right_t=mean_of("q_right_t"),
        norm_t=mean_of("norm"), spectrum_t=mean_of("spectrum"),
        q_left_samples=np.array([r["q_left"] for r in good]),
        q_right_samples=np.array([r["q_right"] for r in good]),
        eta_samples=np.array([r["eta"] for r in good if r["eta"] is not None]),
        max_balance_mismatch=max(r["balance_mismatch"] for r in good),
        electrons=good[0]["electrons"], failures=bad)


def prepare_ground_state(cfg: EnsembleConfig):
    """Relaxed geometry and, when sampling is needed, the normal modes for the dynamics mass."""
    p = cfg.dynamics_params
    u_star = relaxed_geometry(cfg.system, cfg.geometry_cache)
    needs_modes = not cfg.rigid or cfg.rigid_wigner
    modes = normal_modes(u_star, p) if needs_modes else None
    return u_star, modes


def run_ensemble(cfg: EnsembleConfig, progress=None, ground_state=None) -> EnsembleStats:
    """Run ``cfg.samples_per_phase`` trajectories at every phase and average them.

    Every trajectory draws from its own stream seeded by
    ``(base_seed, phase_index, index)``.  Results are aggregated in index
    order, so the statistics do not depend on the number of workers.
    ``progress`` receives one JSON line per finished trajectory.
    """
    start = time.perf_counter()
    u_star, modes = ground_state if ground_state is not None else prepare_ground_state(cfg)
    p = cfg.dynamics_params
    tasks = [
        _Task(k, i, float(phase), trajectory_seed(cfg.base_seed, k, i), p, cfg.field,
              cfg.integrator, u_star, modes, cfg.zero_point)
        for k, phase in enumerate(cfg.phases)
        for i in range(cfg.samples_per_phase)
    ]

    def report(res):
        if progress is not None:
            progress.write(json.dumps({
                "phase": cfg.phases[res["phase_index"]], "index": res["index"],
                "status": "ok" if res["ok"] else "failed", "wall": round(res["wall"], 3),
            }) + "\n")
            progress.flush()
        return res

    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = [report(r) for r in pool.map(_run_task, tasks)]
    else:
        results = [report(_run_task(t)) for t in tasks]

    per_phase = []
    for k, phase in enumerate(cfg.phases):
        per_phase.append(_aggregate(float(phase), [r for r in results if r["phase_index"] == k]))
    stats = EnsembleStats(per_phase, {"base_seed": cfg.base_seed,
                                      "scheme": "SeedSequence([base_seed, phase_index, index])"},
                          time.perf_counter() - start)
    n_failed = sum(ps.n_failed for ps in per_phase)
    if n_failed > cfg.max_failure_fraction * len(tasks):
        raise EnsembleError(f"{n_failed} of {len(tasks)} trajectories failed", stats)
    return stats


def phase_sweep(cfg: EnsembleConfig, progress=None, ground_state=None) -> list[dict]:
    """Rectification and efficiency versus relative phase."""
    if len(cfg.phases) < 2:
        raise ValueError("a phase sweep needs at least two phases")
    return run_ensemble(cfg, progress, ground_state).table()
