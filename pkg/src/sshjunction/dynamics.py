"""Ehrenfest propagation of the open SSH wire.

Orbitals follow the wide-band (Markovian) equation

    i hbar dC/dt = (H_el(t) - i gamma(t) Gamma'(t)) C

while the lattice follows the mean-field forces.  Everything is stepped
with a fixed-step eighth-order Runge-Kutta method.  A non-Markovian
reference propagator with the explicit lead memory kernel is provided for
small frozen chains.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .field import FieldParams, field_amplitude
from .model import LatticeState, SystemParams, forces_from_bonds, site_positions, total_energy
from .observables import TrajectoryResult, density_matrix
from .open_system import (
    edge_projections,
    fix_phases,
    lead_coupling,
    memory_kernel,
    tridiagonal_eigh,
)

CHECKPOINT_VERSION = 1


class ConfigurationError(ValueError):
    pass


class NumericalBlowupError(FloatingPointError):
    def __init__(self, t: float):
        super().__init__(f"non-finite derivative at t = {t:.6g} fs")
        self.t = t


# Cooper-Verner 11-stage, order 8
_S = math.sqrt(21.0)
RK8_C = np.array([0.0, 0.5, 0.5, (7 + _S) / 14, (7 + _S) / 14, 0.5, (7 - _S) / 14,
                  (7 - _S) / 14, 0.5, (7 + _S) / 14, 1.0])
RK8_B = np.array([1 / 20, 0, 0, 0, 0, 0, 0, 49 / 180, 16 / 45, 49 / 180, 1 / 20])
RK8_A = [
    [],
    [1 / 2],
    [1 / 4, 1 / 4],
    [1 / 7, (-7 - 3 * _S) / 98, (21 + 5 * _S) / 49],
    [(11 + _S) / 84, 0, (18 + 4 * _S) / 63, (21 - _S) / 252],
    [(5 + _S) / 48, 0, (9 + _S) / 36, (-231 + 14 * _S) / 360, (63 - 7 * _S) / 80],
    [(10 - _S) / 42, 0, (-432 + 92 * _S) / 315, (633 - 145 * _S) / 90,
     (-504 + 115 * _S) / 70, (63 - 13 * _S) / 35],
    [1 / 14, 0, 0, 0, (14 - 3 * _S) / 126, (13 - 3 * _S) / 63, 1 / 9],
    [1 / 32, 0, 0, 0, (91 - 21 * _S) / 576, 11 / 72, (-385 - 75 * _S) / 1152,
     (63 + 13 * _S) / 128],
    [1 / 14, 0, 0, 0, 1 / 9, (-733 - 147 * _S) / 2205, (515 + 111 * _S) / 504,
     (-51 - 11 * _S) / 56, (132 + 28 * _S) / 245],
    [0, 0, 0, 0, (-42 + 7 * _S) / 18, (-18 + 28 * _S) / 45, (-273 - 53 * _S) / 72,
     (301 + 53 * _S) / 72, (28 - 28 * _S) / 45, (49 - 7 * _S) / 18],
]


def rk8_step(f, t: float, y: np.ndarray, dt: float, k1: np.ndarray | None = None) -> np.ndarray:
    """One explicit order-8 Runge-Kutta step; ``k1`` may be supplied if already known."""
    ks = [f(t, y) if k1 is None else k1]
    for i in range(1, 11):
        yi = y.copy()
        for a, k in zip(RK8_A[i], ks):
            if a:
                yi += (dt * a) * k
        ks.append(f(t + RK8_C[i] * dt, yi))
    out = y.copy()
    for b, k in zip(RK8_B, ks):
        if b:
            out += (dt * b) * k
    return out


@dataclass
class OrbitalSet:
    """Occupied single-particle orbitals in the site basis.

    ``amplitudes[:, j]`` is orbital ``j``; ``occupations`` includes the spin factor.
    """

    amplitudes: np.ndarray
    occupations: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.array(self.amplitudes, dtype=complex)
        self.occupations = np.array(self.occupations, dtype=float)
        if self.amplitudes.ndim != 2 or self.amplitudes.shape[1] != self.occupations.size:
            raise ValueError("amplitudes must be (N, n_orbitals) matching occupations")

    def density(self) -> np.ndarray:
        return density_matrix(self.amplitudes, self.occupations)

    def norms(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)

    def electron_count(self) -> float:
        return float(self.norms() @ self.occupations)


@dataclass
class TrajectoryState:
    lattice: LatticeState
    orbitals: OrbitalSet
    t: float = 0.0
    q_left: float = 0.0
    q_right: float = 0.0


def ground_orbitals(u: np.ndarray, p: SystemParams, efield: float = 0.0) -> OrbitalSet:
    """Lowest N/2 eigenorbitals of H_el(u, E), doubly occupied."""
    diag = site_positions(u, p) * efield
    w, z = tridiagonal_eigh(diag, -p.t0 + p.alpha * np.diff(u))
    n_occ = p.n_sites // 2
    return OrbitalSet(fix_phases(z[:, :n_occ]), np.full(n_occ, 2.0))


def initial_state(lattice: LatticeState, p: SystemParams) -> TrajectoryState:
    """Lattice configuration plus its zero-field ground-state orbitals at t = 0."""
    return TrajectoryState(lattice, ground_orbitals(lattice.u, p))


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.04  # fs
    t_final: float = 600.0
    output_stride: int = 1
    markovian: bool = True
    freeze_lattice: bool = False
    lead_ramp: bool = True
    spectrum_window: int = 10
    record_lattice: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.output_stride < 1:
            raise ConfigurationError("output_stride must be >= 1")
        if self.spectrum_window < 0:
            raise ConfigurationError("spectrum_window must be >= 0")

    def check_resolution(self, fp: FieldParams) -> None:
        if self.dt > fp.period_2w / 200 * (1 + 1e-12):
            raise ConfigurationError(
                f"dt = {self.dt} fs does not resolve the 2w carrier (need <= {fp.period_2w / 200:.4g} fs)")

    def with_(self, **changes) -> "IntegratorConfig":
        return replace(self, **changes)


def default_dt(fp: FieldParams, points_per_period: int = 400) -> float:
    return fp.period_2w / points_per_period


class EhrenfestRHS:
    """Packed right-hand side of the coupled orbital/lattice equations.

    State vector layout: ``[C~ (complex, N x n_orb, as float pairs), u, v, q_L, q_R]``
    where ``C~ = exp(i H0 t / hbar) C`` is the orbital block in the interaction
    picture of the undimerised chain ``H0`` (uniform hopping ``-t0``).  This
    removes the fast, state-independent band phase from what the Runge-Kutta
    steps have to resolve.
    After each call ``last`` holds the diagnostics of that evaluation
    (field, lead coupling, currents, spectrum).
    """

    def __init__(self, p: SystemParams, fp: FieldParams, occupations, freeze_lattice=False,
                 lead_ramp=True):
        self.p, self.fp = p, fp
        self.n = p.n_sites
        self.occ = np.asarray(occupations, dtype=float)
        self.n_orb = self.occ.size
        self.freeze_lattice = freeze_lattice
        self.lead_ramp = lead_ramp
        self.x0 = site_positions(np.zeros(self.n), p)
        self._nc = 2 * self.n * self.n_orb
        self.last = {}
        # Orbitals are stored in the interaction picture of the uniform chain
        # H0 = -t0 (hopping); the integrator only sees the slow remainder.
        self.levels0, w0 = tridiagonal_eigh(np.zeros(self.n), np.full(self.n - 1, -p.t0))
        self.basis0 = w0.astype(complex)

    def _phases(self, t: float) -> np.ndarray:
        return np.exp((-1j / self.p.hbar) * self.levels0 * t)

    def to_site_basis(self, c_int: np.ndarray, t: float) -> np.ndarray:
        return self.basis0 @ (self._phases(t)[:, None] * c_int)

    def to_interaction(self, c: np.ndarray, t: float) -> np.ndarray:
        return self._phases(t).conj()[:, None] * (self.basis0.T @ c)

    def pack(self, state: TrajectoryState) -> np.ndarray:
        c = np.ascontiguousarray(self.to_interaction(state.orbitals.amplitudes, state.t))
        return np.concatenate([c.view(float).ravel(), state.lattice.u, state.lattice.v,
                               [state.q_left, state.q_right]])

    def unpack(self, y: np.ndarray):
        n, nc = self.n, self._nc
        c = y[:nc].view(complex).reshape(n, self.n_orb)
        return c, y[nc:nc + n], y[nc + n:nc + 2 * n], y[-2], y[-1]

    def state(self, y: np.ndarray, t: float) -> TrajectoryState:
        c, u, v, ql, qr = self.unpack(y)
        return TrajectoryState(LatticeState(u.copy(), v.copy()),
                               OrbitalSet(self.to_site_basis(c, t), self.occ.copy()), t,
                               float(ql), float(qr))

    def gamma(self, t: float) -> float:
        if not self.lead_ramp:
            return self.p.gamma_eff
        return lead_coupling(t, self.p.gamma_eff, self.fp.t_ramp_on)

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        p = self.p
        hbar = p.hbar
        c_int, u, v, _, _ = self.unpack(y)
        phases = self._phases(t)
        c = self.basis0 @ (phases[:, None] * c_int)
        efield = field_amplitude(t, self.fp)
        diag = (self.x0 + u) * efield
        dhop = p.alpha * np.diff(u)
        evals, p_first, p_last = edge_projections(diag, dhop - p.t0, p.fermi_energy)

        # H - H0 acting on C
        hc = diag[:, None] * c
        hc[:-1] += dhop[:, None] * c[1:]
        hc[1:] += dhop[:, None] * c[:-1]
        dc = (-1j / hbar) * hc
        gam = self.gamma(t)
        if gam > 0:
            a_first = p_first @ c
            a_last = p_last @ c
            dc -= (gam / hbar) * (np.outer(p_first, a_first) + np.outer(p_last, a_last))
            j_left = 2.0 * gam / hbar * float(self.occ @ (np.abs(a_first) ** 2))
            j_right = 2.0 * gam / hbar * float(self.occ @ (np.abs(a_last) ** 2))
        else:
            j_left = j_right = 0.0

        dy = np.empty_like(y)
        dy[:self._nc] = (phases.conj()[:, None] * (self.basis0.T @ dc)).view(float).ravel()
        n, nc = self.n, self._nc
        if self.freeze_lattice:
            dy[nc:nc + 2 * n] = 0.0
        else:
            density = (np.abs(c) ** 2) @ self.occ
            bond = np.real(c[:-1].conj() * c[1:]) @ self.occ
            forces = forces_from_bonds(u, bond, density, efield, p)
            dy[nc:nc + n] = v
            dy[nc] = dy[nc + n - 1] = 0.0
            dy[nc + n:nc + 2 * n] = forces / p.effective_mass
        dy[-2] = j_left
        dy[-1] = j_right
        if not np.all(np.isfinite(dy)):
            raise NumericalBlowupError(t)
        self.last = {"field": efield, "gamma": gam, "j_left": j_left, "j_right": j_right,
                     "eigenvalues": evals}
        return dy


def rhs(state: TrajectoryState, fp: FieldParams, p: SystemParams, lead_ramp: bool = True):
    """Time derivatives ``(du/dt, dv/dt, dC/dt)`` of a trajectory state."""
    f = EhrenfestRHS(p, fp, state.orbitals.occupations, lead_ramp=lead_ramp)
    dy = f(state.t, f.pack(state))
    dc_int, du, dv, _, _ = f.unpack(dy)
    c = state.orbitals.amplitudes
    h0c = f.basis0 @ (f.levels0[:, None] * (f.basis0.T @ c))
    dc = f.to_site_basis(dc_int, state.t) - (1j / p.hbar) * h0c
    return du.copy(), dv.copy(), dc


def _spectrum_slice(n: int, window: int) -> slice:
    lo = max(0, n // 2 - window // 2)
    return slice(lo, min(n, lo + window))


class _Recorder:
    def __init__(self, n_sites, window, record_lattice):
        self.rows = []
        self.spectra = []
        self.lattice = [] if record_lattice else None
        self.sl = _spectrum_slice(n_sites, window)

    def add(self, t, diag, c_norm, u):
        self.rows.append((t, diag["field"], diag["j_left"], diag["j_right"], *c_norm))
        self.spectra.append(diag["eigenvalues"][self.sl].copy())
        if self.lattice is not None:
            self.lattice.append(u.copy())

    def result(self, final_state, meta) -> TrajectoryResult:
        arr = np.array(self.rows)
        return TrajectoryResult(
            times=arr[:, 0], field=arr[:, 1], j_left=arr[:, 2], j_right=arr[:, 3],
            q_left=arr[:, 4], q_right=arr[:, 5], norm=arr[:, 6],
            spectrum=np.array(self.spectra),
            lattice=None if self.lattice is None else np.array(self.lattice),
            final_state=final_state, meta=meta)


def integrate_trajectory(init: TrajectoryState, cfg: IntegratorConfig, fp: FieldParams,
                         p: SystemParams, sink=None) -> TrajectoryResult:
    """Propagate from ``init.t`` to ``cfg.t_final`` with fixed-step RK8.

    Observables are recorded every ``cfg.output_stride`` steps and at the
    final time.  ``sink``, if given, is called as ``sink(t, diagnostics)``
    at each recorded step.
    """
    if not cfg.markovian:
        raise ConfigurationError("use integrate_nonmarkovian for the memory-kernel propagator")
    cfg.check_resolution(fp)
    if init.lattice.n_sites != p.n_sites:
        raise ConfigurationError("initial state size does not match n_sites")
    span = cfg.t_final - init.t
    if span < 0:
        raise ConfigurationError("t_final precedes the initial time")
    n_steps = int(math.ceil(span / cfg.dt - 1e-9))
    dt = span / n_steps if n_steps else 0.0

    f = EhrenfestRHS(p, fp, init.orbitals.occupations, cfg.freeze_lattice, cfg.lead_ramp)
    rec = _Recorder(p.n_sites, cfg.spectrum_window, cfg.record_lattice)
    y = f.pack(init)
    occ = f.occ

    def record(t, y):
        c, u, _, ql, qr = f.unpack(y)
        norm = float(np.sum(np.abs(c) ** 2, axis=0) @ occ)
        rec.add(t, f.last, (ql, qr, norm), u)
        if sink is not None:
            sink(t, f.last)

    t0 = init.t
    for step in range(n_steps):
        t = t0 + step * dt
        k1 = f(t, y)
        if step % cfg.output_stride == 0:
            record(t, y)
        y = rk8_step(f, t, y, dt, k1)
    t_end = t0 + n_steps * dt
    f(t_end, y)
    record(t_end, y)
    meta = {"dt": dt, "n_steps": n_steps, "propagator": "markovian-rk8"}
    return rec.result(f.state(y, t_end), meta)


def closed_system_energy(state: TrajectoryState, fp: FieldParams, p: SystemParams) -> float:
    """Ehrenfest total energy at ``state.t`` (electronic + ionic dipole + elastic + kinetic)."""
    rho = state.orbitals.density()
    return total_energy(state.lattice.u, state.lattice.v, rho, field_amplitude(state.t, fp), p)


def save_checkpoint(path, state: TrajectoryState) -> None:
    np.savez(path, format_version=CHECKPOINT_VERSION, t=state.t, u=state.lattice.u,
             v=state.lattice.v, amplitudes=state.orbitals.amplitudes,
             occupations=state.orbitals.occupations, q=np.array([state.q_left, state.q_right]))


def load_checkpoint(path) -> TrajectoryState:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return TrajectoryState(LatticeState(data["u"], data["v"]),
                               OrbitalSet(data["amplitudes"], data["occupations"]),
                               float(data["t"]), float(data["q"][0]), float(data["q"][1]))


# Non-Markovian reference

MAX_NONMARKOVIAN_SITES = 20


def _product_trapezoid_weights(n: int, h: float, t_lead: float, hbar: float, n_gauss: int = 16):
    """Weights for ``int K(t_n - s) g(s) ds`` with ``g`` piecewise linear on a uniform grid.

    Interval ``d`` spans lags ``[d h, (d+1) h]``; ``near[d]`` multiplies the
    sample at the smaller lag and ``far[d]`` the one at the larger lag.
    """
    nodes, wts = np.polynomial.legendre.leggauss(n_gauss)
    r = 0.5 * h * (nodes + 1.0)
    w = 0.5 * h * wts
    lags = np.arange(n)[:, None] * h + r[None, :]
    kern = memory_kernel(lags, t_lead, hbar)
    near = kern @ (w * (1.0 - r / h))
    far = kern @ (w * (r / h))
    return near, far


def integrate_nonmarkovian(init: TrajectoryState, cfg: IntegratorConfig, fp: FieldParams,
                           p: SystemParams, t_lead: float, t_coup: float) -> TrajectoryResult:
    """Orbital propagation with the explicit lead memory kernel on a frozen lattice.

    The convolution is evaluated by product-trapezoid quadrature over the
    stored history and the time step is the trapezoidal (Crank-Nicolson)
    rule, solved exactly because the equation is linear in the orbitals.
    The lead coupling is switched on abruptly at t = 0.
    """
    n = p.n_sites
    if n > MAX_NONMARKOVIAN_SITES:
        raise ConfigurationError(f"non-Markovian propagation is limited to N <= {MAX_NONMARKOVIAN_SITES}")
    if init.t != 0.0:
        raise ConfigurationError("non-Markovian propagation starts at t = 0 (history is not restartable)")
    hbar = p.hbar
    if cfg.dt * 2 * t_lead / hbar > 0.2:
        warnings.warn("time step under-resolves the lead memory kernel "
                      f"(dt * 2 t_lead / hbar = {cfg.dt * 2 * t_lead / hbar:.3g} > 0.2)",
                      RuntimeWarning, stacklevel=2)
    n_steps = int(math.ceil(cfg.t_final / cfg.dt - 1e-9))
    h = cfg.t_final / n_steps
    near, far = _product_trapezoid_weights(n_steps, h, t_lead, hbar)
    lam = t_coup ** 2 / hbar ** 2

    u = init.lattice.u
    occ = init.orbitals.occupations
    x0 = site_positions(u, p)
    off = -p.t0 + p.alpha * np.diff(u)
    sl = _spectrum_slice(n, cfg.spectrum_window)

    def operators(t):
        efield = field_amplitude(t, fp)
        diag = x0 * efield
        evals, pf, pl = edge_projections(diag, off, p.fermi_energy)
        ham = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        return efield, ham, np.stack([pf, pl]), evals

    c = init.orbitals.amplitudes.copy()
    n_orb = c.shape[1]
    hist = np.zeros((n_steps + 1, 2, n_orb), dtype=complex)  # g_k = P_{b,:}(t_k) C(t_k)
    efield, ham, pb, evals = operators(0.0)
    hist[0] = pb @ c
    memory = np.zeros((2, n_orb), dtype=complex)

    times = h * np.arange(n_steps + 1)
    rows = np.zeros((n_steps + 1, 5))  # field, jL, jR, norm, unused
    spectra = np.zeros((n_steps + 1, sl.stop - sl.start))

    def log(k, efield, g, mem, c, evals):
        j = 2.0 * lam * np.real(np.conj(g) * mem) @ occ
        rows[k, :4] = efield, j[0], j[1], float(np.sum(np.abs(c) ** 2, axis=0) @ occ)
        spectra[k] = evals[sl]

    log(0, efield, hist[0], memory, c, evals)
    deriv = (-1j / hbar) * ham @ c - lam * pb.T @ memory
    eye = np.eye(n)
    for k in range(n_steps):
        efield, ham, pb, evals = operators(times[k + 1])
        # memory at t_{k+1} minus the implicit near[0] * g_{k+1} term
        lags = slice(k, None, -1)  # g_k, g_{k-1}, ..., g_0
        rest = np.tensordot(far[: k + 1], hist[lags], axes=(0, 0))
        if k > 0:
            rest += np.tensordot(near[1: k + 1], hist[k: 0: -1], axes=(0, 0))
        lhs = eye + (0.5 * h) * ((1j / hbar) * ham + lam * near[0] * pb.T @ pb)
        rhs_vec = c + 0.5 * h * deriv - 0.5 * h * lam * pb.T @ rest
        c = np.linalg.solve(lhs, rhs_vec)
        hist[k + 1] = pb @ c
        memory = near[0] * hist[k + 1] + rest
        deriv = (-1j / hbar) * ham @ c - lam * pb.T @ memory
        log(k + 1, efield, hist[k + 1], memory, c, evals)

    q_left = init.q_left + cumulative_trapezoid(rows[:, 1], times, initial=0.0)
    q_right = init.q_right + cumulative_trapezoid(rows[:, 2], times, initial=0.0)
    stride = cfg.output_stride
    keep = np.unique(np.r_[np.arange(0, n_steps + 1, stride), n_steps])
    final = TrajectoryState(LatticeState(u.copy()), OrbitalSet(c, occ.copy()), times[-1],
                            float(q_left[-1]), float(q_right[-1]))
    return TrajectoryResult(times[keep], rows[keep, 0], rows[keep, 1], rows[keep, 2],
                            q_left[keep], q_right[keep], rows[keep, 3], spectra[keep],
                            final_state=final,
                            meta={"dt": h, "n_steps": n_steps, "propagator": "nonmarkovian-cn",
                                  "t_lead": t_lead, "t_coup": t_coup})
