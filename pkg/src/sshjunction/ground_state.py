"""Relaxed dimerised geometry, harmonic normal modes and Wigner sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .model import (
    LatticeState,
    SystemParams,
    elastic_energy,
    forces_from_bonds,
    hamiltonian_bands,
)
from .open_system import tridiagonal_eigh


class GeometryOptimizationError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (max |F| = {residual:.3e} eV/A)")
        self.residual = residual


class NotAMinimumError(RuntimeError):
    pass


def electronic_ground_state(u: np.ndarray, p: SystemParams, efield: float = 0.0):
    """Eigenpairs and spin-summed density of the half-filled closed-shell ground state."""
    diag, off = hamiltonian_bands(u, efield, p)
    w, z = tridiagonal_eigh(diag, off)
    occ = z[:, : p.n_sites // 2]
    rho = 2.0 * occ @ occ.T
    return w, z, rho


def born_oppenheimer_energy(u: np.ndarray, p: SystemParams) -> float:
    """Total ground-state energy at zero field: doubly occupied lower half plus elastic energy."""
    w, _, _ = electronic_ground_state(u, p)
    return 2.0 * float(np.sum(w[: p.n_sites // 2])) + elastic_energy(u, p)


def ground_state_forces(u: np.ndarray, p: SystemParams) -> np.ndarray:
    _, _, rho = electronic_ground_state(u, p)
    return forces_from_bonds(u, np.diagonal(rho, 1), np.diagonal(rho), 0.0, p)


def _embed(interior: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], interior, [0.0]))


def optimize_geometry(p: SystemParams, u_guess: np.ndarray | None = None,
                      force_tol: float = 1e-7, max_iter: int = 5000) -> LatticeState:
    """Minimise the Born-Oppenheimer energy over the interior displacements.

    BFGS on the analytic gradient, followed by Newton polishing with a
    finite-difference Hessian until ``max |F| < force_tol``.
    """
    n = p.n_sites
    if u_guess is None:
        u_guess = 0.04 * (-1.0) ** np.arange(n)
    x0 = np.asarray(u_guess, dtype=float)[1:-1]

    def fun(x):
        u = _embed(x)
        w, _, rho = electronic_ground_state(u, p)
        e = 2.0 * float(np.sum(w[: n // 2])) + elastic_energy(u, p)
        f = forces_from_bonds(u, np.diagonal(rho, 1), np.diagonal(rho), 0.0, p)
        return e, -f[1:-1]

    res = minimize(fun, x0, jac=True, method="BFGS", options={"gtol": 1e-9, "maxiter": max_iter})
    x = res.x
    for _ in range(10):
        f = ground_state_forces(_embed(x), p)[1:-1]
        if np.max(np.abs(f)) < force_tol:
            break
        x = x + np.linalg.solve(force_constant_matrix(_embed(x), p), f)
    residual = float(np.max(np.abs(ground_state_forces(_embed(x), p))))
    if not residual < force_tol:
        raise GeometryOptimizationError("geometry optimisation did not converge", residual)
    return LatticeState(_embed(x))


def force_constant_matrix(u: np.ndarray, p: SystemParams, delta: float = 1e-4) -> np.ndarray:
    """Interior-site Hessian of the BO energy from central differences of the forces."""
    n_in = p.n_sites - 2
    hess = np.empty((n_in, n_in))
    for j in range(n_in):
        up = u.copy()
        dn = u.copy()
        up[j + 1] += delta
        dn[j + 1] -= delta
        hess[:, j] = -(ground_state_forces(up, p) - ground_state_forces(dn, p))[1:-1] / (2 * delta)
    return 0.5 * (hess + hess.T)


@dataclass
class NormalModeBasis:
    """Harmonic modes of the clamped chain.

    ``modes[:, k]`` is the orthonormal displacement pattern of mode ``k``
    over the interior sites; ``frequencies`` are angular (rad/fs).
    """

    frequencies: np.ndarray
    modes: np.ndarray
    mass: float
    u_star: np.ndarray
    hbar: float

    @property
    def sigma_q(self) -> np.ndarray:
        return np.sqrt(self.hbar / (2.0 * self.mass * self.frequencies))

    @property
    def sigma_p(self) -> np.ndarray:
        return np.sqrt(self.hbar * self.mass * self.frequencies / 2.0)


def normal_modes(u_star, p: SystemParams, delta: float = 1e-4,
                 negative_tol: float = 1e-8) -> NormalModeBasis:
    u_star = np.asarray(getattr(u_star, "u", u_star), dtype=float)
    hess = force_constant_matrix(u_star, p, delta)
    k_vals, vecs = np.linalg.eigh(hess)
    if np.any(k_vals < -negative_tol):
        raise NotAMinimumError(f"Hessian has negative curvature {k_vals.min():.3e} eV/A^2")
    if np.any(k_vals <= 0):
        raise NotAMinimumError("Hessian has a zero mode; clamped chain should have none")
    m = p.effective_mass
    return NormalModeBasis(np.sqrt(k_vals / m), vecs, m, u_star.copy(), p.hbar)


@dataclass
class WignerSample:
    u: np.ndarray
    v: np.ndarray
    seed: object = None

    def lattice(self) -> LatticeState:
        return LatticeState(self.u, self.v)


def sample_wigner(modes: NormalModeBasis, rng: np.random.Generator,
                  zero_point: bool = True, seed=None) -> WignerSample:
    """Draw one lattice configuration from the harmonic ground-state Wigner function.

    Each mode contributes ``Q ~ N(0, hbar / 2 M w)`` and ``P ~ N(0, hbar M w / 2)``.
    ``zero_point=False`` collapses the distribution onto the minimum at rest.
    """
    n_modes = modes.frequencies.size
    q = rng.standard_normal(n_modes) * modes.sigma_q
    pm = rng.standard_normal(n_modes) * modes.sigma_p
    if not zero_point:
        q[:] = 0.0
        pm[:] = 0.0
    u = modes.u_star.copy()
    v = np.zeros_like(u)
    u[1:-1] += modes.modes @ q
    v[1:-1] = modes.modes @ pm / modes.mass
    return WignerSample(u, v, seed)


def save_geometry(path, u: np.ndarray) -> None:
    u = np.asarray(u, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{u.size}\n")
        for val in u:
            fh.write(f"{val:.17e}\n")


def load_geometry(path, p: SystemParams) -> np.ndarray:
    lines = Path(path).read_text().split()
    n = int(lines[0])
    u = np.array([float(s) for s in lines[1:]])
    if n != p.n_sites or u.size != n:
        raise ValueError(f"geometry cache {path} holds {n} sites, expected {p.n_sites}")
    return u


def relaxed_geometry(p: SystemParams, cache=None) -> np.ndarray:
    """Optimised displacements, read from or written to ``cache`` when given."""
    if cache is not None and Path(cache).exists():
        return load_geometry(cache, p)
    u = optimize_geometry(p).u
    if cache is not None:
        save_geometry(cache, u)
    return u
