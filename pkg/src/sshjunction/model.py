"""SSH electronic Hamiltonian and lattice energetics.

Units throughout: eV, Angstrom, fs, V/Angstrom.  With the elementary
charge set to one, a field in V/A times a length in A is an energy in eV.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

HBAR = 0.658212  # eV fs


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the wire and its contacts.

    Defaults are the standard SSH parameters for trans-polyacetylene and
    a weak molecule-lead coupling ``gamma_eff = t_coup**2 / t_lead``.
    """

    alpha: float = 4.1  # eV/A
    spring_k: float = 21.0  # eV/A^2
    t0: float = 2.5  # eV
    mass: float = 1349.14  # eV fs^2 / A^2
    lattice_a: float = 1.22  # A
    n_sites: int = 100
    gamma_eff: float = 0.1  # eV
    fermi_energy: float = 0.0  # eV
    hbar: float = HBAR
    rigid_mass_factor: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "spring_k", "t0", "mass", "lattice_a", "hbar",
                     "rigid_mass_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)!r}")
        if self.gamma_eff < 0:
            raise ValueError(f"gamma_eff must be non-negative, got {self.gamma_eff!r}")
        if int(self.n_sites) != self.n_sites or self.n_sites < 4 or self.n_sites % 2:
            raise ValueError(f"n_sites must be an even integer >= 4, got {self.n_sites!r}")

    @property
    def effective_mass(self) -> float:
        return self.mass * self.rigid_mass_factor

    @property
    def n_electrons(self) -> int:
        return self.n_sites

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass
class LatticeState:
    """Monomer displacements ``u`` (A) and velocities ``v`` (A/fs).

    The chain is clamped: first and last entries are zero.
    """

    u: np.ndarray
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        self.v = np.zeros_like(self.u) if self.v is None else np.array(self.v, dtype=float)
        if self.u.shape != self.v.shape or self.u.ndim != 1:
            raise ValueError("u and v must be 1-d arrays of equal length")
        clamp_ends(self.u)
        clamp_ends(self.v)

    @property
    def n_sites(self) -> int:
        return self.u.size


def clamp_ends(x: np.ndarray) -> np.ndarray:
    x[0] = 0.0
    x[-1] = 0.0
    return x


def _check_length(u: np.ndarray, p: SystemParams) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (p.n_sites,):
        raise ValueError(f"expected {p.n_sites} displacements, got shape {u.shape}")
    return u


def site_positions(u: np.ndarray, p: SystemParams) -> np.ndarray:
    """Positions ``x_n = (n - (N+1)/2) a + u_n`` measured from the chain midpoint.

    Centring keeps the dipole coupling antisymmetric under the mirror
    n -> N+1-n, so the instantaneous spectrum is not rigidly shifted
    against the Fermi level by the field.
    """
    n = np.arange(1, p.n_sites + 1)
    return (n - 0.5 * (p.n_sites + 1)) * p.lattice_a + u


def hamiltonian_bands(u: np.ndarray, efield: float, p: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and first off-diagonal of the electronic Hamiltonian."""
    u = _check_length(u, p)
    diag = site_positions(u, p) * efield
    offdiag = -p.t0 + p.alpha * np.diff(u)
    return diag, offdiag


def build_electronic_hamiltonian(u: np.ndarray, efield: float, p: SystemParams) -> np.ndarray:
    """Dense single-particle SSH Hamiltonian including the dipole coupling.

    Parameters
    ----------
    u : array, shape (N,)
        Displacements in A.
    efield : float
        Field amplitude in V/A.
    p : SystemParams

    Returns
    -------
    ndarray, shape (N, N)
        Real symmetric tridiagonal matrix (eV).  The field is real, so the
        Hermitian matrix is stored as real.
    """
    diag, off = hamiltonian_bands(u, efield, p)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def lattice_forces(u: np.ndarray, rho: np.ndarray, efield: float, p: SystemParams) -> np.ndarray:
    """Mean-field forces on the monomers (eV/A); zero on the clamped ends.

    ``rho`` is the spin-summed reduced density matrix with the convention
    ``rho[n, m] = sum_j f_j <m|j><j|n>``.  Only its diagonal and first
    off-diagonals enter.
    """
    u = _check_length(u, p)
    rho = np.asarray(rho)
    if rho.shape != (p.n_sites, p.n_sites):
        raise ValueError(f"rho must be {p.n_sites}x{p.n_sites}, got {rho.shape}")
    return forces_from_bonds(u, np.real(np.diagonal(rho, 1)), np.real(np.diagonal(rho)), efield, p)


def forces_from_bonds(u, bond_order, density, efield, p: SystemParams) -> np.ndarray:
    # bond_order[k] = Re rho[k, k+1]; neighbours beyond the chain ends are absent
    f = np.zeros_like(u)
    f[1:-1] = (
        -p.spring_k * (2.0 * u[1:-1] - u[2:] - u[:-2])
        + 2.0 * p.alpha * (bond_order[1:] - bond_order[:-1])
        - efield * (density[1:-1] - 1.0)
    )
    return f


def elastic_energy(u: np.ndarray, p: SystemParams) -> float:
    return 0.5 * p.spring_k * float(np.sum(np.diff(u) ** 2))


def kinetic_energy(v: np.ndarray, p: SystemParams) -> float:
    return 0.5 * p.effective_mass * float(np.sum(np.asarray(v) ** 2))


def total_energy(u, v, rho, efield, p: SystemParams) -> float:
    """Electronic + elastic + kinetic + ionic dipole energy (eV).

    The ionic background carries +1 per site, hence the ``-E * sum(x_n)``
    term whose derivative combines with the electronic one into
    ``-E (rho_nn - 1)`` in the forces.
    """
    u = _check_length(u, p)
    h = build_electronic_hamiltonian(u, efield, p)
    e_el = float(np.real(np.sum(h * rho)))
    e_ion = -efield * float(np.sum(site_positions(u, p)))
    return e_el + e_ion + elastic_energy(u, p) + kinetic_energy(v, p)
