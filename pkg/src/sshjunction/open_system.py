"""Projective lead coupling: pi* projector, contact matrix and lead memory kernel.

The leads are semi-infinite tight-binding chains that only accept electrons
above the Fermi level.  In the wide-band limit they act on the wire as the
absorbing term ``-i gamma_eff * Gamma'`` where

    Gamma'[n, m] = P[n, 1] P[1, m] + P[n, N] P[N, m]

and ``P`` projects onto instantaneous eigenorbitals of H_el above E_F.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .model import HBAR

DEGENERACY_TOL = 1e-9  # eV


class FermiDegeneracyWarning(UserWarning):
    """An eigenvalue sits within the degeneracy tolerance of the Fermi level."""


@dataclass
class ProjectorData:
    projector: np.ndarray
    gamma_prime: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    near_fermi: bool = False

    @property
    def rank(self) -> int:
        return int(round(np.real(np.trace(self.projector))))


def fix_phases(vecs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of every column real and positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    pivot = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(pivot) / pivot)[None, :]


def contact_matrix(projector: np.ndarray) -> np.ndarray:
    """Gamma'_{nm} = P_{n,1} P_{1,m} + P_{n,N} P_{N,m}."""
    return (np.outer(projector[:, 0], projector[0, :])
            + np.outer(projector[:, -1], projector[-1, :]))


def instantaneous_projector(h: np.ndarray, e_fermi: float = 0.0,
                            degeneracy_tol: float = DEGENERACY_TOL) -> ProjectorData:
    """Diagonalise ``h`` and build the projector onto states above ``e_fermi``.

    Levels within ``degeneracy_tol`` of the Fermi energy count as below it.
    Such a level is reported through ``near_fermi`` and a warning, never
    as an error.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    evals, evecs = np.linalg.eigh(h)
    evecs = fix_phases(evecs)
    near = bool(np.any(np.abs(evals - e_fermi) < degeneracy_tol))
    if near:
        warnings.warn(f"eigenvalue within {degeneracy_tol} eV of the Fermi level; "
                      "treated as below it", FermiDegeneracyWarning, stacklevel=2)
    above = evecs[:, evals > e_fermi + degeneracy_tol]
    proj = above @ above.conj().T
    return ProjectorData(proj, contact_matrix(proj), evals, evecs, near)


def tridiagonal_eigh(diag: np.ndarray, offdiag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a real symmetric tridiagonal matrix (LAPACK stev)."""
    w, z, info = lapack.dstev(diag, offdiag, compute_v=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dstev failed with info={info}")
    return w, z


def edge_projections(diag: np.ndarray, offdiag: np.ndarray, e_fermi: float = 0.0,
                     degeneracy_tol: float = DEGENERACY_TOL):
    """Spectrum plus the first and last columns of the projector.

    For a real tridiagonal Hamiltonian the projector is real symmetric, so
    these two columns carry all of Gamma'.  This is the per-stage work of
    the wide-band propagator.
    """
    w, z = tridiagonal_eigh(diag, offdiag)
    above = z[:, w > e_fermi + degeneracy_tol]
    return w, above @ above[0], above @ above[-1]


def lead_coupling(t: float, gamma_eff: float, t_ramp: float) -> float:
    """Contact strength switched on with a sin^2 ramp over ``t_ramp`` fs."""
    if t_ramp <= 0 or t >= t_ramp:
        return gamma_eff
    if t <= 0:
        return 0.0
    return gamma_eff * math.sin(0.5 * math.pi * t / t_ramp) ** 2


def effective_hamiltonian(h: np.ndarray, proj: ProjectorData, gamma: float) -> np.ndarray:
    """Non-Hermitian generator ``H_el - i gamma Gamma'`` of the wide-band orbital equation."""
    return h - 1j * gamma * proj.gamma_prime


# Bessel functions of integer order

def bessel_j_orders(n_max: int, x) -> np.ndarray:
    """J_0 ... J_{n_max} at ``x`` by Miller's downward recurrence.

    Normalisation uses ``J_0 + 2 sum_k J_2k = 1``.  Returns an array of
    shape ``(n_max + 1,) + shape(x)``.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    xs = np.abs(x.ravel())
    zero = xs == 0.0
    xw = np.where(zero, 1.0, xs)
    x_max = float(xw.max()) if xw.size else 0.0
    start = int(max(n_max, x_max) + 30 + 8 * x_max ** (1 / 3))
    start += start % 2

    out = np.zeros((n_max + 1, xs.size))
    j_next = np.zeros(xs.size)
    j_cur = np.full(xs.size, 1e-30)
    norm = 2.0 * j_cur  # start order is even and nonzero
    if start <= n_max:
        out[start] = j_cur
    for k in range(start, 0, -1):
        j_prev = (2.0 * k / xw) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        order = k - 1
        if order <= n_max:
            out[order] = j_cur
        if order % 2 == 0:
            norm = norm + (j_cur if order == 0 else 2.0 * j_cur)
        big = np.abs(j_cur) > 1e200
        if np.any(big):
            j_cur[big] *= 1e-200
            j_next[big] *= 1e-200
            norm[big] *= 1e-200
            out[:, big] *= 1e-200
    out /= norm
    out[:, zero] = 0.0
    out[0, zero] = 1.0
    neg = x.ravel() < 0
    out[1::2, neg] *= -1.0
    return out.reshape((n_max + 1,) + shape)


def bessel_jn(n: int, x):
    """J_n(x) for integer n of either sign."""
    n = int(n)
    sign = -1.0 if (n < 0 and n % 2) else 1.0
    val = sign * bessel_j_orders(abs(n), x)[abs(n)]
    return float(val) if np.ndim(val) == 0 else val


def bessel_integral(n: int, z: float) -> float:
    """J_n(z) from ``(i^-n / pi) int_0^pi exp(i z cos th) cos(n th) dth`` by adaptive quadrature.

    Independent of the recurrence; used as a cross-check.
    """
    from scipy.integrate import quad

    re = quad(lambda th: math.cos(z * math.cos(th)) * math.cos(n * th), 0.0, math.pi, limit=500,
              epsabs=1e-13, epsrel=1e-11)[0]
    im = quad(lambda th: math.sin(z * math.cos(th)) * math.cos(n * th), 0.0, math.pi, limit=500,
              epsabs=1e-13, epsrel=1e-11)[0]
    val = (1j) ** (-n) * complex(re, im) / math.pi
    return val.real


_I_POWERS = (1.0, 1j, -1.0, -1j)


def _kernel_argument(t, t_lead, hbar):
    return 2.0 * t_lead * np.asarray(t, dtype=float) / hbar


def memory_kernel(t, t_lead: float, hbar: float = HBAR):
    """Lead memory kernel ``K(t) = 2 J_1(x) / x`` with ``x = 2 t_lead t / hbar``."""
    x = _kernel_argument(t, t_lead, hbar)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    k = np.where(small, 1.0 - x ** 2 / 8.0 + x ** 4 / 192.0, 2.0 * bessel_j_orders(1, xs)[1] / xs)
    return float(k) if k.ndim == 0 else k


def lead_propagator_element(n: int, m: int, n_beta: int, t, t_lead: float, hbar: float = HBAR):
    """Site-basis element of exp(-i H_lead t / hbar) for a semi-infinite lead.

    The lead terminates next to the contact site ``n_beta``, which acts as
    a node of the lead eigenfunctions (method of images).
    """
    x = _kernel_argument(t, t_lead, hbar)
    direct = n - m
    image = n + m - 2 * n_beta
    return (_I_POWERS[direct % 4] * bessel_jn(direct, x)
            - _I_POWERS[image % 4] * bessel_jn(image, x))
