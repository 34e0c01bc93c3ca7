"""Density matrix, lead currents, charges and rectification efficiency.

Sign convention: ``j_left`` and ``j_right`` count electrons per fs entering
the left and right lead, so absorption gives non-negative currents and the
efficiency ``eta = (qL - qR) / (qL + qR)`` is -1 when everything goes right.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .model import HBAR
from .open_system import ProjectorData

CHARGE_EPS = 1e-6  # |e|


def density_matrix(amplitudes: np.ndarray, occupations: np.ndarray) -> np.ndarray:
    """``rho[n, m] = sum_j f_j <m|j><j|n>`` (spin-summed).

    Note the index order: this is the transpose of ``C f C^dagger``.
    """
    c = np.asarray(amplitudes)
    return (c.conj() * np.asarray(occupations)[None, :]) @ c.T


def currents(rho: np.ndarray, proj: ProjectorData, gamma: float, hbar: float = HBAR):
    """Electron currents (1/fs) into the left and right leads.

    ``j_beta = (2 gamma / hbar) sum_{n,m} Re{P[b, m] P[n, b] rho[n, m]}``
    with ``b`` the first (left) or last (right) site.
    """
    pm = proj.projector
    out = []
    for b in (0, -1):
        val = np.sum(pm[b, :][None, :] * pm[:, b][:, None] * rho)
        out.append(2.0 * gamma / hbar * float(np.real(val)))
    return tuple(out)


@dataclass
class TrajectoryResult:
    """Recorded time series of one trajectory.

    Currents in electrons/fs, charges in |e|, field in V/A, spectrum in eV.
    ``spectrum`` holds a window of instantaneous eigenvalues centred on the
    Fermi level.  ``lattice`` holds displacement snapshots when requested.
    """

    times: np.ndarray
    field: np.ndarray
    j_left: np.ndarray
    j_right: np.ndarray
    q_left: np.ndarray
    q_right: np.ndarray
    norm: np.ndarray
    spectrum: np.ndarray
    lattice: np.ndarray | None = None
    final_state: object = None
    meta: dict = field(default_factory=dict)

    @property
    def absorbed(self) -> np.ndarray:
        """Electrons lost from the wire since the first record."""
        return self.norm[0] - self.norm

    def charge_balance_error(self) -> float:
        """Relative mismatch between electrons lost and charge delivered to the leads."""
        lost = self.absorbed[-1]
        delivered = (self.q_left[-1] - self.q_left[0]) + (self.q_right[-1] - self.q_right[0])
        scale = max(abs(lost), abs(delivered), CHARGE_EPS)
        return abs(lost - delivered) / scale

    def trapezoid_charges(self) -> tuple[np.ndarray, np.ndarray]:
        """Charges re-integrated from the recorded currents."""
        ql = self.q_left[0] + cumulative_trapezoid(self.j_left, self.times, initial=0.0)
        qr = self.q_right[0] + cumulative_trapezoid(self.j_right, self.times, initial=0.0)
        return ql, qr


def efficiency(q_left: float, q_right: float) -> float | None:
    total = q_left + q_right
    if total < CHARGE_EPS:
        return None
    return (q_left - q_right) / total


def rectification_and_efficiency(result: TrajectoryResult, use_recorded_charges: bool = True):
    """Net rectification ``qL - qR`` (|e|) and efficiency ``eta`` (None if undefined).

    By default the charges integrated alongside the equations of motion are
    used.  With ``use_recorded_charges=False`` the recorded currents are
    integrated by the trapezoid rule instead.
    """
    if use_recorded_charges:
        ql, qr = float(result.q_left[-1]), float(result.q_right[-1])
    else:
        ql = float(result.q_left[0] + trapezoid(result.j_left, result.times))
        qr = float(result.q_right[0] + trapezoid(result.j_right, result.times))
    return ql - qr, efficiency(ql, qr)
