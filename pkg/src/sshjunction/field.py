"""Two-colour (omega + 2 omega) laser field with a smooth envelope."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import HBAR

ENVELOPES = ("sin2", "linear")


@dataclass(frozen=True)
class FieldParams:
    eps_2w: float = 6.1e-3  # V/A
    eps_ratio: float = 2.0  # eps_w / eps_2w
    hbar_omega: float = 0.13  # eV
    phi_w: float = 0.0
    phi_2w: float = 0.0
    t_ramp_on: float = 100.0  # fs
    t_plateau: float = 400.0
    t_ramp_off: float = 100.0
    envelope: str = "sin2"

    def __post_init__(self):
        if self.envelope not in ENVELOPES:
            raise ValueError(f"envelope must be one of {ENVELOPES}, got {self.envelope!r}")
        if self.hbar_omega <= 0:
            raise ValueError("hbar_omega must be positive")
        for name in ("t_ramp_on", "t_plateau", "t_ramp_off"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def eps_w(self) -> float:
        return self.eps_ratio * self.eps_2w

    @property
    def omega(self) -> float:
        """Carrier angular frequency in rad/fs."""
        return self.hbar_omega / HBAR

    @property
    def period_2w(self) -> float:
        return np.pi / self.omega

    @property
    def duration(self) -> float:
        return self.t_ramp_on + self.t_plateau + self.t_ramp_off

    @property
    def relative_phase(self) -> float:
        return self.phi_2w - 2.0 * self.phi_w

    def with_relative_phase(self, phase: float) -> "FieldParams":
        """Copy with ``phi_w = 0`` and ``phi_2w = phase``."""
        return replace(self, phi_w=0.0, phi_2w=float(phase))

    def with_(self, **changes) -> "FieldParams":
        return replace(self, **changes)


def _ramp(x, shape):
    # x in [0, 1] -> [0, 1]
    if shape == "sin2":
        return np.sin(0.5 * np.pi * x) ** 2
    return x


def envelope(t, fp: FieldParams):
    """Envelope: ramp up over ``t_ramp_on``, flat plateau, mirrored ramp down, zero after."""
    t = np.asarray(t, dtype=float)
    t_on, t_off_start, t_end = fp.t_ramp_on, fp.t_ramp_on + fp.t_plateau, fp.duration
    s = np.zeros_like(t)
    if t_on > 0:
        rising = (t >= 0) & (t < t_on)
        s = np.where(rising, _ramp(np.clip(t / t_on, 0, 1), fp.envelope), s)
    s = np.where((t >= t_on) & (t <= t_off_start), 1.0, s)
    if fp.t_ramp_off > 0:
        falling = (t > t_off_start) & (t < t_end)
        s = np.where(falling, _ramp(np.clip((t_end - t) / fp.t_ramp_off, 0, 1), fp.envelope), s)
    return s if s.ndim else float(s)


def carrier(t, fp: FieldParams):
    t = np.asarray(t, dtype=float)
    w = fp.omega
    return fp.eps_w * np.cos(w * t + fp.phi_w) + fp.eps_2w * np.cos(2.0 * w * t + fp.phi_2w)


def _envelope_scalar(t: float, fp: FieldParams) -> float:
    if t < 0 or t >= fp.duration:
        return 0.0
    if t < fp.t_ramp_on:
        x = t / fp.t_ramp_on
    elif t <= fp.t_ramp_on + fp.t_plateau:
        return 1.0
    else:
        x = (fp.duration - t) / fp.t_ramp_off
    return math.sin(0.5 * math.pi * x) ** 2 if fp.envelope == "sin2" else x


def field_amplitude(t, fp: FieldParams):
    """E(t) in V/A; accepts scalars or arrays."""
    if isinstance(t, (float, int)):
        s = _envelope_scalar(float(t), fp)
        if s == 0.0:
            return 0.0
        w = fp.omega
        return s * (fp.eps_w * math.cos(w * t + fp.phi_w) + fp.eps_2w * math.cos(2.0 * w * t + fp.phi_2w))
    e = envelope(t, fp) * carrier(t, fp)
    return float(e) if np.ndim(e) == 0 else e
