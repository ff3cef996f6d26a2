"""Single-photon temporal modes and the emitter coupling that releases them."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.special import erf, erfc

Shape = Literal["gaussian", "decaying_exp", "rising_exp"]

GAUSS_HALF_WIDTH = 6.0  # window half width in units of 1/sigma_omega
EXP_TAIL = 1e-8  # energy discarded by the exponential windows
G_CLAMP = 1e-6  # coupling switched off once remaining energy drops below this


@dataclass(frozen=True)
class PulseSpec:
    """Normalized mode ``u(t)`` carrying one photon.

    ``width`` is ``sigma_omega`` for the Gaussian and ``gamma_u`` for the
    exponentials. ``detuning`` is ``omega_a - omega_u`` of the cavity the pulse
    is aimed at; the amplitude itself is given in the frame of the pulse carrier.
    """

    shape: Shape
    width: float
    t0: float = 0.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.shape not in ("gaussian", "decaying_exp", "rising_exp"):
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if not self.width > 0:
            raise ValueError(f"pulse width must be positive, got {self.width}")

    def shifted(self, dt: float) -> "PulseSpec":
        return replace(self, t0=self.t0 + dt)

    @property
    def window(self) -> tuple[float, float]:
        """Support of the truncated pulse."""
        if self.shape == "gaussian":
            half = GAUSS_HALF_WIDTH / self.width
            return self.t0 - half, self.t0 + half
        span = -np.log(EXP_TAIL) / self.width
        if self.shape == "decaying_exp":
            return self.t0, self.t0 + span
        return self.t0 - span, self.t0

    @property
    def _norm(self) -> float:
        # energy of the untruncated pulse inside the window
        if self.shape == "gaussian":
            return float(erf(GAUSS_HALF_WIDTH))
        return 1.0 - EXP_TAIL

    def _inside(self, t: np.ndarray) -> np.ndarray:
        lo, hi = self.window
        return (t >= lo) & (t <= hi)

    def amplitude(self, t) -> np.ndarray:
        """``u(t)``, zero outside the window, renormalized to unit energy."""
        t = np.asarray(t, dtype=float)
        s = t - self.t0
        w = self.width
        if self.shape == "gaussian":
            u = np.sqrt(w / np.sqrt(np.pi)) * np.exp(-0.5 * (w * s) ** 2)
        elif self.shape == "decaying_exp":
            u = np.sqrt(w) * np.exp(-0.5 * w * np.maximum(s, 0.0))
        else:
            u = np.sqrt(w) * np.exp(0.5 * w * np.minimum(s, 0.0))
        u = np.where(self._inside(t), u / np.sqrt(self._norm), 0.0)
        return u.astype(complex)

    def remaining(self, t) -> np.ndarray:
        """Pulse energy still to arrive after ``t`` (1 before the window, 0 after)."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.window
        s = t - self.t0
        w = self.width
        if self.shape == "gaussian":
            x = np.clip(w * s, -GAUSS_HALF_WIDTH, GAUSS_HALF_WIDTH)
            rem = 0.5 * (erfc(x) - erfc(GAUSS_HALF_WIDTH)) / self._norm
        elif self.shape == "decaying_exp":
            rem = (np.exp(-w * np.maximum(s, 0.0)) - EXP_TAIL) / self._norm
        else:
            rem = -np.expm1(w * np.minimum(s, 0.0)) / self._norm
        rem = np.where(t < lo, 1.0, np.where(t > hi, 0.0, rem))
        return np.clip(rem, 0.0, 1.0)

    def coupling_g(self, t) -> np.ndarray:
        """Emitter coupling ``g_u(t) = u*(t) / sqrt(1 - int_{-inf}^t |u|^2)``.

        The coupling is set to zero once less than ``G_CLAMP`` of the energy
        remains, which keeps it finite at the end of the window.
        """
        t = np.asarray(t, dtype=float)
        rem = self.remaining(t)
        ok = rem >= G_CLAMP
        g = np.conj(self.amplitude(t)) / np.sqrt(np.where(ok, rem, 1.0))
        return np.where(ok, g, 0.0)

    def spectrum(self, t: np.ndarray, pad: int = 4) -> tuple[np.ndarray, np.ndarray]:
        """Sampled ``(omega, u~(omega))`` on a uniform grid, unitary convention."""
        return fourier(t, self.amplitude(t), pad=pad)


def fourier(t: np.ndarray, v: np.ndarray, pad: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time Fourier transform ``(2 pi)^{-1/2} int v(t) e^{i w t} dt`` via FFT."""
    t = np.asarray(t, dtype=float)
    dt = t[1] - t[0]
    n = pad * len(t)
    vt = np.zeros(n, dtype=complex)
    vt[: len(t)] = v
    spec = np.fft.fftshift(np.fft.ifft(vt)) * n * dt / np.sqrt(2 * np.pi)
    omega = np.fft.fftshift(np.fft.fftfreq(n, d=dt)) * 2 * np.pi
    spec *= np.exp(1j * omega * t[0])
    return omega, spec


def spectral_width(omega: np.ndarray, spec: np.ndarray) -> float:
    """Root-mean-square width of ``|spec|^2`` about its centroid."""
    p = np.abs(spec) ** 2
    p = p / p.sum()
    mean = np.sum(omega * p)
    return float(np.sqrt(np.sum((omega - mean) ** 2 * p)))
