"""Photon-number multiplier: one absorbed photon in ``a_m`` becomes ``n`` in ``b_m``.

Also builds the full preamplifier -> detector cascade and decomposes the
multiplier output into temporal modes via its first-order coherence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .cascade import CascadeNode, CascadeSystem, TimeOperator, build_chain, cavity_node, emitter_node
from .evolve import EvolutionConfig, lindblad_propagate, two_time_correlation
from .hilbert import SpaceLayout, annihilator, fock_state, number
from .jpd import DetectorSimulator, JpdParams, StroboSchedule, WeightFunction, detector_node
from .pulses import PulseSpec, fourier, spectral_width

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultiplierParams:
    """``drive`` is ``E_Jm* alpha0m beta0m^n / hbar``; ``None`` means impedance matched."""

    n: int = 2
    gamma_am: float = 0.5
    gamma_bm: float = 0.5
    alpha0: float = 0.1
    beta0: float = 0.1
    drive: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("multiplication factor must be >= 1")
        if not (self.gamma_am > 0 and self.gamma_bm > 0):
            raise ValueError("multiplier rates must be positive")

    @property
    def drive_scale(self) -> float:
        return matched_drive(self) if self.drive is None else self.drive

    @property
    def coefficient(self) -> float:
        """Prefactor of ``(a b^dag^n + a^dag b^n)`` in the multiplier Hamiltonian."""
        return self.drive_scale / (2 * math.factorial(self.n))

    @property
    def josephson_energy(self) -> float:
        """``E_Jm* / hbar`` implied by ``drive_scale`` and the zero-point fluctuations."""
        return self.drive_scale / (self.alpha0 * self.beta0**self.n)


def matched_drive(params: MultiplierParams) -> float:
    """Impedance-matched ``E_Jm* alpha0m beta0m^n / hbar = sqrt(g_am g_bm) sqrt(n n!)``."""
    n = params.n
    return math.sqrt(params.gamma_am * params.gamma_bm) * math.sqrt(n * math.factorial(n))


def rwa_hamiltonian_mult(params: MultiplierParams, layout: SpaceLayout, a: str = "a_m", b: str = "b_m"):
    """``coefficient * (a b^dag^n + a^dag b^n)`` in the resonant frame."""
    if layout.cutoff(b) < params.n + 2:
        raise ValueError(f"cutoff of {b!r} must be >= n+2 = {params.n + 2}")
    am = annihilator(layout, a)
    bm = annihilator(layout, b)
    bn = bm
    for _ in range(params.n - 1):
        bn = bn @ bm
    return params.coefficient * (am @ bn.dag() + am.dag() @ bn)


def multiplier_node(params: MultiplierParams, layout: SpaceLayout, a: str = "a_m", b: str = "b_m") -> CascadeNode:
    """Two-port node: absorbs through ``sqrt(g_am) a_m``, emits ``sqrt(g_bm) b_m``."""
    H = TimeOperator.of(rwa_hamiltonian_mult(params, layout, a, b))
    return CascadeNode(
        name=f"multiplier[n={params.n}]",
        hamiltonian=H,
        input=TimeOperator.of(np.sqrt(params.gamma_am) * annihilator(layout, a)),
        output=TimeOperator.of(np.sqrt(params.gamma_bm) * annihilator(layout, b)),
    )


def multiplier_chain(params: MultiplierParams, pulse: PulseSpec) -> tuple[SpaceLayout, CascadeSystem]:
    """Emitter feeding the multiplier, output of ``b_m`` left free."""
    layout = SpaceLayout([("a_u", 2), ("a_m", 2), ("b_m", params.n + 2)])
    system = build_chain([emitter_node(pulse, layout, "a_u"), multiplier_node(params, layout)])
    return layout, system


@dataclass
class ModeDecomposition:
    """Temporal modes of the multiplier output.

    ``modes[i]`` is normalized so that ``sum |v_i|^2 dt = 1``; ``occupations``
    are photon numbers in descending order; ``spectra[i]`` is sampled on
    ``omega``.
    """

    times: np.ndarray
    occupations: np.ndarray
    modes: np.ndarray
    omega: np.ndarray
    spectra: np.ndarray
    coherence: np.ndarray = field(repr=False)
    input_mode: np.ndarray = field(repr=False)
    input_spectrum: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        return float(self.occupations.sum())

    def top_fraction(self, k: int = 3) -> float:
        return float(self.occupations[:k].sum() / self.occupations.sum())

    def spectral_widths(self, k: int = 3) -> np.ndarray:
        return np.array([spectral_width(self.omega, s) for s in self.spectra[:k]])

    @property
    def input_width(self) -> float:
        return spectral_width(self.omega, self.input_spectrum)


def emission_window(params: MultiplierParams, pulse: PulseSpec, tail: float = 12.0) -> tuple[float, float]:
    lo, hi = pulse.window
    slow = min(params.gamma_am, params.gamma_bm)
    if pulse.shape == "gaussian":
        # the outer 2/sigma of a 6/sigma window carry < 1e-8 of the energy
        lo, hi = lo + 2.0 / pulse.width, hi - 2.0 / pulse.width
    return lo, hi + tail / slow


def output_modes(
    params: MultiplierParams,
    pulse: PulseSpec,
    n_grid: int = 200,
    window: tuple[float, float] | None = None,
    config: EvolutionConfig | None = None,
    pad: int = 8,
) -> ModeDecomposition:
    """Diagonalize ``G(t1, t2) = <b_out^dag(t2) b_out(t1)>`` of the multiplier output."""
    layout, system = multiplier_chain(params, pulse)
    lo, hi = window or emission_window(params, pulse)
    grid = np.linspace(lo, hi, n_grid)
    dt = grid[1] - grid[0]
    bout = np.sqrt(params.gamma_bm) * annihilator(layout, "b_m")
    rho0 = fock_state(layout, a_u=1)
    cfg = config or EvolutionConfig(dt=min(0.01 / max(params.gamma_am, params.gamma_bm, params.coefficient), dt))
    G = two_time_correlation(system, bout.dag(), bout, rho0, grid, cfg)
    herm = np.max(np.abs(G - G.conj().T))
    if herm > 1e-8 * max(np.abs(G).max(), 1e-300):
        raise ValueError(f"coherence matrix is not Hermitian (deviation {herm:.3g})")
    lam, vec = np.linalg.eigh(G)
    order = np.argsort(lam)[::-1]
    occ = lam[order] * dt
    modes = (vec[:, order] / np.sqrt(dt)).T
    omega, _ = fourier(grid, modes[0], pad=pad)
    spectra = np.array([fourier(grid, v, pad=pad)[1] for v in modes])
    u = pulse.amplitude(grid)
    return ModeDecomposition(
        times=grid,
        occupations=occ,
        modes=modes,
        omega=omega,
        spectra=spectra,
        coherence=G,
        input_mode=u,
        input_spectrum=fourier(grid, u, pad=pad)[1],
    )


def output_photon_number(params: MultiplierParams, pulse: PulseSpec, config: EvolutionConfig | None = None) -> dict:
    """Time-integrated ``b_m`` output flux and the fraction of the input absorbed by ``a_m``.

    Photons emitted by ``b_m`` equal ``n`` times the converted excitations; the
    rest of the input is reflected at ``a_m``.
    """
    layout, system = multiplier_chain(params, pulse)
    lo, hi = emission_window(params, pulse)
    flux_b = params.gamma_bm * number(layout, "b_m")
    res = lindblad_propagate(
        system,
        fock_state(layout, a_u=1),
        (lo, hi),
        config,
        observables={"flux_b": flux_b, "n_am": number(layout, "a_m"), "n_bm": number(layout, "b_m")},
    )
    t = res.times
    emitted = float(trapezoid(res.expectations["flux_b"].real, t))
    remaining = float(res.expectations["n_bm"][-1].real + params.n * res.expectations["n_am"][-1].real)
    return {"emitted": emitted, "in_cavities": remaining, "converted": (emitted + remaining) / params.n}


def cascade_layout(params: MultiplierParams, det: JpdParams) -> SpaceLayout:
    return SpaceLayout(
        [("a_u", 2), ("a_m", 2), ("b_m", params.n + 2), ("a_d", 3), ("b_d", det.b_cutoff)]
    )


def cascaded_detector(
    params: MultiplierParams, det: JpdParams, pulse: PulseSpec, schedule: StroboSchedule
) -> CascadeSystem:
    """Emitter -> multiplier -> stroboscopic detector, ``b_d`` homodyne monitored.

    Rates are in units of ``gamma_ad``; the multiplier bandwidth should be
    about half the detector bandwidth so that the broadened output stays
    resonant with ``a_d``.
    """
    if not math.isclose(det.gamma_a, 2 * params.gamma_am, rel_tol=1e-9):
        log.warning("gamma_ad = %.3g differs from 2 gamma_am = %.3g", det.gamma_a, 2 * params.gamma_am)
    layout = cascade_layout(params, det)
    log.info(
        "cascade dimension %d (dense density matrix %.1f MiB before subspace restriction)",
        layout.dim,
        layout.dim**2 * 16 / 2**20,
    )
    return build_chain(
        [
            emitter_node(pulse, layout, "a_u"),
            multiplier_node(params, layout),
            detector_node(det, layout, schedule, "a_d", "b_d"),
        ]
    )


def cascade_simulator(
    params: MultiplierParams,
    det: JpdParams,
    pulse: PulseSpec,
    schedule: StroboSchedule,
    weight: WeightFunction | None = None,
) -> DetectorSimulator:
    """Trajectory runner for the preamplified detector, usable with the jpd estimators."""
    system = cascaded_detector(params, det, pulse, schedule)
    return DetectorSimulator(
        det, schedule, pulse, weight=weight, system=(system.layout, system), labels=("a_d", "b_d")
    )
