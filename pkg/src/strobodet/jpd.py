"""Josephson-photonics detector: stroboscopic homodyne readout of cavity ``a``.

Cavity ``b`` is driven through the junction only while ``E_J`` is switched
on; the drive strength depends on the occupation of ``a``. The homodyne
current of ``b`` is integrated against a weight function once per
measurement period and the outcome ``O_j`` is compared with a threshold.

Rates are in units of a reference rate (usually ``gamma_a``), so outcomes
are directly comparable with ``sqrt(gamma_a) * O_th``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.special import j0
from scipy.stats import norm

from .cascade import CascadeNode, CascadeSystem, TimeOperator, build_chain, emitter_node
from .evolve import CompiledModel, EvolutionConfig, Propagator, SMEIntegrator, TrajectoryRecord
from .hilbert import Operator, SpaceLayout, annihilator, fock_state, func_of_number, number, quadrature
from .pulses import PulseSpec

BesselForm = Literal["truncated", "exact"]

REFERENCE_FALSE_POSITIVE = 2.9e-4  # per-measurement false-positive probability used to place O_th
MIN_EFFICIENCY_TRAJECTORIES = 100
MIN_DARK_MEASUREMENTS = 30_000


@dataclass(frozen=True)
class JpdParams:
    """Detector parameters; ``beta = E_J* beta0 / (hbar gamma_b)`` is the steady amplitude of ``b``."""

    gamma_a: float = 1.0
    gamma_b: float = 10.0
    alpha0: float = 1.0
    beta0: float = 0.3
    beta: float = 1.6
    delta_a: float = 0.0
    delta_b: float = 0.0
    bessel_form: BesselForm = "truncated"

    def __post_init__(self):
        if self.gamma_a < 0 or not self.gamma_b > 0:
            raise ValueError("cavity rates must be non-negative (a) and positive (b)")
        if self.gamma_b < 5 * self.gamma_a:
            raise ValueError(
                f"gamma_b/gamma_a = {self.gamma_b / self.gamma_a:.3g} < 5 violates the separation of time scales"
            )
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.bessel_form not in ("truncated", "exact"):
            raise ValueError(f"unknown bessel_form {self.bessel_form!r}")

    @property
    def drive(self) -> float:
        """``E_J* beta0 / hbar``."""
        return self.beta * self.gamma_b

    @property
    def b_cutoff(self) -> int:
        return max(14, math.ceil(self.beta**2 + 5 * self.beta))

    @property
    def fastest_rate(self) -> float:
        return max(self.gamma_a, self.gamma_b, self.drive, abs(self.delta_a), abs(self.delta_b))


@dataclass(frozen=True)
class StroboSchedule:
    """``count`` measurements of length ``on_time`` starting at ``offset + j / rate``."""

    rate: float = 0.4
    on_time: float = 0.6
    count: int = 31
    offset: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("measurement rate must be positive")
        if not 0 < self.on_time < 1 / self.rate:
            raise ValueError("on_time must lie in (0, 1/rate)")
        if self.count < 1:
            raise ValueError("at least one measurement required")

    @property
    def period(self) -> float:
        return 1.0 / self.rate

    @property
    def starts(self) -> np.ndarray:
        return self.offset + self.period * np.arange(self.count)

    @property
    def end(self) -> float:
        return self.offset + self.count * self.period

    def single(self) -> "StroboSchedule":
        return StroboSchedule(self.rate, self.on_time, 1, 0.0)

    def envelope(self, t: np.ndarray) -> np.ndarray:
        """1 while ``E_J`` is on, else 0."""
        rel = np.asarray(t, dtype=float) - self.offset
        j = np.floor(rel / self.period)
        phase = rel - j * self.period
        return ((j >= 0) & (j < self.count) & (phase < self.on_time)).astype(float)

    __call__ = envelope

    def breakpoints(self) -> np.ndarray:
        return np.sort(np.concatenate([self.starts, self.starts + self.on_time, [self.end]]))


def normal_ordered_drive_factor(beta0: float, cutoff: int) -> np.ndarray:
    """Fock diagonal of ``:J1(2 beta0 sqrt(n)) / (beta0 sqrt(n)):``.

    Normal ordering maps ``n^k`` to ``b^dag^k b^k`` whose diagonal is
    ``m! / (m-k)!``, giving ``sum_k (-beta0^2)^k C(m, k) / (k+1)!``.
    """
    out = np.zeros(cutoff)
    for m in range(cutoff):
        out[m] = sum((-(beta0**2)) ** k * math.comb(m, k) / math.factorial(k + 1) for k in range(m + 1))
    return out


def drive_operator(params: JpdParams, layout: SpaceLayout, a: str = "a", b: str = "b") -> Operator:
    """Junction term with ``E_J`` on: ``-i (E_J* beta0 / 2) (b - b^dag) F(n_a)`` (b-side normal ordered if exact)."""
    bm = annihilator(layout, b)
    if params.bessel_form == "truncated":
        Fa = func_of_number(layout, a, lambda n: 1 - params.alpha0**2 * n)
        core = bm - bm.dag()
    else:
        Fa = func_of_number(layout, a, lambda n: j0(2 * params.alpha0 * np.sqrt(n)))
        table = normal_ordered_drive_factor(params.beta0, layout.cutoff(b))
        Fb = func_of_number(layout, b, lambda n: table[n.astype(int)])
        core = Fb @ bm - bm.dag() @ Fb
    return (-0.5j * params.drive) * (core @ Fa)


def rwa_hamiltonian(params: JpdParams, layout: SpaceLayout, ej_on: bool, a: str = "a", b: str = "b") -> Operator:
    H = params.delta_a * number(layout, a) + params.delta_b * number(layout, b)
    return H + drive_operator(params, layout, a, b) if ej_on else H


def detector_node(
    params: JpdParams, layout: SpaceLayout, schedule: StroboSchedule, a: str = "a", b: str = "b"
) -> CascadeNode:
    """Cavity ``a`` on the chain, homodyne-monitored cavity ``b``, ``E_J`` switched by ``schedule``."""
    H = TimeOperator.of(rwa_hamiltonian(params, layout, False, a, b)) + TimeOperator(
        layout, [(schedule.envelope, drive_operator(params, layout, a, b))]
    )
    return CascadeNode(
        name="jpd",
        hamiltonian=H,
        output=TimeOperator.of(np.sqrt(params.gamma_a) * annihilator(layout, a)),
        monitored=TimeOperator.of(np.sqrt(params.gamma_b) * annihilator(layout, b)),
    )


def jpd_system(
    params: JpdParams, schedule: StroboSchedule, pulse: PulseSpec | None = None
) -> tuple[SpaceLayout, CascadeSystem]:
    """Emitter (if ``pulse``) feeding the detector."""
    if pulse is None:
        layout = SpaceLayout([("a", 3), ("b", params.b_cutoff)])
        return layout, build_chain([detector_node(params, layout, schedule)])
    layout = SpaceLayout([("a_u", 3), ("a", 3), ("b", params.b_cutoff)])
    return layout, build_chain([emitter_node(pulse, layout, "a_u"), detector_node(params, layout, schedule)])


def record_step(params: JpdParams, schedule: StroboSchedule, step_factor: float = 0.01) -> float:
    """Largest step ``<= step_factor / fastest rate`` dividing the period evenly."""
    n = math.ceil(schedule.period * params.fastest_rate / step_factor - 1e-9)
    return schedule.period / n


@dataclass
class WeightFunction:
    """``w = <x_b>_0 - <x_b>_1`` on the bin starts of one measurement period."""

    dt: float
    times: np.ndarray
    values: np.ndarray
    x_empty: np.ndarray
    x_occupied: np.ndarray

    @property
    def noise_std(self) -> float:
        """Standard deviation of ``O_j`` from vacuum noise alone."""
        return float(np.sqrt(np.sum(self.values**2) * self.dt))

    def mean_outcome(self, gamma_b: float) -> float:
        """Noise-free ``O_j`` with ``a`` empty."""
        return float(np.sqrt(gamma_b) * np.sum(self.x_empty * self.values) * self.dt)

    def outcomes(self, current: np.ndarray) -> np.ndarray:
        """``O_j = sum_n J_n w_n dt`` for each whole period of ``current``."""
        n = len(self.values)
        if len(current) % n:
            raise ValueError("current must cover an integer number of periods")
        return current.reshape(-1, n) @ self.values * self.dt


def weight_function(
    params: JpdParams, schedule: StroboSchedule, dt: float | None = None
) -> WeightFunction:
    """Two Lindblad runs over one period, from ``|0_a 0_b>`` and ``|1_a 0_b>``."""
    dt = dt or record_step(params, schedule)
    n = int(round(schedule.period / dt))
    single = schedule.single()
    layout, system = jpd_system(params, single)
    starts = [fock_state(layout), fock_state(layout, a=1)]
    model = CompiledModel(system, starts)
    prop = Propagator(model, EvolutionConfig())
    grid = np.arange(n + 1) * dt
    obs = model.observable_stack([quadrature(layout, "b")])
    xs = []
    for rho in starts:
        _, _, vals = prop.run(model.restrict_state(rho), 0.0, grid[-1], obs, grid=grid)
        xs.append(vals[:-1, 0].real)
    return WeightFunction(dt, grid[:-1], xs[0] - xs[1], xs[0], xs[1])


def reference_threshold(weight: WeightFunction, gamma_b: float, p_fp: float = REFERENCE_FALSE_POSITIVE) -> float:
    """Threshold at which an empty-cavity measurement falls below ``O_th`` with probability ``p_fp``.

    With ``a`` empty, ``b`` stays coherent and ``O_j`` is Gaussian with the
    noise-free mean and ``noise_std``.
    """
    return weight.mean_outcome(gamma_b) + weight.noise_std * float(norm.ppf(p_fp))


@dataclass
class OutcomeRecord:
    seed: int
    outcomes: np.ndarray
    has_photon: bool

    def verdicts(self, threshold: float) -> np.ndarray:
        return self.outcomes < threshold


def classify(record: OutcomeRecord, threshold: float) -> tuple[bool, int | None]:
    hits = np.flatnonzero(record.verdicts(threshold))
    return (True, int(hits[0])) if hits.size else (False, None)


class DetectorSimulator:
    """Compiled detector (with or without an incoming pulse), reusable across seeds.

    ``system`` replaces the default emitter -> detector chain, e.g. by one with
    a preamplifier; ``labels`` then name its detector cavities ``(a, b)``.
    """

    def __init__(
        self,
        params: JpdParams,
        schedule: StroboSchedule,
        pulse: PulseSpec | None = None,
        dt: float | None = None,
        weight: WeightFunction | None = None,
        system: tuple[SpaceLayout, CascadeSystem] | None = None,
        labels: tuple[str, str] = ("a", "b"),
        scheme: str = "kraus",
    ):
        self.params, self.schedule, self.pulse = params, schedule, pulse
        self.dt = dt or record_step(params, schedule)
        self.weight = weight or weight_function(params, schedule, self.dt)
        if abs(self.weight.dt - self.dt) > 1e-15:
            raise ValueError("weight function sampled on a different grid")
        self.layout, self.system = system or jpd_system(params, schedule, pulse)
        rho0 = fock_state(self.layout, a_u=1) if pulse is not None else fock_state(self.layout)
        self.model = CompiledModel(self.system, rho0)
        self.steps_per_period = len(self.weight.values)
        self.integrator = SMEIntegrator(self.model, self.dt, renormalize=True, scheme=scheme)
        a, b = labels
        self.observables = self.model.observable_stack([number(self.layout, a), quadrature(self.layout, b)])
        self.start = self._initial_state(rho0)

    def _initial_state(self, rho0) -> np.ndarray:
        # before the first switch-on b is exactly in vacuum, so the homodyne
        # back-action vanishes and the evolution up to there is deterministic
        X = self.model.restrict_state(rho0)
        t_pulse = self.pulse.window[0] if self.pulse is not None else self.schedule.offset
        if t_pulse < self.schedule.offset:
            X, _, _ = Propagator(self.model).run(X, t_pulse, self.schedule.offset)
        return X

    def _integrate(self, seed: int):
        rng = np.random.default_rng(seed)
        n = self.steps_per_period
        chunks = [n] * self.schedule.count
        return self.integrator.run(self.start, self.schedule.offset, n * self.schedule.count, rng, self.observables, chunks)

    def run(self, seed: int) -> OutcomeRecord:
        _, _, signal, dW, _ = self._integrate(seed)
        return OutcomeRecord(seed, self.weight.outcomes(signal + dW / self.dt), self.pulse is not None)

    def trajectory(self, seed: int) -> tuple[OutcomeRecord, TrajectoryRecord]:
        """Outcomes plus the full current and ``<n_a>``, ``<x_b>`` time series."""
        X, times, signal, dW, vals = self._integrate(seed)
        current = signal + dW / self.dt
        rec = OutcomeRecord(seed, self.weight.outcomes(current), self.pulse is not None)
        traj = TrajectoryRecord(
            seed=seed,
            times=times,
            current=current,
            signal=signal,
            expectations={"n_a": vals[:, 0].real, "x_b": vals[:, 1].real},
            final_state=self.model.expand_state(X),
        )
        return rec, traj

    def ensemble(self, n: int, base_seed: int, workers: int = 1) -> list[OutcomeRecord]:
        """Trajectories with seeds ``base_seed + i``, returned in seed order."""
        seeds = [base_seed + i for i in range(n)]
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                return list(pool.map(self.run, seeds))
        return [self.run(s) for s in seeds]


def run_measurement_sequence(
    params: JpdParams, schedule: StroboSchedule, pulse: PulseSpec | None, seed: int
) -> OutcomeRecord:
    return DetectorSimulator(params, schedule, pulse).run(seed)


@dataclass
class Estimate:
    value: float
    stderr: float
    count: int  # detections or false positives
    trials: int  # trajectories or measurements
    upper_bound: bool = False
    records: list[OutcomeRecord] = field(default_factory=list, repr=False)


def efficiency_from_records(records: Sequence[OutcomeRecord], threshold: float) -> Estimate:
    hits = sum(classify(r, threshold)[0] for r in records)
    n = len(records)
    eta = hits / n
    return Estimate(eta, math.sqrt(eta * (1 - eta) / n), hits, n, records=list(records))


def dark_rate_from_records(records: Sequence[OutcomeRecord], threshold: float, rate: float) -> Estimate:
    """``gamma_dark = p_fp * rate``; with no false positives, the 95% upper bound ``3 / N * rate``."""
    n = sum(len(r.outcomes) for r in records)
    k = int(sum(np.count_nonzero(r.verdicts(threshold)) for r in records))
    if k == 0:
        return Estimate(3.0 / n * rate, 0.0, 0, n, upper_bound=True, records=list(records))
    return Estimate(k / n * rate, math.sqrt(k) / n * rate, k, n, records=list(records))


def estimate_efficiency(
    params: JpdParams,
    schedule: StroboSchedule,
    pulse: PulseSpec,
    threshold: float,
    n_traj: int,
    base_seed: int,
    workers: int = 1,
) -> Estimate:
    if n_traj < MIN_EFFICIENCY_TRAJECTORIES:
        raise ValueError(f"need at least {MIN_EFFICIENCY_TRAJECTORIES} trajectories")
    records = DetectorSimulator(params, schedule, pulse).ensemble(n_traj, base_seed, workers)
    return efficiency_from_records(records, threshold)


def estimate_dark_rate(
    params: JpdParams,
    schedule: StroboSchedule,
    threshold: float,
    n_meas: int,
    base_seed: int,
    workers: int = 1,
) -> Estimate:
    if n_meas < MIN_DARK_MEASUREMENTS:
        raise ValueError(f"need at least {MIN_DARK_MEASUREMENTS} measurements for rare-event statistics")
    n_traj = math.ceil(n_meas / schedule.count)
    records = DetectorSimulator(params, schedule, None).ensemble(n_traj, base_seed, workers)
    return dark_rate_from_records(records, threshold, schedule.rate)


def naive_two_photon(eta: np.ndarray | float) -> np.ndarray | float:
    """Efficiency for two independent photons given the single-photon efficiency."""
    return 1 - (1 - np.asarray(eta)) ** 2


@dataclass
class RocCurve:
    thresholds: np.ndarray
    gamma_dark: np.ndarray
    eta: np.ndarray
    err_dark: np.ndarray
    err_eta: np.ndarray

    def at(self, threshold: float) -> tuple[float, float]:
        """``(gamma_dark, eta)`` at the listed threshold closest to ``threshold``."""
        k = int(np.argmin(np.abs(self.thresholds - threshold)))
        return float(self.gamma_dark[k]), float(self.eta[k])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["O_th", "gamma_dark", "eta", "err_dark", "err_eta"])
            for row in zip(self.thresholds, self.gamma_dark, self.eta, self.err_dark, self.err_eta):
                w.writerow([f"{v:.9g}" for v in row])


def roc_from_records(
    photon: Sequence[OutcomeRecord], dark: Sequence[OutcomeRecord], thresholds: Sequence[float], rate: float
) -> RocCurve:
    th = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(th) < 0):
        raise ValueError("thresholds must be sorted")
    eff = [efficiency_from_records(photon, t) for t in th]
    drk = [dark_rate_from_records(dark, t, rate) for t in th]
    return RocCurve(
        thresholds=th,
        gamma_dark=np.array([d.value if not d.upper_bound else 0.0 for d in drk]),
        eta=np.array([e.value for e in eff]),
        err_dark=np.array([d.stderr if not d.upper_bound else d.value for d in drk]),
        err_eta=np.array([e.stderr for e in eff]),
    )


def roc_curve(
    params: JpdParams,
    schedule: StroboSchedule,
    pulse: PulseSpec,
    thresholds: Sequence[float],
    n_traj: int,
    n_meas: int,
    base_seed: int,
    workers: int = 1,
) -> RocCurve:
    """One simulation pass per ensemble; every threshold reuses the same records."""
    weight = weight_function(params, schedule)
    photon = DetectorSimulator(params, schedule, pulse, weight=weight).ensemble(n_traj, base_seed, workers)
    n_dark = math.ceil(n_meas / schedule.count)
    dark = DetectorSimulator(params, schedule, None, weight=weight).ensemble(n_dark, base_seed + n_traj, workers)
    return roc_from_records(photon, dark, thresholds, schedule.rate)


def write_outcomes_csv(records: Sequence[OutcomeRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "j", "O_j", "has_photon"])
        for i, r in enumerate(records):
            for j, o in enumerate(r.outcomes):
                w.writerow([i, j, f"{o:.9g}", int(r.has_photon)])


def reference_pulse(gamma_a: float = 1.0) -> PulseSpec:
    """Resonant Gaussian with ``sigma_omega = 0.1 gamma_a`` centred at ``40 / gamma_a``."""
    return PulseSpec("gaussian", 0.1 * gamma_a, t0=40.0 / gamma_a)
