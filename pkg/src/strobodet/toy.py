"""Idealized detector: instantaneous projective measurements of the absorbing cavity.

A single-photon pulse is released by an emitter cavity ``a_u`` into cavity
``a``; at each measurement time the occupation of ``a`` is measured
projectively. The detection probability is
``eta = 1 - prod_j p_j(0 | no earlier detection)``.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .cascade import CascadeSystem, build_chain, cavity_node, emitter_node
from .evolve import CompiledModel, EvolutionConfig, Propagator, default_dt
from .hilbert import SpaceLayout, annihilator, fock_projector, fock_state, number
from .multiplier import MultiplierParams, multiplier_node
from .pulses import PulseSpec

RESIDUAL_WARN = 1e-3


@dataclass(frozen=True)
class MeasurementSchedule:
    """Measurements at ``window[0] + offset + k / rate`` inside ``window``."""

    rate: float
    window: tuple[float, float]
    offset: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("measurement rate must be positive")
        if not 0 <= self.offset < 1 / self.rate + 1e-12:
            raise ValueError("offset must lie in [0, 1/rate)")
        if self.window[1] <= self.window[0]:
            raise ValueError("empty measurement window")

    @property
    def spacing(self) -> float:
        return 1.0 / self.rate

    def times(self) -> np.ndarray:
        lo, hi = self.window
        first = lo + self.offset
        if first > hi:
            return np.zeros(0)
        k = int(np.floor((hi - first) * self.rate + 1e-9))
        return first + np.arange(k + 1) / self.rate


def default_window(pulse: PulseSpec, gamma_a: float, tail: float = 10.0) -> tuple[float, float]:
    """Pulse support plus ``tail / gamma_a`` of cavity ring-down."""
    lo, hi = pulse.window
    return lo, hi + tail / gamma_a


@dataclass
class ToySetup:
    layout: SpaceLayout
    system: CascadeSystem
    model: CompiledModel
    propagator: Propagator
    detect: np.ndarray  # restricted projector onto "cavity occupied"
    excitations: np.ndarray  # restricted observables used for residual checks
    initial: np.ndarray


def toy_setup(
    pulse: PulseSpec,
    gamma_a: float,
    multiplier: MultiplierParams | None = None,
    config: EvolutionConfig | None = None,
) -> ToySetup:
    config = config or EvolutionConfig()
    if multiplier is None:
        layout = SpaceLayout([("a_u", 3), ("a", 3)])
        nodes = [emitter_node(pulse, layout, "a_u"), cavity_node(layout, "a", gamma_a, pulse.detuning)]
        counted = [number(layout, "a_u"), number(layout, "a")]
    else:
        n = multiplier.n
        layout = SpaceLayout([("a_u", 2), ("a_m", 2), ("b_m", n + 2), ("a", n + 2)])
        nodes = [
            emitter_node(pulse, layout, "a_u"),
            multiplier_node(multiplier, layout),
            cavity_node(layout, "a", gamma_a, pulse.detuning),
        ]
        counted = [number(layout, "a_u"), number(layout, "a_m"), number(layout, "b_m"), number(layout, "a")]
    system = build_chain(nodes)
    rho0 = fock_state(layout, a_u=1)
    model = CompiledModel(system, rho0)
    lo, hi = default_window(pulse, gamma_a)
    dt = default_dt(model, lo, hi, config)
    P1 = fock_projector(layout, "a", range(1, layout.cutoff("a")))
    return ToySetup(
        layout=layout,
        system=system,
        model=model,
        propagator=Propagator(model, config, dt=dt),
        detect=model.restrict_op(P1),
        excitations=model.observable_stack(counted),
        initial=model.restrict_state(rho0),
    )


@dataclass
class ToyDetection:
    eta: float
    times: np.ndarray
    p_conditional: np.ndarray  # p_j(1 | no earlier detection)
    p_joint: np.ndarray  # p_j(1, no earlier detection)
    residual: float  # undetected excitation still inside the cavities at window end


def _conditional_run(setup: ToySetup, schedule: MeasurementSchedule):
    """Evolve the no-detection branch.

    Returns the conditional click probabilities and the excitation left at the
    window end, weighted by the probability of never having clicked.
    """
    prop = setup.propagator
    P1 = setup.detect
    keep = np.eye(P1.shape[0]) - P1
    X = setup.initial.copy()
    t = schedule.window[0]
    probs = []
    for tm in schedule.times():
        if tm > t:
            X, _, _ = prop.run(X, t, tm)
        t = tm
        p1 = float(np.einsum("ij,ji->", P1, X).real)
        p1 = min(max(p1, 0.0), 1.0)
        probs.append(p1)
        if p1 >= 1 - 1e-14:
            return np.asarray(probs), 0.0
        X = keep @ X @ keep / (1 - p1)
    if schedule.window[1] > t:
        X, _, _ = prop.run(X, t, schedule.window[1])
    survival = float(np.prod(1 - np.asarray(probs)))
    residual = survival * float(np.einsum("qij,ji->q", setup.excitations, X).real.sum())
    return np.asarray(probs), residual


def detection_probability(
    pulse: PulseSpec,
    gamma_a: float,
    schedule: MeasurementSchedule,
    setup: ToySetup | None = None,
    multiplier: MultiplierParams | None = None,
) -> ToyDetection:
    """Deterministic detection probability under projective stroboscopic measurement."""
    setup = setup or toy_setup(pulse, gamma_a, multiplier)
    p, residual = _conditional_run(setup, schedule)
    miss = np.cumprod(1 - p)
    before = np.concatenate([[1.0], miss[:-1]]) if len(p) else miss
    eta = float(1 - miss[-1]) if len(p) else 0.0
    if residual > RESIDUAL_WARN:
        warnings.warn(f"window too short: residual photon content {residual:.3g} at window end", RuntimeWarning)
    times = schedule.times()[: len(p)]
    return ToyDetection(eta=min(max(eta, 0.0), 1.0), times=times, p_conditional=p, p_joint=p * before, residual=residual)


@dataclass
class DetectionCurve:
    rates: np.ndarray
    eta_mean: np.ndarray
    eta_min: np.ndarray
    eta_max: np.ndarray

    @property
    def peak(self) -> tuple[float, float]:
        """``(rate, eta_mean)`` at the maximum of the offset-averaged curve."""
        k = int(np.argmax(self.eta_mean))
        return float(self.rates[k]), float(self.eta_mean[k])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rate", "eta_mean", "eta_min", "eta_max"])
            for row in zip(self.rates, self.eta_mean, self.eta_min, self.eta_max):
                w.writerow([f"{v:.9g}" for v in row])


def sweep_rate(
    pulse: PulseSpec,
    gamma_a: float,
    rates: Sequence[float],
    n_offsets: int = 16,
    multiplier: MultiplierParams | None = None,
    workers: int = 1,
    window: tuple[float, float] | None = None,
) -> DetectionCurve:
    """Offset-averaged detection probability for each measurement rate."""
    rates = np.asarray(rates, dtype=float)
    if np.any(rates <= 0) or np.any(np.diff(rates) < 0):
        raise ValueError("rates must be positive and sorted")
    setup = toy_setup(pulse, gamma_a, multiplier)
    window = window or default_window(pulse, gamma_a)
    tasks = [(i, k) for i in range(len(rates)) for k in range(n_offsets)]

    def run(task):
        i, k = task
        sched = MeasurementSchedule(rates[i], window, offset=k / (n_offsets * rates[i]))
        p, _ = _conditional_run(setup, sched)
        return 1 - float(np.prod(1 - p))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            etas = list(pool.map(run, tasks))
    else:
        etas = [run(t) for t in tasks]
    table = np.clip(np.asarray(etas).reshape(len(rates), n_offsets), 0.0, 1.0)
    return DetectionCurve(rates, table.mean(axis=1), table.min(axis=1), table.max(axis=1))


@dataclass
class ToyTrajectory:
    times: np.ndarray
    n_a: np.ndarray
    n_u: np.ndarray
    measurement_times: np.ndarray
    outcomes: np.ndarray  # 0/1 per measurement
    probabilities: np.ndarray  # p_j(1) given the sampled history
    post_detection_state: np.ndarray | None  # full-layout density matrix right after a click

    @property
    def detected(self) -> bool:
        return bool(self.outcomes.any())

    @property
    def detection_index(self) -> int | None:
        hits = np.flatnonzero(self.outcomes)
        return int(hits[0]) if hits.size else None


def sample_trajectory(
    pulse: PulseSpec,
    gamma_a: float,
    schedule: MeasurementSchedule,
    seed: int,
    setup: ToySetup | None = None,
    multiplier: MultiplierParams | None = None,
) -> ToyTrajectory:
    """One stochastic measurement history with outcomes drawn from the Born rule."""
    setup = setup or toy_setup(pulse, gamma_a, multiplier)
    rng = np.random.default_rng(seed)
    prop = setup.propagator
    model = setup.model
    P1 = setup.detect
    P0 = np.eye(P1.shape[0]) - P1
    obs = model.observable_stack([number(setup.layout, "a"), number(setup.layout, "a_u")])
    X = setup.initial.copy()
    t = schedule.window[0]
    ts, na, nu = [np.array([t])], [], []
    first = np.einsum("qij,ji->q", obs, X)
    na.append(first[:1].real)
    nu.append(first[1:].real)
    outcomes, probs = [], []
    post = None
    for tm in list(schedule.times()) + [schedule.window[1]]:
        if tm > t:
            X, g, vals = prop.run(X, t, tm, obs)
            ts.append(g[1:])
            na.append(vals[1:, 0].real)
            nu.append(vals[1:, 1].real)
        t = tm
        if len(outcomes) == len(schedule.times()):
            break
        p1 = min(max(float(np.einsum("ij,ji->", P1, X).real), 0.0), 1.0)
        probs.append(p1)
        click = rng.random() < p1
        outcomes.append(int(click))
        P = P1 if click else P0
        X = P @ X @ P / (p1 if click else 1 - p1)
        if click and post is None:
            post = model.expand_state(X).dm()
        after = np.einsum("qij,ji->q", obs, X).real
        ts.append(np.array([t]))
        na.append(after[:1])
        nu.append(after[1:])
    return ToyTrajectory(
        times=np.concatenate(ts),
        n_a=np.concatenate(na),
        n_u=np.concatenate(nu),
        measurement_times=schedule.times(),
        outcomes=np.asarray(outcomes, dtype=int),
        probabilities=np.asarray(probs),
        post_detection_state=post,
    )


def preamplified_toy(
    pulse: PulseSpec,
    multiplier: MultiplierParams,
    gamma_a: float,
    schedule: MeasurementSchedule,
) -> float:
    """Detection probability when the pulse passes the multiplier before reaching ``a``."""
    return detection_probability(pulse, gamma_a, schedule, multiplier=multiplier).eta


@dataclass
class EmissionRecord:
    times: np.ndarray
    u_sq: np.ndarray
    n_u: np.ndarray
    n_a: np.ndarray
    flux: np.ndarray  # photon flux leaving the chain

    @property
    def emitted(self) -> float:
        return float(trapezoid(self.flux, self.times))


def emission_bookkeeping(pulse: PulseSpec, gamma_a: float, tail: float = 10.0) -> EmissionRecord:
    """Emitter -> cavity run recording the output flux ``<L^dag L>`` of the chain.

    With ``L = g_u* a_u + sqrt(gamma_a) a`` the flux is
    ``|g_u|^2 n_u + gamma_a n_a + 2 sqrt(gamma_a) Re(g_u <a_u^dag a>)``.
    """
    setup = toy_setup(pulse, gamma_a)
    lay = setup.layout
    obs = setup.model.observable_stack(
        [number(lay, "a_u"), number(lay, "a"), annihilator(lay, "a_u").dag() @ annihilator(lay, "a")]
    )
    lo, hi = default_window(pulse, gamma_a, tail)
    _, grid, vals = setup.propagator.run(setup.initial, lo, hi, obs)
    g = pulse.coupling_g(grid)
    n_u, n_a, coh = vals[:, 0].real, vals[:, 1].real, vals[:, 2]
    flux = np.abs(g) ** 2 * n_u + gamma_a * n_a + 2 * np.sqrt(gamma_a) * (g * coh).real
    return EmissionRecord(grid, np.abs(pulse.amplitude(grid)) ** 2, n_u, n_a, flux)
