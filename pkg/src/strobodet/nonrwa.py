"""Lab-frame detector dynamics with the full junction cosine.

Used to quantify what the rotating-wave approximation drops: off-resonant
terms spuriously excite cavity ``a`` while ``E_J`` is on, which the detector
would count as photons. Frequencies are in units of ``omega_a``.

Integration runs in the interaction frame of ``omega_a n_a + omega_b n_b``.
This is exact, leaves the dissipators unchanged, and makes the
junction-off stretches slow, so only the junction-on stretches need steps
that resolve the optical period.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import build_chain
from .evolve import IntegrationError, lindblad_propagate
from .hilbert import Operator, SpaceLayout, annihilator, fock_state, number
from .jpd import JpdParams, StroboSchedule, detector_node

MAX_STEP_PER_PERIOD = 0.005  # lab-frame step bound in units of 2 pi / omega_a


@dataclass(frozen=True)
class LabFrameParams:
    """Detector in the lab frame.

    ``detector`` and ``schedule`` are given in units of ``gamma_a`` as for the
    rotating-frame model; ``gamma_a`` here is in units of ``omega_a`` and
    fixes the conversion.
    """

    gamma_a: float
    omega_b: float = 0.76
    detector: JpdParams = field(default_factory=JpdParams)
    schedule: StroboSchedule = field(default_factory=lambda: StroboSchedule(count=2))
    a_cutoff: int = 4

    def __post_init__(self):
        if not self.gamma_a > 0:
            raise ValueError("gamma_a must be positive")
        if math.isclose(self.omega_b, 1.0):
            raise ValueError("omega_b must differ from omega_a")
        if self.a_cutoff < 2:
            raise ValueError("a cutoff must be >= 2")

    @property
    def omega_a(self) -> float:
        return 1.0

    @property
    def scale(self) -> float:
        """Converts detector rates to units of ``omega_a``."""
        return self.gamma_a / self.detector.gamma_a

    @property
    def gamma_b(self) -> float:
        return self.detector.gamma_b * self.scale

    @property
    def ej_star(self) -> float:
        return self.detector.drive * self.scale / self.detector.beta0

    @property
    def ej(self) -> float:
        d = self.detector
        return self.ej_star * math.exp(0.5 * (d.alpha0**2 + d.beta0**2))

    @property
    def lab_schedule(self) -> StroboSchedule:
        s = self.schedule
        return StroboSchedule(s.rate * self.scale, s.on_time / self.scale, s.count, s.offset / self.scale)

    def layout(self) -> SpaceLayout:
        return SpaceLayout([("a", self.a_cutoff), ("b", self.detector.b_cutoff)])


def phase_trig_ops(alpha0: float, beta0: float, layout: SpaceLayout) -> tuple[Operator, Operator]:
    """``cos(Phi)`` and ``sin(Phi)`` for ``Phi = alpha0 (a + a^dag) + beta0 (b + b^dag)``."""
    a = annihilator(layout, "a")
    b = annihilator(layout, "b")
    phi = (alpha0 * (a + a.dag()) + beta0 * (b + b.dag())).matrix
    lam, vec = np.linalg.eigh(phi)
    cos = (vec * np.cos(lam)) @ vec.conj().T
    sin = (vec * np.sin(lam)) @ vec.conj().T
    return Operator(layout, 0.5 * (cos + cos.conj().T)), Operator(layout, 0.5 * (sin + sin.conj().T))


def _lower(X4: np.ndarray, axis: int, weights: np.ndarray) -> np.ndarray:
    """``L X L^dag`` for ``L`` the (unit) lowering operator of one subsystem, X reshaped per subsystem."""
    out = np.zeros_like(X4)
    w = np.sqrt(weights)
    n = len(w)
    if axis == 0:
        out[:n, :, :n, :] = w[:, None, None, None] * X4[1:, :, 1:, :] * w[None, None, :, None]
    else:
        out[:, :n, :, :n] = w[None, :, None, None] * X4[:, 1:, :, 1:] * w[None, None, None, :]
    return out


@dataclass
class RwaCheck:
    times: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    n_a_max: float
    gamma_dark_rot: float  # in units of gamma_a
    dt: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "n_a", "n_b"])
            for row in zip(self.times, self.n_a, self.n_b):
                w.writerow([f"{v:.9g}" for v in row])


class _LabModel:
    def __init__(self, params: LabFrameParams):
        self.p = params
        layout = params.layout()
        self.shape = (layout.cutoff("a"), layout.cutoff("b"))
        ca, cb = self.shape
        na = np.repeat(np.arange(ca), cb).astype(float)
        nb = np.tile(np.arange(cb), ca).astype(float)
        self.na, self.nb = na, nb
        energy = params.omega_a * na + params.omega_b * nb
        cos, sin = phase_trig_ops(params.detector.alpha0, params.detector.beta0, layout)
        # cos(w t + Phi) = Re[e^{i w t} e^{i Phi}]; in the interaction frame element
        # (i, j) of e^{i Phi} acquires e^{i (E_i - E_j) t}
        self.expphi = cos.matrix + 1j * sin.matrix
        self.freq = energy[:, None] - energy[None, :] + params.omega_b
        self.gamma = (params.gamma_a, params.gamma_b)
        self.decay_diag = params.gamma_a * na + params.gamma_b * nb  # sum L^dag L

    def hamiltonian(self, t: float, ej: float) -> np.ndarray:
        A = self.expphi * np.exp(1j * self.freq * t)
        return -0.5 * ej * (A + A.conj().T)

    def rhs(self, X: np.ndarray, H: np.ndarray | None) -> np.ndarray:
        d = X.shape[0]
        if H is None:
            Y = -0.5 * self.decay_diag[:, None] * X
        else:
            Y = (-1j * H) @ X - 0.5 * self.decay_diag[:, None] * X
        out = Y + Y.conj().T
        X4 = X.reshape(*self.shape, *self.shape)
        ca, cb = self.shape
        out += (
            self.gamma[0] * _lower(X4, 0, np.arange(1, ca, dtype=float))
            + self.gamma[1] * _lower(X4, 1, np.arange(1, cb, dtype=float))
        ).reshape(d, d)
        return out


def validity_check(params: LabFrameParams, dt: float | None = None, record_every: int = 20) -> RwaCheck:
    """Lindblad evolution under the full cosine from vacuum over the schedule.

    ``dt`` (lab-frame step while ``E_J`` is on) defaults to and may not exceed
    ``0.005 * 2 pi / omega_a``.
    """
    bound = MAX_STEP_PER_PERIOD * 2 * np.pi / params.omega_a
    dt = bound if dt is None else dt
    if dt > bound * (1 + 1e-12):
        raise IntegrationError(f"lab-frame step {dt:.3g} exceeds the bound {bound:.3g}")
    model = _LabModel(params)
    sched = params.lab_schedule
    ej = params.ej
    d = len(model.na)
    X = np.zeros((d, d), dtype=complex)
    X[0, 0] = 1.0
    slow_dt = 0.01 / (params.gamma_b * params.detector.b_cutoff)
    tail = 10.0 / params.gamma_b
    edges = []
    for s in sched.starts:
        edges += [(s, s + sched.on_time, True), (s + sched.on_time, min(s + sched.period, sched.end), False)]
    edges[-1] = (edges[-1][0], min(edges[-1][1], edges[-1][0] + tail), False)

    times, n_a, n_b = [sched.offset], [0.0], [0.0]
    n_a_max = 0.0
    for t0, t1, on in edges:
        step = dt if on else slow_dt
        n = max(1, int(math.ceil((t1 - t0) / step - 1e-9)))
        h = (t1 - t0) / n
        for k in range(n):
            t = t0 + k * h
            if on:
                H0, Hm, H1 = (model.hamiltonian(t + c * h, ej) for c in (0.0, 0.5, 1.0))
            else:
                H0 = Hm = H1 = None
            k1 = model.rhs(X, H0)
            k2 = model.rhs(X + 0.5 * h * k1, Hm)
            k3 = model.rhs(X + 0.5 * h * k2, Hm)
            k4 = model.rhs(X + h * k3, H1)
            X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            X = 0.5 * (X + X.conj().T)
            pops = X.diagonal().real
            na = float(pops @ model.na)
            n_a_max = max(n_a_max, na)
            if (k + 1) % record_every == 0 or k == n - 1:
                times.append(t + h)
                n_a.append(na)
                n_b.append(float(pops @ model.nb))
        drift = abs(np.trace(X).real - 1)
        if not np.isfinite(drift) or drift > 1e-4:
            raise IntegrationError(f"trace drift {drift:.3g} at t={t1:.6g}; reduce dt")
    return RwaCheck(
        times=np.asarray(times),
        n_a=np.asarray(n_a),
        n_b=np.asarray(n_b),
        n_a_max=n_a_max,
        gamma_dark_rot=n_a_max * params.schedule.rate,
        dt=dt,
    )


def rwa_reference(params: LabFrameParams) -> float:
    """Maximum ``<n_a>`` of the rotating-wave model over the same schedule, no input."""
    det = params.detector
    sched = params.schedule
    layout = params.layout()
    system = build_chain([detector_node(det, layout, sched)])
    res = lindblad_propagate(
        system,
        fock_state(layout),
        (sched.offset, sched.end),
        observables={"n_a": number(layout, "a")},
        record_times=np.linspace(sched.offset, sched.end, 401),
    )
    return float(np.max(res.expectations["n_a"].real))
