"""Experiment configuration files.

A config is a single JSON object whose ``experiment`` key selects the
subcommand. Unknown keys are rejected. Rates are in units of the declared
``reference_rate`` (``gamma_a`` of the detector cavity, or ``gamma_ad`` when a
preamplifier is present).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator

from .jpd import JpdParams, StroboSchedule
from .multiplier import MultiplierParams
from .nonrwa import LabFrameParams
from .pulses import PulseSpec


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PulseBlock(_Block):
    shape: Literal["gaussian", "decaying_exp", "rising_exp"] = "gaussian"
    width: float = Field(0.1, gt=0)
    t0: float = 0.0
    detuning: float = 0.0

    def build(self) -> PulseSpec:
        return PulseSpec(self.shape, self.width, self.t0, self.detuning)


class DetectorBlock(_Block):
    gamma_a: float = Field(1.0, ge=0)
    gamma_b: float = Field(10.0, gt=0)
    alpha0: float = 1.0
    beta0: float = 0.3
    beta: float = Field(1.6, gt=0)
    delta_a: float = 0.0
    delta_b: float = 0.0
    bessel_form: Literal["truncated", "exact"] = "truncated"

    @model_validator(mode="after")
    def _physical(self):
        self.build()
        return self

    def build(self) -> JpdParams:
        return JpdParams(**self.model_dump())


class ScheduleBlock(_Block):
    rate: float = Field(0.4, gt=0)
    on_time: float = Field(0.6, gt=0)
    count: int = Field(31, ge=1)
    offset: float = 0.0

    @model_validator(mode="after")
    def _consistent(self):
        self.build()
        return self

    def build(self) -> StroboSchedule:
        return StroboSchedule(**self.model_dump())


class MultiplierBlock(_Block):
    n: int = Field(2, ge=1, le=3)
    gamma_am: float = Field(0.5, gt=0)
    gamma_bm: float = Field(0.5, gt=0)
    alpha0: float = 0.1
    beta0: float = 0.1
    drive: Optional[float] = None

    def build(self) -> MultiplierParams:
        return MultiplierParams(**self.model_dump())


class _Experiment(_Block):
    base_seed: int = 0
    workers: int = Field(1, ge=1)
    out_dir: str = "out"
    reference_rate: Literal["gamma_a", "gamma_ad"] = "gamma_a"


class ToySweepConfig(_Experiment):
    experiment: Literal["toy-sweep"] = "toy-sweep"
    gamma_a: float = Field(1.0, gt=0)
    pulse: PulseBlock = PulseBlock()
    rates: list[float] = Field(default_factory=lambda: [round(0.05 * k, 2) for k in range(1, 21)])
    n_offsets: int = Field(16, ge=1)
    multiplier: Optional[MultiplierBlock] = None

    @field_validator("rates")
    @classmethod
    def _sorted(cls, v):
        if not v or any(r <= 0 for r in v) or sorted(v) != v:
            raise ValueError("rates must be a non-empty, positive, sorted list")
        return v


class ToyTrajectoryConfig(_Experiment):
    experiment: Literal["toy-trajectory"] = "toy-trajectory"
    gamma_a: float = Field(1.0, gt=0)
    pulse: PulseBlock = PulseBlock()
    rate: float = Field(0.2, gt=0)
    offset: float = Field(0.0, ge=0)
    n_trajectories: int = Field(2, ge=1)


class PulseCheckConfig(_Experiment):
    experiment: Literal["pulse-check"] = "pulse-check"
    gamma_a: float = Field(1.0, gt=0)
    pulse: PulseBlock = PulseBlock(width=1.0)


class JpdTrajectoryConfig(_Experiment):
    experiment: Literal["jpd-trajectory"] = "jpd-trajectory"
    detector: DetectorBlock = DetectorBlock()
    schedule: ScheduleBlock = ScheduleBlock()
    pulse: Optional[PulseBlock] = PulseBlock(t0=40.0)


class JpdRocConfig(_Experiment):
    experiment: Literal["jpd-roc"] = "jpd-roc"
    detector: DetectorBlock = DetectorBlock()
    schedule: ScheduleBlock = ScheduleBlock()
    pulse: PulseBlock = PulseBlock(t0=40.0)
    thresholds: list[float] = Field(default_factory=lambda: [round(2.7 + 0.1 * k, 1) for k in range(44)])
    n_trajectories: int = Field(500, ge=1)
    n_measurements: int = Field(100_000, ge=1)


class MultiplierModesConfig(_Experiment):
    experiment: Literal["multiplier-modes"] = "multiplier-modes"
    reference_rate: Literal["gamma_a", "gamma_ad"] = "gamma_ad"
    multiplier: MultiplierBlock = MultiplierBlock()
    pulse: PulseBlock = PulseBlock(width=0.05)
    n_grid: int = Field(200, ge=8)
    n_modes: int = Field(3, ge=1)


class CascadeRocConfig(_Experiment):
    experiment: Literal["cascade-roc"] = "cascade-roc"
    reference_rate: Literal["gamma_a", "gamma_ad"] = "gamma_ad"
    multiplier: MultiplierBlock = MultiplierBlock()
    detector: DetectorBlock = DetectorBlock()
    schedule: ScheduleBlock = ScheduleBlock(count=62)
    pulse: PulseBlock = PulseBlock(width=0.05, t0=80.0)
    thresholds: list[float] = Field(default_factory=lambda: [round(2.7 + 0.1 * k, 1) for k in range(44)])
    n_trajectories: int = Field(500, ge=1)
    n_measurements: int = Field(100_000, ge=1)


class RwaCheckConfig(_Experiment):
    experiment: Literal["rwa-check"] = "rwa-check"
    gamma_a: list[float] = Field(default_factory=lambda: [1e-4, 1e-3])
    omega_b: float = 0.76
    detector: DetectorBlock = DetectorBlock()
    schedule: ScheduleBlock = ScheduleBlock(count=2)
    a_cutoff: int = Field(4, ge=2)

    def build(self, gamma_a: float) -> LabFrameParams:
        return LabFrameParams(gamma_a, self.omega_b, self.detector.build(), self.schedule.build(), self.a_cutoff)


ExperimentConfig = Annotated[
    Union[
        ToySweepConfig,
        ToyTrajectoryConfig,
        PulseCheckConfig,
        JpdTrajectoryConfig,
        JpdRocConfig,
        MultiplierModesConfig,
        CascadeRocConfig,
        RwaCheckConfig,
    ],
    Field(discriminator="experiment"),
]

_adapter = TypeAdapter(ExperimentConfig)

EXPERIMENTS = {
    cls.model_fields["experiment"].default: cls
    for cls in (
        ToySweepConfig,
        ToyTrajectoryConfig,
        PulseCheckConfig,
        JpdTrajectoryConfig,
        JpdRocConfig,
        MultiplierModesConfig,
        CascadeRocConfig,
        RwaCheckConfig,
    )
}


def parse_config(data: dict):
    """Validate a config mapping; a run manifest is accepted and its ``config`` reused."""
    if isinstance(data, dict) and "manifest_version" in data:
        data = data["config"]
    return _adapter.validate_python(data)


def load_config(path: str | Path):
    with open(path) as fh:
        return parse_config(json.load(fh))


def default_config(experiment: str):
    if experiment not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {experiment!r}")
    return EXPERIMENTS[experiment]()
