"""Experiment configuration: a JSON document validated by pydantic.

Every field has a default, so ``{}`` is a complete config describing the
default scenario (10 devices, radius-0.4 geometric graph, one-vs-all hinge
classifier on synthetic 10-class data, one label per device, H = 0.4,
alpha(k) = 1/sqrt(1+k), gamma = alpha, q = 2, r = 50).
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .protocol import ScheduleSpec, StepSizeWarning, ThresholdSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TopologyConfig(_Strict):
    connectivity: float = Field(0.4, gt=0)
    availability_prob: float = Field(1.0, gt=0, le=1)
    max_retries: int = Field(1000, ge=1)


class TaskConfig(_Strict):
    kind: Literal["quadratic", "hinge", "logistic"] = "hinge"
    dataset: Literal["synthetic", "idx"] = "synthetic"
    classes: int = Field(10, ge=2)
    n_features: int = Field(64, ge=1)
    per_class: int = Field(100, ge=1)
    test_per_class: int = Field(50, ge=1)
    spread: float = Field(0.55, gt=0)
    reg: float = Field(1e-4, ge=0)
    labels_per_device: int = Field(1, ge=1)
    batch_size: int = Field(16, ge=1)
    # quadratic: explicit centers, one per device, or random ones of this scale
    centers: Optional[list[list[float]]] = None
    center_scale: float = Field(1.0, gt=0)
    # quadratic: each device holds this many points recentred exactly on its center
    points_per_device: int = Field(1, ge=1)
    point_spread: float = Field(0.0, ge=0)
    idx_train_images: Optional[str] = None
    idx_train_labels: Optional[str] = None
    idx_test_images: Optional[str] = None
    idx_test_labels: Optional[str] = None

    @model_validator(mode="after")
    def _idx_paths(self):
        if self.dataset == "idx" and not (self.idx_train_images and self.idx_train_labels
                                          and self.idx_test_images and self.idx_test_labels):
            raise ValueError("dataset 'idx' needs all four idx_* paths")
        return self


class ScheduleConfig(_Strict):
    a: float = Field(1.0, gt=0)
    b: float = Field(1.0, ge=1)
    c: float = Field(0.5, ge=0.5, le=1)
    omega: float = Field(1.0, gt=0)
    gamma_mode: Literal["scaled", "constant"] = "scaled"

    def spec(self) -> ScheduleSpec:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            return ScheduleSpec(self.a, self.b, self.c, self.omega, self.gamma_mode)


class ThresholdConfig(_Strict):
    # r = None derives r from the guideline using K_agg and L_inf
    r: Optional[float] = Field(50.0, gt=0)
    q: float = Field(2.0, ge=1)
    K_agg: float = Field(10.0, gt=0)
    L_inf: Optional[float] = Field(None, gt=0)
    linf_samples: int = Field(200, ge=1)
    linf_radius: float = Field(1.0, gt=0)


class BandwidthConfig(_Strict):
    H: float = Field(0.4, ge=0, lt=1)
    average: float = Field(5000.0, gt=0)
    weak: float = Field(1000.0, gt=0)


class SeedConfig(_Strict):
    topology: int = 0
    data: int = 0
    policy: int = 0
    sgd: int = 0
    init: int = 0
    bandwidth: int = 0

    def shifted(self, offset: int) -> SeedConfig:
        return SeedConfig(**{k: v + offset for k, v in self.model_dump().items()})


class ExperimentConfig(_Strict):
    m: int = Field(10, ge=1)
    total_iterations: int = Field(2000, ge=0)
    cadence: int = Field(10, ge=1)
    policy: Literal["EFHC", "ZT", "GT", "RG"] = "EFHC"
    init: Literal["zero", "random"] = "zero"
    init_scale: float = Field(1.0, gt=0)
    # diagnostic mode: skip local SGD so only consensus acts
    consensus_only: bool = False
    B2_budget: Optional[int] = Field(None, ge=1)
    enforce_B2: bool = False
    check_transitions: bool = False
    topology: TopologyConfig = TopologyConfig()
    task: TaskConfig = TaskConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    threshold: ThresholdConfig = ThresholdConfig()
    bandwidth: BandwidthConfig = BandwidthConfig()
    seeds: SeedConfig = SeedConfig()
    monte_carlo_runs: int = Field(5, ge=1)
    connectivity_grid: list[float] = [0.3, 0.5, 0.8]
    sweep_policies: list[Literal["EFHC", "ZT", "GT", "RG"]] = ["EFHC", "ZT", "GT", "RG"]
    # accuracy is read off at this cumulative transmission score in sweeps
    transmission_budget: Optional[float] = Field(None, gt=0)

    @field_validator("connectivity_grid")
    @classmethod
    def _grid(cls, v):
        if not v or any(c <= 0 for c in v):
            raise ValueError("connectivity grid must be non-empty and positive")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if self.enforce_B2 and self.B2_budget is None:
            raise ValueError("enforce_B2 requires B2_budget")
        if self.task.centers is not None and len(self.task.centers) != self.m:
            raise ValueError("task.centers needs one center per device")
        return self

    def threshold_spec(self, r: float) -> ThresholdSpec:
        return ThresholdSpec(r, self.threshold.q)

    def with_updates(self, **updates) -> ExperimentConfig:
        """Copy with dotted-path overrides, e.g. ``{"topology.connectivity": 0.5}``; revalidated."""
        data = self.model_dump()
        for path, value in updates.items():
            node = data
            *parents, leaf = path.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise KeyError(path)
            node[leaf] = value
        return ExperimentConfig.model_validate(data)


class ConfigError(ValueError):
    pass


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)
