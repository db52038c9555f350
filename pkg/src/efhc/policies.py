"""Communication policies: the event-triggered rule and three baselines.

* ``EFHC``: per-device threshold scaled by ``1 / bandwidth``
* ``ZT``: every device broadcasts every iteration
* ``GT``: event-triggered with one global threshold coefficient for everyone
* ``RG``: each device broadcasts independently with probability ``p``
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .mixing import BroadcastFlags
from .protocol import DeviceState, Fleet, ScheduleSpec, ThresholdSpec, trigger_flags

PolicyName = Literal["EFHC", "ZT", "GT", "RG"]
POLICIES: tuple[str, ...] = ("EFHC", "ZT", "GT", "RG")


@dataclass(frozen=True)
class Policy:
    kind: PolicyName
    rho_global: float | None = None
    p: float | None = None

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == "GT" and not (self.rho_global and self.rho_global > 0):
            raise ValueError("GT needs a positive rho_global")
        if self.kind == "RG" and not (self.p is not None and 0 < self.p <= 1):
            raise ValueError("RG probability must lie in (0, 1]")

    @classmethod
    def make(cls, kind: str, m: int, average_bandwidth: float) -> Policy:
        """Policy with the default baseline parameters for an ``m``-device network."""
        if kind == "GT":
            return cls("GT", rho_global=1.0 / average_bandwidth)
        if kind == "RG":
            return cls("RG", p=1.0 / m)
        return cls(kind)


def compute_flags(policy: Policy, states: Fleet | Sequence[DeviceState], k: int,
                  threshold: ThresholdSpec, schedule: ScheduleSpec,
                  rng: np.random.Generator | None = None) -> BroadcastFlags:
    fleet = states if isinstance(states, Fleet) else Fleet.from_states(states)
    m = fleet.m
    if m == 0:
        raise ValueError("no devices")
    if policy.kind == "ZT":
        v = np.ones(m, dtype=bool)
    elif policy.kind == "RG":
        if rng is None:
            raise ValueError("RG needs an rng")
        v = rng.random(m) < policy.p
    else:
        rho = fleet.rho if policy.kind == "EFHC" else np.full(m, policy.rho_global)
        v = trigger_flags(fleet.W, fleet.W_hat, rho, k, threshold, schedule)
    return BroadcastFlags(v)
