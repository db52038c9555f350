"""Per-device event-triggered protocol: broadcast trigger, aggregation, SGD and schedules."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from .topology import _norm_edge


class StepSizeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScheduleSpec:
    """Step size ``alpha(k) = a / (b + k)^c`` and threshold decay ``gamma(k) = omega * alpha(k)``.

    ``gamma_mode="constant"`` freezes gamma at ``gamma(0)``; it exists to
    demonstrate what goes wrong when gamma does not decay with alpha.
    """

    a: float = 1.0
    b: float = 1.0
    c: float = 0.5
    omega: float = 1.0
    gamma_mode: Literal["scaled", "constant"] = "scaled"

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.b < 1:
            raise ValueError("b must be >= 1")
        if not 0.5 <= self.c <= 1.0:
            raise ValueError("c must lie in [0.5, 1]")
        if self.c == 0.5:
            # sum of alpha^2 diverges (logarithmically) at exactly c = 0.5
            warnings.warn("c = 0.5 steps are not square-summable", StepSizeWarning, stacklevel=3)
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    def alpha(self, k: int) -> float:
        return self.a / (self.b + k) ** self.c

    def gamma(self, k: int) -> float:
        if self.gamma_mode == "constant":
            k = 0
        return self.omega * self.alpha(k)


@dataclass(frozen=True)
class ThresholdSpec:
    r: float = 50.0
    q: float = 2.0

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.q < 1:
            raise ValueError("q must be >= 1")


@dataclass(frozen=True)
class DeviceState:
    w: np.ndarray
    w_hat: np.ndarray
    bandwidth: float
    neighbors: frozenset[int] = frozenset()
    rho: float | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w_hat = np.array(self.w_hat, dtype=float)
        if w.shape != w_hat.shape or w.ndim != 1:
            raise ValueError("w and w_hat must be vectors of equal length")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w_hat", w_hat)
        object.__setattr__(self, "neighbors", frozenset(self.neighbors))
        if self.rho is None:
            object.__setattr__(self, "rho", 1.0 / self.bandwidth)
        elif self.rho <= 0:
            raise ValueError("rho must be positive")

    @classmethod
    def initial(cls, w0, bandwidth: float, neighbors: Iterable[int] = ()) -> DeviceState:
        w0 = np.array(w0, dtype=float)
        return cls(w0, w0.copy(), bandwidth, frozenset(neighbors))

    @property
    def n(self) -> int:
        return len(self.w)

    @property
    def degree(self) -> int:
        return len(self.neighbors)


@dataclass(frozen=True)
class Message:
    sender: int | None
    w: np.ndarray
    degree: int


def normalized_error(e: np.ndarray, q: float) -> np.ndarray | float:
    """``(1/n)^(1/q) * ||e||_q`` along the last axis."""
    e = np.asarray(e, dtype=float)
    n = e.shape[-1]
    a = np.abs(e)
    top = a.max(axis=-1)
    if math.isinf(q):
        return top
    # scale by the max entry so tiny or huge errors do not under/overflow in |e|^q
    scale = np.where(top > 0, top, 1.0)
    return top * (np.sum((a / scale[..., None]) ** q, axis=-1) / n) ** (1.0 / q)


def threshold_value(rho, k: int, threshold: ThresholdSpec, schedule: ScheduleSpec):
    return threshold.r * np.asarray(rho) * schedule.gamma(k)


def broadcast_triggered(state: DeviceState, k: int, threshold: ThresholdSpec,
                        schedule: ScheduleSpec) -> bool:
    lhs = normalized_error(state.w - state.w_hat, threshold.q)
    return bool(lhs >= threshold_value(state.rho, k, threshold, schedule))


def trigger_flags(W: np.ndarray, W_hat: np.ndarray, rho: np.ndarray, k: int,
                  threshold: ThresholdSpec, schedule: ScheduleSpec) -> np.ndarray:
    """Row-wise :func:`broadcast_triggered` over stacked device parameters."""
    lhs = normalized_error(W - W_hat, threshold.q)
    return lhs >= threshold_value(rho, k, threshold, schedule)


def apply_broadcast(state: DeviceState, sender: int | None = None) -> tuple[DeviceState, Message]:
    """Record the current (pre-aggregation, pre-SGD) model as last broadcast."""
    msg = Message(sender, state.w.copy(), state.degree)
    return replace(state, w_hat=state.w.copy()), msg


def handle_neighbor_change(state: DeviceState, joined: Iterable[int], left: Iterable[int],
                           me: int | None = None) -> tuple[DeviceState, list]:
    """Apply link joins/leaves; each join is returned as a forced exchange.

    Forced exchanges are edges ``(me, j)`` when ``me`` is given, else bare ``j``.
    """
    joined, left = list(joined), list(left)
    neighbors = set(state.neighbors)
    neighbors.update(joined)
    # a join followed by a leave in the same delta leaves the link gone
    neighbors.difference_update(left)
    forced = [_norm_edge(me, j) if me is not None else j for j in joined]
    return replace(state, neighbors=frozenset(neighbors)), forced


def aggregate(state: DeviceState, received: Sequence[tuple[int, np.ndarray]],
              betas: Sequence[float]) -> DeviceState:
    if len(received) != len(betas):
        raise ValueError("one weight per received model required")
    w = state.w.copy()
    delta = np.zeros_like(w)
    for (_, w_j), beta in zip(received, betas):
        w_j = np.asarray(w_j, dtype=float)
        if w_j.shape != w.shape:
            raise ValueError("received model has wrong dimension")
        delta += beta * (w_j - state.w)
    return replace(state, w=w + delta)


def sgd_step(state: DeviceState, gradient: np.ndarray, k: int,
             schedule: ScheduleSpec) -> DeviceState:
    return replace(state, w=state.w - schedule.alpha(k) * np.asarray(gradient, dtype=float))


def gamma(k: int, schedule: ScheduleSpec) -> float:
    return schedule.gamma(k)


def r_guideline(alpha0: float, gamma0: float, inv_rho_mean: float, K_agg: float,
                L_inf: float) -> float:
    """Threshold scale that lets roughly ``K_agg`` maximal SGD steps accumulate
    before a device with average resources broadcasts."""
    for name, v in (("alpha0", alpha0), ("gamma0", gamma0), ("inv_rho_mean", inv_rho_mean),
                    ("K_agg", K_agg), ("L_inf", L_inf)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    return alpha0 / gamma0 * inv_rho_mean * K_agg * L_inf


@dataclass
class Fleet:
    """Stacked parameters of all devices; row ``i`` belongs to device ``i``."""

    W: np.ndarray
    W_hat: np.ndarray
    bandwidth: np.ndarray
    rho: np.ndarray = field(default=None)

    def __post_init__(self):
        self.W = np.array(self.W, dtype=float)
        self.W_hat = np.array(self.W_hat, dtype=float)
        self.bandwidth = np.array(self.bandwidth, dtype=float)
        if self.rho is None:
            self.rho = 1.0 / self.bandwidth
        if self.W.shape != self.W_hat.shape or len(self.bandwidth) != len(self.W):
            raise ValueError("inconsistent fleet shapes")

    @classmethod
    def from_states(cls, states: Sequence[DeviceState]) -> Fleet:
        return cls(np.stack([s.w for s in states]), np.stack([s.w_hat for s in states]),
                   np.array([s.bandwidth for s in states]), np.array([s.rho for s in states]))

    @property
    def m(self) -> int:
        return len(self.W)

    def device(self, i: int, neighbors: Iterable[int] = ()) -> DeviceState:
        return DeviceState(self.W[i], self.W_hat[i], float(self.bandwidth[i]),
                           frozenset(neighbors), float(self.rho[i]))
