"""Invariant suites behind ``efhc verify``.

Each check names the modelling assumption it exercises so a failure report
reads without the source at hand.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import intercom_monitor
from .learning import TaskSpec, full_gradient, local_loss
from .learning.data import Shard
from .mixing import BroadcastFlags, build_transition_matrix, verify_transition
from .topology import (GraphSnapshot, TopologyProcess, generate_geometric_graph, sample_snapshot,
                       verify_B_connectivity)


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}" + (f": {self.detail}"
                                                                  if self.detail else "")


def _random_snapshot(rng: np.random.Generator, m: int) -> GraphSnapshot:
    p = rng.random()
    iu = np.triu_indices(m, 1)
    keep = rng.random(len(iu[0])) < p
    return GraphSnapshot(m, frozenset(zip(iu[0][keep].tolist(), iu[1][keep].tolist())))


def mixing_suite(pairs: int = 1000, seed: int = 0, m_range: tuple[int, int] = (2, 20),
                 builder: Callable = build_transition_matrix) -> list[Check]:
    """Random (snapshot, flags) pairs through the weight rule and the matrix checks."""
    rng = np.random.default_rng(seed)
    worst = {"rows": 0, "cols": 0, "sym": 0, "support": 0, "min": 0}
    for _ in range(pairs):
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        snap = _random_snapshot(rng, m)
        v = rng.random(m) < rng.random()
        forced = frozenset(e for e in snap.edges if rng.random() < 0.05)
        rep = verify_transition(builder(snap, BroadcastFlags(v, forced)), eta=1.0 / m,
                                atol=1e-12)
        worst["rows"] += not rep.row_stochastic
        worst["cols"] += not rep.column_stochastic
        worst["sym"] += not rep.symmetric
        worst["support"] += not rep.support_matches
        worst["min"] += not rep.min_nonzero_ok
    out = f"of {pairs} random matrices"
    return [
        Check("row-stochastic mixing", worst["rows"] == 0, f"{worst['rows']} failures {out}"),
        Check("column-stochastic mixing (average preserving)", worst["cols"] == 0,
              f"{worst['cols']} failures {out}"),
        Check("symmetric mixing", worst["sym"] == 0, f"{worst['sym']} failures {out}"),
        Check("mixing support equals information-flow graph", worst["support"] == 0,
              f"{worst['support']} failures {out}"),
        Check("nonzero weights bounded below by 1/m", worst["min"] == 0,
              f"{worst['min']} failures {out}"),
    ]


def finite_difference_error(task: TaskSpec, w: np.ndarray, shard: Shard, h: float = 1e-6) -> float:
    """Relative error between the analytic mean gradient and central differences."""
    g = full_gradient(task, w, shard, "mean")
    fd = np.empty_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        fd[j] = (local_loss(task, w + e, shard, "mean") - local_loss(task, w - e, shard, "mean")) / (2 * h)
    return float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12))


def gradient_task_zoo(seed: int = 0) -> list[tuple[TaskSpec, Shard]]:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, 5))
    y = rng.integers(0, 3, size=12)
    return [
        (TaskSpec("quadratic", 5, reg=0.1), Shard(X, np.zeros(12))),
        (TaskSpec("hinge", 5, 3, reg=0.01), Shard(X, y)),
        (TaskSpec("logistic", 5, 3, reg=0.01), Shard(X, y)),
    ]


def gradient_suite(points: int = 100, seed: int = 0, tolerance: float = 1e-5) -> list[Check]:
    """Analytic gradients against central differences at random points."""
    rng = np.random.default_rng(seed)
    checks = []
    for task, shard in gradient_task_zoo(seed):
        errs = [finite_difference_error(task, rng.standard_normal(task.n), shard)
                for _ in range(points)]
        worst = max(errs)
        checks.append(Check(f"gradient matches finite differences ({task.kind})",
                            worst <= tolerance, f"max relative error {worst:.2e} over {points} points"))
    return checks


def connectivity_suite(m: int = 10, connectivity: float = 0.4, seeds: int = 20,
                       iterations: int = 200) -> list[Check]:
    """Physical graph connectivity and a bounded intercommunication window under
    always-on broadcasting."""
    bad_static, bad_window = [], []
    for s in range(seeds):
        base = generate_geometric_graph(m, connectivity, s)
        trace = [sample_snapshot(TopologyProcess(base), k) for k in range(iterations)]
        if not verify_B_connectivity(trace, 1):
            bad_static.append(s)
        flaky = TopologyProcess(base, 0.5, seed=s)
        trace = [sample_snapshot(flaky, k) for k in range(iterations)]
        # with edges up half the time, a window of 20 misses every edge of a
        # spanning tree with negligible probability
        if not verify_B_connectivity(trace, 20):
            bad_window.append(s)
    rep = intercom_monitor(np.ones((iterations, m), dtype=bool), B2_budget=1)
    return [
        Check("physical graph connected at every iteration (B1 = 1)", not bad_static,
              f"failing seeds {bad_static}" if bad_static else f"{seeds} graphs"),
        Check("union over B1 iterations connected under random link drops", not bad_window,
              f"failing seeds {bad_window}" if bad_window else f"{seeds} graphs, B1 = 20"),
        Check("bounded intercommunication interval", not rep.violations,
              f"empirical B2 = {rep.B2_empirical}"),
    ]


def run_all(seed: int = 0, builder: Callable = build_transition_matrix) -> list[Check]:
    return (mixing_suite(seed=seed, builder=builder) + gradient_suite(seed=seed)
            + connectivity_suite())
