"""Simulation engine: builds a world from a config, steps it, and collects metrics.

One iteration runs the four protocol events in order: link changes (new links
force an exchange), broadcast decisions, simultaneous Metropolis aggregation
over the pre-step parameters, and a local SGD step evaluated at the pre-step
parameters. Stacked over devices this is ``W <- P W - alpha G``.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .learning import (Shard, TaskSpec, accuracy, estimate_Linf, global_loss, load_idx_dataset,
                       make_synthetic_classification, partition_noniid, stochastic_gradient)
from .mixing import BroadcastFlags, MixingMatrix, build_transition_matrix, link_indicators, \
    verify_transition
from .policies import Policy, compute_flags
from .protocol import Fleet, ThresholdSpec, r_guideline
from .topology import GraphSnapshot, TopologyProcess, generate_geometric_graph, sample_snapshot

log = logging.getLogger(__name__)

CSV_COLUMNS = ("k", "mean_accuracy", "global_loss", "consensus_max", "consensus_mean",
               "score_iter", "score_cum", "n_broadcasts")


def assign_bandwidths(m: int, H: float, average_bw: float = 5000.0, weak_bw: float = 1000.0,
                      seed: int = 0) -> np.ndarray:
    """``floor(H*m)`` weak devices at ``weak_bw``; the rest share the bandwidth
    that keeps the network mean at ``average_bw``."""
    if not 0 <= H < 1:
        raise ValueError("H must lie in [0, 1)")
    n_weak = int(math.floor(H * m + 1e-9))
    if not math.isclose(H * m, n_weak, abs_tol=1e-9):
        warnings.warn(f"H*m = {H * m:g} is not an integer; mean bandwidth will differ from "
                      f"{average_bw:g}")
    strong = (average_bw - weak_bw * H) / (1 - H)
    if strong <= 0:
        raise ValueError("weak bandwidth too large for the requested average")
    bw = np.full(m, strong)
    bw[np.random.default_rng(seed).permutation(m)[:n_weak]] = weak_bw
    return bw


def resource_score(flags, snapshot: GraphSnapshot, rho: np.ndarray, n: int) -> float:
    """Mean over devices of (fraction of own links used) * rho_i * n.

    ``flags`` is either :class:`BroadcastFlags` or an already realized boolean
    link matrix. Isolated devices contribute zero.
    """
    links = link_indicators(snapshot, flags) if isinstance(flags, BroadcastFlags) else flags
    d = snapshot.degrees
    used = links.sum(axis=1)
    util = np.divide(used, d, out=np.zeros(len(d)), where=d > 0)
    return float(np.mean(util * np.asarray(rho) * n))


def consensus_error(W: np.ndarray) -> tuple[float, float]:
    dev = np.linalg.norm(W - W.mean(axis=0), axis=1)
    return float(dev.max()), float(dev.mean())


@dataclass
class IntercomReport:
    intervals: list[np.ndarray]
    max_gap: np.ndarray
    B2_empirical: int
    B_bound: int
    violations: list[int]


def event_intervals(column: np.ndarray) -> np.ndarray:
    """Gaps between consecutive iterations where ``column`` is set."""
    return np.diff(np.flatnonzero(column))


def intercom_monitor(trace: np.ndarray, B2_budget: int | None = None,
                     B1: int = 1) -> IntercomReport:
    """Per-device inter-broadcast gaps over a ``T x m`` flag trace.

    A device's max gap is the smallest window length in which it always
    fires (capped at ``T``; a device that never fires gets ``T`` and is
    always flagged). The implied information-flow connectivity window is
    ``(l + 2) * B1`` with ``l * B1 < B2 <= (l + 1) * B1``.
    """
    trace = np.asarray(trace, dtype=bool)
    T, m = trace.shape
    intervals, max_gap, violations = [], np.zeros(m, dtype=int), []
    for i in range(m):
        pos = np.flatnonzero(trace[:, i])
        intervals.append(np.diff(pos))
        if pos.size == 0:
            max_gap[i] = T
            violations.append(i)
            continue
        zero_runs = np.diff(np.concatenate(([-1], pos, [T]))) - 1
        max_gap[i] = min(int(zero_runs.max()) + 1, T)
        if B2_budget is not None and max_gap[i] > B2_budget:
            violations.append(i)
    B2 = int(max_gap.max()) if m else 0
    l = math.ceil(B2 / B1) - 1
    return IntercomReport(intervals, max_gap, B2, (l + 2) * B1, violations)


def segment_intervals(aggregations: np.ndarray, segments: int = 4) -> np.ndarray:
    """Mean inter-aggregation interval in each of ``segments`` equal time slices.

    Measured as device-iterations per aggregation event inside the slice, so a
    slice with no aggregation at all reports ``inf``.
    """
    agg = np.asarray(aggregations, dtype=bool)
    out = np.empty(segments)
    for j, part in enumerate(np.array_split(agg, segments)):
        events = part.sum()
        out[j] = part.size / events if events else math.inf
    return out


@dataclass(frozen=True)
class MetricsRecord:
    k: int
    mean_accuracy: float
    global_loss: float
    consensus_max: float
    consensus_mean: float
    score_iter: float
    score_cum: float
    n_broadcasts: int
    flags: tuple[bool, ...] = ()
    mean_interval: tuple[float, ...] = ()
    max_interval: tuple[int, ...] = ()

    def csv_row(self) -> list:
        return [self.k, self.mean_accuracy, self.global_loss, self.consensus_max,
                self.consensus_mean, self.score_iter, self.score_cum, self.n_broadcasts]


@dataclass
class StepInfo:
    k: int
    snapshot: GraphSnapshot
    flags: BroadcastFlags
    mixing: MixingMatrix
    gradients: np.ndarray
    alpha: float
    score: float
    W_before: np.ndarray
    W_after: np.ndarray


@dataclass
class World:
    task: TaskSpec
    shards: list[Shard]
    test: Shard | None
    process: TopologyProcess
    bandwidths: np.ndarray
    r: float
    L_inf: float | None = None


def _quadratic_data(config: ExperimentConfig) -> tuple[TaskSpec, list[Shard], None]:
    tc = config.task
    if tc.centers is not None:
        centers = np.array(tc.centers, dtype=float)
    else:
        rng = np.random.default_rng(config.seeds.data)
        centers = tc.center_scale * rng.uniform(-1, 1, size=(config.m, tc.n_features))
    task = TaskSpec("quadratic", centers.shape[1], reg=tc.reg)
    k = tc.points_per_device
    if k == 1 or tc.point_spread == 0:
        return task, [Shard(np.repeat(c[None, :], k, axis=0), np.zeros(k)) for c in centers], None
    rng = np.random.default_rng((config.seeds.data, 1))
    shards = []
    for c in centers:
        noise = tc.point_spread * rng.standard_normal((k, len(c)))
        shards.append(Shard(c + noise - noise.mean(axis=0), np.zeros(k)))
    return task, shards, None


def build_world(config: ExperimentConfig) -> World:
    tc = config.task
    if tc.kind == "quadratic":
        task, shards, test = _quadratic_data(config)
    else:
        if tc.dataset == "idx":
            train = load_idx_dataset(tc.idx_train_images, tc.idx_train_labels)
            test = load_idx_dataset(tc.idx_test_images, tc.idx_test_labels)
        else:
            train, test = make_synthetic_classification(tc.classes, tc.n_features, tc.per_class,
                                                        tc.spread, config.seeds.data,
                                                        tc.test_per_class)
        classes = int(max(train.y.max(), test.y.max())) + 1
        task = TaskSpec(tc.kind, train.n_features, classes, tc.reg)
        shards = partition_noniid(train, config.m, tc.labels_per_device, config.seeds.data)

    if config.m == 1:
        base = GraphSnapshot(1, frozenset())
    else:
        base = generate_geometric_graph(config.m, config.topology.connectivity,
                                        config.seeds.topology, config.topology.max_retries)
    process = TopologyProcess(base, config.topology.availability_prob, config.seeds.topology)
    bw = config.bandwidth
    bandwidths = assign_bandwidths(config.m, bw.H, bw.average, bw.weak, config.seeds.bandwidth)

    th = config.threshold
    L_inf = th.L_inf
    if th.r is not None:
        r = th.r
    else:
        if L_inf is None:
            L_inf = estimate_Linf(task, shards, th.linf_samples, config.seeds.data,
                                  radius=th.linf_radius, batch_size=tc.batch_size,
                                  center=initial_parameters(config, task.n).mean(axis=0)).L_inf
        sched = config.schedule.spec()
        r = r_guideline(sched.alpha(0), sched.gamma(0), bw.average, th.K_agg, L_inf)
    return World(task, shards, test, process, bandwidths, r, L_inf)


def initial_parameters(config: ExperimentConfig, n: int) -> np.ndarray:
    if config.init == "zero":
        return np.zeros((config.m, n))
    rng = np.random.default_rng(config.seeds.init)
    return config.init_scale * rng.standard_normal((config.m, n))


class Simulation:
    """A single deterministic run. Call :meth:`step` repeatedly or use :func:`run_experiment`."""

    def __init__(self, config: ExperimentConfig, world: World | None = None,
                 W0: np.ndarray | None = None):
        self.config = config
        self.world = world if world is not None else build_world(config)
        self.task = self.world.task
        m, n = config.m, self.task.n
        W0 = initial_parameters(config, n) if W0 is None else np.array(W0, dtype=float)
        if W0.shape != (m, n):
            raise ValueError(f"initial parameters must have shape ({m}, {n})")
        self.fleet = Fleet(W0, W0.copy(), self.world.bandwidths)
        self.schedule = config.schedule.spec()
        self.threshold: ThresholdSpec = config.threshold_spec(self.world.r)
        self.policy = Policy.make(config.policy, m, config.bandwidth.average)
        self.policy_rng = np.random.default_rng(config.seeds.policy)
        self.sgd_rng = np.random.default_rng(config.seeds.sgd)
        self.k = 0
        self.score_cum = 0.0
        self.prev_adj: np.ndarray | None = None
        self.since_broadcast = np.zeros(m, dtype=int)
        self.last_agg = np.full(m, -1)
        self.n_intervals = np.zeros(m, dtype=int)
        self.sum_intervals = np.zeros(m)
        self.max_intervals = np.zeros(m, dtype=int)
        self.broadcast_trace: list[np.ndarray] = []
        self.aggregation_trace: list[np.ndarray] = []
        self._last: StepInfo | None = None

    @property
    def W(self) -> np.ndarray:
        return self.fleet.W

    @property
    def w_bar(self) -> np.ndarray:
        return self.fleet.W.mean(axis=0)

    def gradients(self, W: np.ndarray) -> np.ndarray:
        if self.config.consensus_only:
            return np.zeros_like(W)
        bs = self.config.task.batch_size
        return np.stack([
            stochastic_gradient(self.task, W[i], shard, min(bs, len(shard)), self.sgd_rng)
            for i, shard in enumerate(self.world.shards)])

    def step(self) -> StepInfo:
        k = self.k
        fleet = self.fleet
        # Event 1: link changes; newly formed links exchange regardless of triggers
        snapshot = sample_snapshot(self.world.process, k)
        adj = snapshot.adjacency
        if self.prev_adj is None:
            forced = frozenset()
        else:
            new = np.triu(adj & ~self.prev_adj)
            forced = frozenset(zip(*(a.tolist() for a in np.nonzero(new))))
        self.prev_adj = adj

        # Event 2: broadcast decisions on the pre-step models
        v = compute_flags(self.policy, fleet, k, self.threshold, self.schedule,
                          self.policy_rng).v.copy()
        if self.config.enforce_B2:
            v |= self.since_broadcast >= self.config.B2_budget - 1
        self.since_broadcast = np.where(v, 0, self.since_broadcast + 1)
        flags = BroadcastFlags(v, forced)

        # Event 3: simultaneous aggregation, Event 4: SGD at the pre-step models
        mixing = build_transition_matrix(snapshot, flags)
        if self.config.check_transitions:
            report = verify_transition(mixing)
            if not report.ok:
                raise AssertionError(f"transition matrix at k={k} violates: {report.lines()}")
        W = fleet.W
        G = self.gradients(W)
        alpha = self.schedule.alpha(k)
        W_new = mixing.P @ W - alpha * G
        fleet.W_hat[v] = W[v]
        fleet.W = W_new

        score = resource_score(mixing.links, snapshot, fleet.rho, self.task.n)
        self.score_cum += score
        agg = mixing.links.any(axis=1)
        self._track_intervals(agg, k)
        self.broadcast_trace.append(v)
        self.aggregation_trace.append(agg)
        self.k = k + 1
        self._last = StepInfo(k, snapshot, flags, mixing, G, alpha, score, W, W_new)
        return self._last

    def _track_intervals(self, agg: np.ndarray, k: int) -> None:
        seen = agg & (self.last_agg >= 0)
        gaps = k - self.last_agg[seen]
        self.n_intervals[seen] += 1
        self.sum_intervals[seen] += gaps
        self.max_intervals[seen] = np.maximum(self.max_intervals[seen], gaps)
        self.last_agg[agg] = k

    def record(self) -> MetricsRecord:
        W = self.fleet.W
        w_bar = W.mean(axis=0)
        if self.task.is_classifier and self.world.test is not None:
            acc = float(np.mean([accuracy(self.task, w, self.world.test) for w in W]))
        else:
            acc = float("nan")
        cmax, cmean = consensus_error(W)
        last = self._last
        flags = tuple(bool(x) for x in last.flags.v) if last else (False,) * self.config.m
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_int = np.where(self.n_intervals > 0, self.sum_intervals / self.n_intervals,
                                np.nan)
        return MetricsRecord(
            k=self.k, mean_accuracy=acc,
            global_loss=global_loss(self.task, w_bar, self.world.shards, "mean"),
            consensus_max=cmax, consensus_mean=cmean,
            score_iter=last.score if last else 0.0, score_cum=self.score_cum,
            n_broadcasts=int(last.flags.v.sum()) if last else 0,
            flags=flags, mean_interval=tuple(float(x) for x in mean_int),
            max_interval=tuple(int(x) for x in self.max_intervals))


@dataclass
class RunResult:
    """Records of one run plus its full per-iteration ``T x m`` traces."""

    config: ExperimentConfig
    records: list[MetricsRecord]
    broadcasts: np.ndarray
    aggregations: np.ndarray
    bandwidths: np.ndarray
    r: float
    n: int
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def run_experiment(config: ExperimentConfig, world: World | None = None) -> RunResult:
    sim = Simulation(config, world)
    records = [sim.record()]
    for _ in range(config.total_iterations):
        sim.step()
        if sim.k % config.cadence == 0:
            records.append(sim.record())
    m = config.m
    b = np.array(sim.broadcast_trace, dtype=bool).reshape(-1, m)
    a = np.array(sim.aggregation_trace, dtype=bool).reshape(-1, m)
    return RunResult(config, records, b, a, sim.world.bandwidths, sim.world.r, sim.task.n,
                     {"world": sim.world, "W": sim.W.copy(), "w_bar": sim.w_bar})


def accuracy_at_budget(result: RunResult | Sequence[MetricsRecord], budget: float | None) -> float:
    """Accuracy of the last record whose cumulative score is within ``budget``
    (the final record when no budget is given)."""
    records = list(result)
    if budget is None:
        return records[-1].mean_accuracy
    eligible = [r for r in records if r.score_cum <= budget]
    return (eligible[-1] if eligible else records[0]).mean_accuracy


def replica_config(config: ExperimentConfig, replica: int) -> ExperimentConfig:
    """Replica 0 keeps the configured seeds; later replicas shift every seed."""
    if replica == 0:
        return config
    return config.model_copy(update={"seeds": config.seeds.shifted(7919 * replica)})


@dataclass(frozen=True)
class SweepRow:
    connectivity: float
    policy: str
    runs: int
    mean_accuracy_at_budget: float
    mean_final_accuracy: float
    mean_score_cum: float
    seeds: tuple[int, ...]


SWEEP_COLUMNS = ("connectivity", "policy", "runs", "mean_accuracy_at_budget",
                 "mean_final_accuracy", "mean_score_cum")


def _run_summary(args) -> tuple[float, float, float]:
    config, budget = args
    res = run_experiment(config)
    return accuracy_at_budget(res, budget), res.final.mean_accuracy, res.final.score_cum


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EFHC_THREADS", "1")))
    except ValueError:
        return 1


def monte_carlo(config: ExperimentConfig, runs: int | None = None,
                connectivity_grid: Sequence[float] | None = None,
                policies: Sequence[str] | None = None,
                budget: float | None = None) -> list[SweepRow]:
    """Average accuracy at a fixed transmission budget over paired replicas.

    Within a replica every policy and connectivity value shares the same
    topology, data and SGD seeds.
    """
    runs = config.monte_carlo_runs if runs is None else runs
    grid = list(config.connectivity_grid if connectivity_grid is None else connectivity_grid)
    policies = list(config.sweep_policies if policies is None else policies)
    budget = config.transmission_budget if budget is None else budget
    jobs, keys = [], []
    for c in grid:
        for p in policies:
            for j in range(runs):
                cfg = replica_config(config, j).with_updates(**{"topology.connectivity": c,
                                                                "policy": p})
                jobs.append((cfg, budget))
                keys.append((c, p, j))
                log.debug("replica %d connectivity=%g policy=%s seeds=%s", j, c, p,
                          cfg.seeds.model_dump())
    threads = _threads()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outputs = list(ex.map(_run_summary, jobs))
    else:
        outputs = [_run_summary(job) for job in jobs]
    rows = []
    for c in grid:
        for p in policies:
            sel = [(o, job[0]) for o, job, key in zip(outputs, jobs, keys) if key[:2] == (c, p)]
            acc_b, acc_f, score = (np.mean([o[i] for o, _ in sel]) for i in range(3))
            rows.append(SweepRow(c, p, runs, float(acc_b), float(acc_f), float(score),
                                 tuple(cfg.seeds.topology for _, cfg in sel)))
    return rows
