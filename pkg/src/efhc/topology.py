"""Time-varying physical communication graphs.

A static random geometric graph is generated once; at every iteration each of
its edges is independently available with a fixed probability.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np

Edge = tuple[int, int]


class DisconnectedGraphError(RuntimeError):
    """Raised when no connected geometric graph is found within the retry budget."""


def _norm_edge(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class GraphSnapshot:
    m: int
    edges: frozenset[Edge]
    iteration: int = 0

    def __post_init__(self):
        normed = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"edge ({i}, {j}) out of range for m={self.m}")
            normed.add(_norm_edge(i, j))
        object.__setattr__(self, "edges", frozenset(normed))

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.m), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        a.setflags(write=False)
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        d = self.adjacency.sum(axis=1)
        d.setflags(write=False)
        return d

    def degree(self, i: int) -> int:
        return int(self.degrees[i])

    def neighbors(self, i: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.adjacency[i]).tolist())

    def at(self, k: int) -> GraphSnapshot:
        return GraphSnapshot(self.m, self.edges, k)

    def write_edgelist(self, fh: TextIO) -> None:
        for i, j in sorted(self.edges):
            fh.write(f"{self.iteration} {i} {j}\n")


def complete_graph(m: int) -> GraphSnapshot:
    return GraphSnapshot(m, frozenset((i, j) for i in range(m) for j in range(i + 1, m)))


def read_edgelist(lines: Iterable[str], m: int) -> list[GraphSnapshot]:
    """Parse "k i j" lines back into snapshots, one per distinct k (sorted)."""
    by_k: dict[int, set[Edge]] = {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, i, j = (int(t) for t in line.split())
        by_k.setdefault(k, set()).add((i, j))
    return [GraphSnapshot(m, frozenset(e), k) for k, e in sorted(by_k.items())]


def generate_geometric_graph(m: int, connectivity: float, seed: int,
                             max_retries: int = 1000) -> GraphSnapshot:
    """Random geometric graph in the unit square with connection radius
    ``connectivity``, redrawn until connected."""
    if m < 2:
        raise ValueError("need at least 2 devices")
    if not 0 < connectivity:
        raise ValueError("connectivity radius must be positive")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(m, k=1)
    for _ in range(max_retries):
        pos = rng.random((m, 2))
        dist = np.linalg.norm(pos[iu] - pos[ju], axis=1)
        keep = dist <= connectivity
        g = GraphSnapshot(m, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))
        if union_is_connected([g]):
            return g
    raise DisconnectedGraphError(
        f"no connected graph with m={m}, radius={connectivity} after {max_retries} draws")


@dataclass(frozen=True)
class TopologyProcess:
    base: GraphSnapshot
    availability_prob: float = 1.0
    seed: int = 0
    _edges: tuple[Edge, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.availability_prob <= 1:
            raise ValueError("availability_prob must be in (0, 1]")
        object.__setattr__(self, "_edges", tuple(sorted(self.base.edges)))

    @property
    def m(self) -> int:
        return self.base.m


def sample_snapshot(process: TopologyProcess, k: int) -> GraphSnapshot:
    if process.availability_prob >= 1.0:
        return process.base.at(k)
    rng = np.random.default_rng((process.seed, k))
    mask = rng.random(len(process._edges)) < process.availability_prob
    return GraphSnapshot(process.m,
                         frozenset(e for e, keep in zip(process._edges, mask) if keep), k)


def union_is_connected(snapshots: Sequence[GraphSnapshot]) -> bool:
    if not snapshots:
        raise ValueError("empty snapshot sequence")
    m = snapshots[0].m
    adj: list[set[int]] = [set() for _ in range(m)]
    for s in snapshots:
        if s.m != m:
            raise ValueError("snapshots disagree on device count")
        for i, j in s.edges:
            adj[i].add(j)
            adj[j].add(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == m


def verify_B_connectivity(trace: Sequence[GraphSnapshot], B1: int) -> bool:
    """True iff the union over every window of ``B1`` consecutive snapshots is connected."""
    if B1 < 1:
        raise ValueError("B1 must be >= 1")
    if len(trace) < B1:
        raise ValueError("trace shorter than window")
    return all(union_is_connected(trace[s:s + B1]) for s in range(len(trace) - B1 + 1))
