"""Metropolis-style doubly-stochastic transition matrices driven by broadcast flags."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .topology import Edge, GraphSnapshot, _norm_edge

ATOL = 1e-12


@dataclass(frozen=True)
class BroadcastFlags:
    v: np.ndarray
    forced_edges: frozenset[Edge] = frozenset()

    def __post_init__(self):
        v = np.asarray(self.v)
        if v.ndim != 1 or not np.isin(v, (0, 1)).all():
            raise ValueError("broadcast flags must be a 0/1 vector")
        v = v.astype(bool)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "forced_edges",
                           frozenset(_norm_edge(int(i), int(j)) for i, j in self.forced_edges))

    @property
    def m(self) -> int:
        return len(self.v)


@dataclass(frozen=True)
class MixingMatrix:
    P: np.ndarray
    iteration: int = 0
    # realized link indicators v_ij; the support of the off-diagonal part
    links: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("mixing matrix must be square")
        object.__setattr__(self, "P", P)
        if self.links is None:
            links = P != 0
            np.fill_diagonal(links, False)
            object.__setattr__(self, "links", links)

    @property
    def m(self) -> int:
        return self.P.shape[0]

    def to_csv(self, fh: TextIO) -> None:
        np.savetxt(fh, self.P, delimiter=",", fmt="%.17g")


def metropolis_weight(d_i: int, d_j: int) -> float:
    if d_i < 1 or d_j < 1:
        raise ValueError("endpoints of an edge must both have degree >= 1")
    return min(1.0 / (1 + d_i), 1.0 / (1 + d_j))


def link_indicators(snapshot: GraphSnapshot, flags: BroadcastFlags) -> np.ndarray:
    """Boolean m x m matrix of v_ij: an available edge carries parameters if
    either endpoint broadcast, or if the edge was just formed."""
    if flags.m != snapshot.m:
        raise ValueError("flags sized differently from snapshot")
    adj = snapshot.adjacency
    v = flags.v
    links = adj & (v[:, None] | v[None, :])
    for i, j in flags.forced_edges:
        if not adj[i, j]:
            raise ValueError(f"forced edge ({i}, {j}) not in snapshot")
        links[i, j] = links[j, i] = True
    return links


def build_transition_matrix(snapshot: GraphSnapshot, flags: BroadcastFlags) -> MixingMatrix:
    links = link_indicators(snapshot, flags)
    d = snapshot.degrees.astype(float)
    beta = np.minimum.outer(1.0 / (1.0 + d), 1.0 / (1.0 + d))
    P = np.where(links, beta, 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return MixingMatrix(P, snapshot.iteration, links)


@dataclass
class TransitionReport:
    row_stochastic: bool
    column_stochastic: bool
    symmetric: bool
    support_matches: bool
    min_nonzero_ok: bool
    min_nonzero: float

    @property
    def doubly_stochastic(self) -> bool:
        return self.row_stochastic and self.column_stochastic

    @property
    def ok(self) -> bool:
        return (self.doubly_stochastic and self.symmetric
                and self.support_matches and self.min_nonzero_ok)

    def lines(self) -> list[str]:
        return [
            f"non-negative weights (min nonzero {self.min_nonzero:.4g}): "
            f"{'pass' if self.min_nonzero_ok else 'FAIL'}",
            f"row-stochastic: {'pass' if self.row_stochastic else 'FAIL'}",
            f"column-stochastic: {'pass' if self.column_stochastic else 'FAIL'}",
            f"symmetric weights: {'pass' if self.symmetric else 'FAIL'}",
            f"support matches information-flow graph: {'pass' if self.support_matches else 'FAIL'}",
        ]


def verify_transition(matrix: MixingMatrix, eta: float | None = None,
                      atol: float = ATOL) -> TransitionReport:
    P = matrix.P
    m = matrix.m
    if eta is None:
        eta = 1.0 / m
    nz = P[P != 0]
    min_nonzero = float(nz.min()) if nz.size else 0.0
    off = P.copy()
    np.fill_diagonal(off, 0.0)
    return TransitionReport(
        row_stochastic=bool(np.all(np.abs(P.sum(axis=1) - 1) <= atol)),
        column_stochastic=bool(np.all(np.abs(P.sum(axis=0) - 1) <= atol)),
        symmetric=bool(np.array_equal(P, P.T) or np.allclose(P, P.T, rtol=0, atol=atol)),
        support_matches=bool(np.array_equal(off != 0, matrix.links)),
        min_nonzero_ok=bool((P >= 0).all() and min_nonzero >= eta - atol),
        min_nonzero=min_nonzero,
    )
