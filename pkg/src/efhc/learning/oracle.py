"""Centralized reference solutions and empirical gradient bounds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, minimize

from .data import Shard
from .tasks import TaskSpec, global_gradient, global_loss, stochastic_gradient


class OracleDidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleResult:
    w: np.ndarray
    F: float
    grad_norm: float
    iterations: int
    # certified bound on F - F* where a dual is available (hinge), else None
    gap: float | None = None


def centralized_oracle(task: TaskSpec, shards: Sequence[Shard], tolerance: float = 1e-6,
                       max_iter: int = 20000, w0: np.ndarray | None = None) -> OracleResult:
    """Minimize the mean-reduced global loss.

    Quadratic tasks are solved in closed form. Logistic regression uses
    full-gradient descent with Armijo backtracking until the gradient norm drops
    below ``tolerance``. The hinge objective is non-smooth, so its subgradient
    norm says nothing about optimality; it is solved through its box-constrained
    dual (or as a linear program when ``reg == 0``) and the duality gap must fall
    below ``tolerance * max(1, |F|)``.
    """
    if task.kind == "quadratic":
        center = np.mean([s.X.mean(axis=0) for s in shards], axis=0)
        w = center / (1.0 + task.reg)
        g = global_gradient(task, w, shards)
        return OracleResult(w, global_loss(task, w, shards), float(np.linalg.norm(g)), 0)
    if task.kind == "hinge":
        if task.reg > 0:
            return _hinge_dual(task, shards, tolerance, max_iter)
        return _hinge_lp(task, shards)

    w = np.zeros(task.n) if w0 is None else np.array(w0, dtype=float)
    F = global_loss(task, w, shards)
    step = 1.0
    for it in range(max_iter):
        g = global_gradient(task, w, shards)
        gn2 = float(g @ g)
        if gn2 <= tolerance ** 2:
            return OracleResult(w, F, gn2 ** 0.5, it)
        step = min(step * 2.0, 1e3)
        while True:
            w_new = w - step * g
            F_new = global_loss(task, w_new, shards)
            if F_new <= F - 1e-4 * step * gn2:
                break
            step *= 0.5
            if step < 1e-14:
                raise OracleDidNotConverge(f"line search stalled at iteration {it}")
        w, F = w_new, F_new
    raise OracleDidNotConverge(f"gradient norm still {gn2 ** 0.5:.3g} after {max_iter} iterations")


def _hinge_design(task: TaskSpec, shards: Sequence[Shard]):
    """Bias-augmented points, +-1 targets per class and per-point weights.

    The global objective is ``sum_p a_p sum_c max(0, 1 - T_pc u_c . x_p) + reg/2 ||u||^2``
    with ``a_p = 1 / (m * N_i)`` for a point on device ``i``.
    """
    m = len(shards)
    X = np.vstack([np.hstack([s.X, np.ones((len(s), 1))]) for s in shards])
    y = np.concatenate([s.y for s in shards]).astype(int)
    a = np.concatenate([np.full(len(s), 1.0 / (m * len(s))) for s in shards])
    T = -np.ones((len(y), task.classes))
    T[np.arange(len(y)), y] = 1.0
    return X, T, a


def _hinge_dual(task, shards, tolerance, max_iter) -> OracleResult:
    # max_A  sum A - reg/2 ||U||^2  with  U = (A * T)^T X / reg,  0 <= A_pc <= a_p
    X, T, a = _hinge_design(task, shards)
    lam = task.reg
    N, C = T.shape

    def neg_dual(alpha):
        A = alpha.reshape(N, C)
        U = (A * T).T @ X / lam
        D = A.sum() - 0.5 * lam * float((U * U).sum())
        return -D, -(1.0 - T * (X @ U.T)).ravel()

    res = minimize(neg_dual, np.zeros(N * C), jac=True, method="L-BFGS-B",
                   bounds=np.column_stack([np.zeros(N * C), np.repeat(a, C)]),
                   options={"maxiter": max_iter, "maxfun": 2 * max_iter, "gtol": 1e-14,
                            "ftol": 1e-16})
    A = res.x.reshape(N, C)
    w = ((A * T).T @ X / lam).ravel()
    F = global_loss(task, w, shards)
    gap = F + float(res.fun)
    if gap > tolerance * max(1.0, abs(F)):
        raise OracleDidNotConverge(f"duality gap still {gap:.3g} after {res.nit} iterations")
    g = global_gradient(task, w, shards)
    return OracleResult(w, F, float(np.linalg.norm(g)), int(res.nit), gap)


def _hinge_lp(task, shards) -> OracleResult:
    # min sum a_p xi_pc  s.t.  xi_pc >= 1 - T_pc u_c . x_p,  xi >= 0;  rows ordered (c, p)
    X, T, a = _hinge_design(task, shards)
    N, C = T.shape
    d = X.shape[1]
    A_u = sparse.block_diag([sparse.csr_matrix(-T[:, [c]] * X) for c in range(C)])
    A_ub = sparse.hstack([A_u, -sparse.identity(N * C)]).tocsr()
    cost = np.concatenate([np.zeros(C * d), np.tile(a, C)])
    bounds = [(None, None)] * (C * d) + [(0, None)] * (N * C)
    res = linprog(cost, A_ub=A_ub, b_ub=-np.ones(N * C), bounds=bounds, method="highs")
    if res.status != 0:
        raise OracleDidNotConverge(f"linear program failed: {res.message}")
    w = res.x[:C * d]
    F = global_loss(task, w, shards)
    g = global_gradient(task, w, shards)
    # HiGHS certifies optimality; what is left is the solver's feasibility tolerance
    return OracleResult(w, F, float(np.linalg.norm(g)), int(res.nit), abs(F - res.fun))


@dataclass(frozen=True)
class GradientBounds:
    per_device: np.ndarray  # L_i, 2-norm bound per device
    L: float
    L_inf: float


def estimate_Linf(task: TaskSpec, shards: Sequence[Shard], sample_count: int = 200,
                  seed: int = 0, radius: float = 1.0, center: np.ndarray | None = None,
                  batch_size: int | None = None, safety: float = 2.0) -> GradientBounds:
    """Empirical gradient-norm bounds from stochastic gradients sampled at
    points uniformly drawn in a ball around ``center`` (the initial model by
    default), inflated by ``safety``.

    Samples are drawn one after another from a single stream, so raising
    ``sample_count`` only ever adds samples.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    center = np.zeros(task.n) if center is None else np.asarray(center, dtype=float)
    m = len(shards)
    L_dev = np.zeros(m)
    L_inf = 0.0
    for _ in range(sample_count):
        i = int(rng.integers(m))
        direction = rng.standard_normal(task.n)
        direction /= np.linalg.norm(direction)
        w = center + radius * rng.random() ** (1.0 / task.n) * direction
        b = len(shards[i]) if batch_size is None else min(batch_size, len(shards[i]))
        g = stochastic_gradient(task, w, shards[i], b, rng)
        L_dev[i] = max(L_dev[i], float(np.linalg.norm(g)))
        L_inf = max(L_inf, float(np.abs(g).max()))
    L_dev *= safety
    return GradientBounds(L_dev, float(L_dev.max()), safety * L_inf)
