"""Loss functions, gradients and accuracy for the supported learning tasks.

Linear classifiers store their parameters as a flattened ``C x (n_features + 1)``
matrix, one row per class with the bias in the last column.

Per-point losses:

* quadratic: ``0.5 * ||w - x||^2`` (a shard holding one point is a single center)
* hinge (one-vs-all): ``sum_c max(0, 1 - t_c * s_c)`` with ``t_c = +1`` for the
  true class and ``-1`` otherwise, ``s`` the class scores
* logistic: softmax cross-entropy

Each local objective adds ``(lam / 2) * ||w||^2`` once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .data import Shard

Kind = Literal["quadratic", "hinge", "logistic"]
Reduction = Literal["sum", "mean"]


@dataclass(frozen=True)
class TaskSpec:
    kind: Kind
    n_features: int
    classes: int = 1
    reg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "hinge", "logistic"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.n_features < 1:
            raise ValueError("n_features must be positive")
        if self.kind != "quadratic" and self.classes < 2:
            raise ValueError("classifiers need at least two classes")
        if self.reg < 0:
            raise ValueError("regularization must be non-negative")

    @property
    def n(self) -> int:
        if self.kind == "quadratic":
            return self.n_features
        return self.classes * (self.n_features + 1)

    @property
    def is_classifier(self) -> bool:
        return self.kind != "quadratic"


def _check_dim(task: TaskSpec, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (task.n,):
        raise ValueError(f"parameter vector has shape {w.shape}, expected ({task.n},)")
    return w


def scores(task: TaskSpec, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    W = w.reshape(task.classes, task.n_features + 1)
    return X @ W[:, :-1].T + W[:, -1]


def point_losses(task: TaskSpec, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    w = _check_dim(task, w)
    if task.kind == "quadratic":
        return 0.5 * np.sum((X - w) ** 2, axis=1)
    s = scores(task, w, X)
    if task.kind == "hinge":
        t = -np.ones_like(s)
        t[np.arange(len(y)), y] = 1.0
        return np.maximum(0.0, 1.0 - t * s).sum(axis=1)
    s_max = s.max(axis=1, keepdims=True)
    lse = s_max[:, 0] + np.log(np.exp(s - s_max).sum(axis=1))
    return lse - s[np.arange(len(y)), y]


def _mean_point_gradient(task: TaskSpec, w: np.ndarray, X: np.ndarray,
                         y: np.ndarray) -> np.ndarray:
    if task.kind == "quadratic":
        return w - X.mean(axis=0)
    s = scores(task, w, X)
    N = len(y)
    if task.kind == "hinge":
        t = -np.ones_like(s)
        t[np.arange(N), y] = 1.0
        coef = np.where(1.0 - t * s > 0, -t, 0.0)
    else:
        e = np.exp(s - s.max(axis=1, keepdims=True))
        coef = e / e.sum(axis=1, keepdims=True)
        coef[np.arange(N), y] -= 1.0
    coef /= N
    grad = np.empty((task.classes, task.n_features + 1))
    grad[:, :-1] = coef.T @ X
    grad[:, -1] = coef.sum(axis=0)
    return grad.ravel()


def local_loss(task: TaskSpec, w: np.ndarray, shard: Shard,
               reduction: Reduction = "sum") -> float:
    """Local objective of one device: summed (or averaged) point losses plus regularization."""
    w = _check_dim(task, w)
    losses = point_losses(task, w, shard.X, shard.y)
    data = losses.sum() if reduction == "sum" else losses.mean()
    return float(data + 0.5 * task.reg * w @ w)


def full_gradient(task: TaskSpec, w: np.ndarray, shard: Shard,
                  reduction: Reduction = "mean") -> np.ndarray:
    w = _check_dim(task, w)
    g = _mean_point_gradient(task, w, shard.X, shard.y)
    if reduction == "sum":
        g = g * len(shard)
    return g + task.reg * w


def stochastic_gradient(task: TaskSpec, w: np.ndarray, shard: Shard, batch_size: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Mini-batch gradient, batch drawn uniformly without replacement.

    A batch covering the whole shard skips sampling and is exact.
    """
    w = _check_dim(task, w)
    N = len(shard)
    if not 1 <= batch_size <= N:
        raise ValueError(f"batch_size must lie in [1, {N}]")
    if batch_size == N:
        X, y = shard.X, shard.y
    else:
        idx = rng.choice(N, size=batch_size, replace=False)
        X, y = shard.X[idx], shard.y[idx]
    return _mean_point_gradient(task, w, X, y) + task.reg * w


def global_loss(task: TaskSpec, w: np.ndarray, shards: Sequence[Shard],
                reduction: Reduction = "mean") -> float:
    """Average of the local objectives over devices.

    ``reduction="mean"`` uses per-point mean local losses, the objective that the
    mini-batch dynamics actually minimize; ``"sum"`` uses raw sums.
    """
    return float(np.mean([local_loss(task, w, s, reduction) for s in shards]))


def global_gradient(task: TaskSpec, w: np.ndarray, shards: Sequence[Shard],
                    reduction: Reduction = "mean") -> np.ndarray:
    return np.mean([full_gradient(task, w, s, reduction) for s in shards], axis=0)


def predict(task: TaskSpec, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    if not task.is_classifier:
        raise ValueError("accuracy is only defined for classification tasks")
    # argmax breaks ties toward the lowest class index
    return scores(task, _check_dim(task, w), X).argmax(axis=1)


def accuracy(task: TaskSpec, w: np.ndarray, test: Shard) -> float:
    return float(np.mean(predict(task, w, test.X) == test.y))
