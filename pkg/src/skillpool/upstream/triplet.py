"""Batch-hard triplet loss on squared Euclidean distances, and a linear embedding trained with it."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonConvergenceError, ValidationError


def _sqdist(e: np.ndarray) -> np.ndarray:
    diff = e[:, None, :] - e[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def triplet_loss_batch_hard(embeddings, labels, margin: float = 1.0, soft: bool = False):
    """Mean over anchors of ``max(0, margin + hardest d_ap - hardest d_an)``.

    With ``soft=True`` the hinge is replaced by ``log(1 + exp(.))``. Returns
    ``(loss, gradient)`` with the gradient shaped like ``embeddings``. Anchors
    without a same-label partner are skipped.
    """
    e = np.asarray(embeddings, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    y = np.asarray(labels)
    if y.shape != (e.shape[0],):
        raise ValidationError("labels must match the number of embeddings")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValidationError("batch-hard triplet loss needs both classes")

    d = _sqdist(e)
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    has_pos = same.any(axis=1)
    if not has_pos.all():
        warnings.warn(f"skipping {int((~has_pos).sum())} anchors without a positive partner",
                      RuntimeWarning, stacklevel=2)
    anchors = np.flatnonzero(has_pos)
    if anchors.size == 0:
        raise ValidationError("no anchor has a positive partner")

    other = y[:, None] != y[None, :]
    d_pos = np.where(same, d, -np.inf)
    d_neg = np.where(other, d, np.inf)
    hard_p = np.argmax(d_pos, axis=1)
    hard_n = np.argmin(d_neg, axis=1)

    grad = np.zeros_like(e)
    total = 0.0
    for a in anchors:
        p, n = hard_p[a], hard_n[a]
        arg = margin + d[a, p] - d[a, n]
        if soft:
            total += float(np.logaddexp(0.0, arg))
            weight = 1.0 / (1.0 + math.exp(-arg))
        else:
            if arg <= 0:
                continue
            total += arg
            weight = 1.0
        gp = 2.0 * (e[a] - e[p])
        gn = 2.0 * (e[a] - e[n])
        grad[a] += weight * (gp - gn)
        grad[p] -= weight * gp
        grad[n] += weight * gn
    k = anchors.size
    return total / k, grad / k


@dataclass(frozen=True)
class EmbeddingConfig:
    k: int = 2
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 200
    seed: int = 0
    soft: bool = False


@dataclass(frozen=True)
class EmbeddingModel:
    projection: np.ndarray  # (k, d)
    margin: float
    loss_history: list = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[0]

    def embed(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.projection.T


def init_projection(k: int, d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((k, d)) / math.sqrt(d)


def train_linear_embedding(features, labels, config: EmbeddingConfig = EmbeddingConfig()) -> EmbeddingModel:
    """Full-batch gradient descent on the batch-hard loss over a linear projection."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError("features must be (n, d) with one label per row")
    if np.unique(y).size < 2:
        raise ValidationError("training needs both classes")
    n, d = x.shape
    if not 1 <= config.k <= d:
        raise ValidationError(f"output dimension k must be in [1, {d}]")

    # canonical row order makes the result independent of input order
    order = np.lexsort(tuple(x[:, j] for j in range(d - 1, -1, -1)) + (y,))
    x, y = x[order], y[order]

    w = init_projection(config.k, d, config.seed)
    history = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(config.epochs):
            loss, g_e = triplet_loss_batch_hard(x @ w.T, y, config.margin, config.soft)
            if not math.isfinite(loss):
                raise NonConvergenceError("triplet training diverged; try a smaller learning rate")
            history.append(loss)
            if loss == 0.0:
                break
            w = w - config.learning_rate * (g_e.T @ x)
            if not np.all(np.isfinite(w)):
                raise NonConvergenceError("triplet training diverged; try a smaller learning rate")
    return EmbeddingModel(w, config.margin, history)
