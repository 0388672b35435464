"""L2-regularized logistic regression scorer on embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NonConvergenceError, ValidationError


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    l2: float
    iterations: int

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return x @ self.weights + self.intercept

    def predict_proba(self, x) -> np.ndarray:
        return np.exp(-np.logaddexp(0.0, -self.decision_function(x)))


def logistic_objective(w, b, x, y, l2) -> float:
    z = x @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))


def _gradient(w, b, x, y, l2):
    z = x @ w + b
    r = np.exp(-np.logaddexp(0.0, -z)) - y
    return x.T @ r / y.size + l2 * w, float(r.mean())


def fit_logistic(x, y, l2: float = 1e-2, tol: float = 1e-8, max_iter: int = 200000) -> LogisticModel:
    """Minimize mean log-loss + ``l2/2 * |w|^2`` (intercept unpenalized).

    Nesterov-accelerated gradient descent with fixed step ``1/L`` and
    adaptive restart, stopped when the gradient 2-norm falls below ``tol``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    if y.shape != (x.shape[0],) or not np.all((y == 0) | (y == 1)):
        raise ValidationError("y must be 0/1 with one label per row of x")
    if y.min() == y.max():
        raise ValidationError("logistic regression needs both classes")
    if l2 < 0:
        raise ValidationError("l2 must be non-negative")

    n, d = x.shape
    aug = np.hstack([x, np.ones((n, 1))])
    lipschitz = 0.25 * np.linalg.eigvalsh(aug.T @ aug / n).max() + l2
    step = 1.0 / lipschitz

    w = np.zeros(d)
    b = 0.0
    w_prev, b_prev = w, b
    f_prev = math.inf
    momentum = 1.0
    for it in range(max_iter):
        gw, gb = _gradient(w, b, x, y, l2)
        if math.sqrt(np.dot(gw, gw) + gb * gb) < tol:
            return LogisticModel(w, float(b), l2, it)
        # extrapolated point
        beta = (momentum - 1.0) / (momentum + 2.0)
        vw = w + beta * (w - w_prev)
        vb = b + beta * (b - b_prev)
        gvw, gvb = _gradient(vw, vb, x, y, l2)
        w_prev, b_prev = w, b
        w = vw - step * gvw
        b = vb - step * gvb
        f = logistic_objective(w, b, x, y, l2)
        if f > f_prev:
            momentum = 1.0
        else:
            momentum += 1.0
        f_prev = f
    raise NonConvergenceError(f"logistic regression did not reach gradient norm {tol} in {max_iter} iterations")


def logistic_score(train_x, train_y, eval_x=None, l2: float = 1e-2) -> np.ndarray:
    """Fit on (train_x, train_y) and return P(y = 1) for eval_x (default: train_x)."""
    model = fit_logistic(train_x, train_y, l2=l2)
    return model.predict_proba(train_x if eval_x is None else eval_x)
