"""Platt sigmoid calibration and probability/logit conversion."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NonConvergenceError, ValidationError


@dataclass(frozen=True)
class CalibrationModel:
    """``P(y = 1 | s) = 1 / (1 + exp(a * s + b))``."""

    a: float
    b: float
    iterations: int = 0

    def predict_proba(self, scores) -> np.ndarray:
        z = self.a * np.asarray(scores, dtype=float) + self.b
        return np.exp(-np.logaddexp(0.0, z))

    def predict_logit(self, scores) -> np.ndarray:
        return -(self.a * np.asarray(scores, dtype=float) + self.b)


def platt_targets(labels) -> np.ndarray:
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    return np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def platt_objective(a: float, b: float, scores, targets) -> float:
    """Negative log likelihood of the smoothed targets under the sigmoid."""
    z = a * scores + b
    return float(np.sum(np.logaddexp(0.0, z) - (1.0 - targets) * z))


def platt_fit(scores, labels, tol: float = 1e-10, max_iter: int = 200) -> CalibrationModel:
    """Newton's method with backtracking on the Platt likelihood."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be 1-D of equal length")
    if s.size < 4:
        raise ValidationError("Platt scaling needs at least 4 examples")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0/1")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or n_pos == y.size:
        raise ValidationError("Platt scaling needs both classes")
    if not np.all(np.isfinite(s)):
        raise ValidationError("scores must be finite")

    t = platt_targets(y)
    a, b = 0.0, math.log((y.size - n_pos + 1.0) / (n_pos + 1.0))
    f = platt_objective(a, b, s, t)
    for it in range(max_iter):
        z = a * s + b
        p = np.exp(-np.logaddexp(0.0, z))
        d1 = t - p
        g = np.array([np.dot(d1, s), d1.sum()])
        if np.max(np.abs(g)) < tol:
            return CalibrationModel(float(a), float(b), it)
        w = p * (1.0 - p)
        h11 = np.dot(w, s * s) + 1e-12
        h22 = w.sum() + 1e-12
        h21 = np.dot(w, s)
        det = h11 * h22 - h21 * h21
        da = -(h22 * g[0] - h21 * g[1]) / det
        db = -(-h21 * g[0] + h11 * g[1]) / det
        slope = g[0] * da + g[1] * db
        if -slope <= 1e-12 * max(1.0, abs(f)):
            # predicted decrease is below round-off: the objective cannot
            # arbitrate, so take the full Newton step
            a, b = a + da, b + db
            f = platt_objective(a, b, s, t)
            continue
        step = 1.0
        while step >= 1e-10:
            a_new, b_new = a + step * da, b + step * db
            f_new = platt_objective(a_new, b_new, s, t)
            if f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            # no measurable decrease left: accept only if already at round-off level
            if np.max(np.abs(g)) < 1e-6 * max(1.0, s.size):
                return CalibrationModel(float(a), float(b), it)
            raise NonConvergenceError(f"Platt line search failed at a={a!r}, b={b!r}")
        a, b, f = a_new, b_new, f_new
    raise NonConvergenceError(f"Platt scaling did not converge in {max_iter} iterations (a={a!r}, b={b!r})")


def prob_to_logit(p, clamp: float = 1e-6):
    """``log(p / (1 - p))`` after clamping into ``[clamp, 1 - clamp]``."""
    q = np.clip(np.asarray(p, dtype=float), clamp, 1.0 - clamp)
    out = np.log(q) - np.log1p(-q)
    return float(out) if out.ndim == 0 else out
