"""Classification metrics, F1-optimal thresholds and rank correlation tests."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc
from scipy.stats import rankdata

from .errors import ValidationError

EXACT_KENDALL_MAX_N = 8


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be a 1-D array of 0/1")
    return y.astype(int)


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = _binary(labels)
    if s.shape != y.shape:
        raise ValidationError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValidationError("scores must be finite")
    return s, y


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with mid-ranks for ties."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _confusion(s, y, threshold):
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, fn


def _f1(tp, fp, fn) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def candidate_thresholds(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=float))
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[-math.inf], mids, [math.inf]])


def best_f1_threshold(scores, labels) -> float:
    """Threshold maximizing F1 under the rule ``score >= threshold``.

    Ties go to the smallest threshold. Requires at least one positive label; an
    all-positive sample yields ``-inf``.
    """
    s, y = _scores_labels(scores, labels)
    if y.sum() == 0:
        raise ValidationError("F1 threshold needs at least one positive label")
    best_t, best = -math.inf, -1.0
    for t in candidate_thresholds(s):
        f = _f1(*_confusion(s, y, t))
        if f > best:
            best_t, best = float(t), f
    return best_t


@dataclass(frozen=True)
class ClassificationReport:
    threshold: float
    f1: float
    precision: float
    recall: float
    auc: float
    precision_defined: bool = True
    n: int = 0

    def to_json(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else None

        return {
            "threshold": self.threshold if math.isfinite(self.threshold) else str(self.threshold),
            "auc": num(self.auc), "f1": num(self.f1),
            "precision": num(self.precision) if self.precision_defined else None,
            "recall": num(self.recall), "precision_defined": self.precision_defined, "n": self.n,
        }


def report(scores, labels, threshold: float) -> ClassificationReport:
    s, y = _scores_labels(scores, labels)
    auc = roc_auc(s, y)
    tp, fp, fn = _confusion(s, y, threshold)
    defined = tp + fp > 0
    precision = tp / (tp + fp) if defined else math.nan
    recall = tp / (tp + fn) if tp + fn else math.nan
    return ClassificationReport(float(threshold), _f1(tp, fp, fn), precision, recall, auc, defined, int(y.size))


def format_table(rows: dict[str, ClassificationReport]) -> str:
    """Aligned text table with columns Features, AUC, F1, Prec., Recall."""
    def cell(x, defined=True):
        return f"{x:.3f}" if defined and math.isfinite(x) else "n.a."

    header = ["Features", "AUC", "F1", "Prec.", "Recall"]
    body = [[name, cell(r.auc), cell(r.f1, r.precision_defined), cell(r.precision, r.precision_defined),
             cell(r.recall)] for name, r in rows.items()]
    widths = [max(len(row[k]) for row in [header] + body) for k in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(v.ljust(widths[0]) if k == 0 else v.rjust(widths[k]) for k, v in enumerate(row)))
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def _pair_counts(x: np.ndarray, y: np.ndarray):
    """Concordant and discordant pair counts, plus pairs tied in x and in y."""
    n = x.size
    conc = disc = 0
    ties_x = ties_y = 0
    for start in range(0, n, 512):
        xa = x[start:start + 512, None]
        ya = y[start:start + 512, None]
        idx = np.arange(start, min(start + 512, n))[:, None]
        upper = np.arange(n)[None, :] > idx
        sx = np.sign(x[None, :] - xa)
        sy = np.sign(y[None, :] - ya)
        prod = sx * sy
        conc += int(np.sum((prod > 0) & upper))
        disc += int(np.sum((prod < 0) & upper))
        ties_x += int(np.sum((sx == 0) & upper))
        ties_y += int(np.sum((sy == 0) & upper))
    return conc, disc, ties_x, ties_y


@lru_cache(maxsize=None)
def _inversion_distribution(n: int) -> tuple[int, ...]:
    # counts of permutations of n items by number of inversions
    dist = [1]
    for k in range(2, n + 1):
        new = [0] * (len(dist) + k - 1)
        for inv, c in enumerate(dist):
            for j in range(k):
                new[inv + j] += c
        dist = new
    return tuple(dist)


def _exact_p(n: int, s_stat: int) -> float:
    # S = C - D = n0 - 2 * inversions for untied data
    n0 = n * (n - 1) // 2
    dist = _inversion_distribution(n)
    total = math.factorial(n)
    extreme = sum(c for inv, c in enumerate(dist) if abs(n0 - 2 * inv) >= abs(s_stat))
    return min(1.0, extreme / total)


def _tie_groups(v: np.ndarray) -> np.ndarray:
    _, counts = np.unique(v, return_counts=True)
    return counts[counts > 1].astype(float)


def _normal_p(x: np.ndarray, y: np.ndarray, s_stat: int) -> float:
    n = float(x.size)
    t = _tie_groups(x)
    u = _tie_groups(y)
    var = (n * (n - 1) * (2 * n + 5) - np.sum(t * (t - 1) * (2 * t + 5)) - np.sum(u * (u - 1) * (2 * u + 5))) / 18.0
    var += np.sum(t * (t - 1) * (t - 2)) * np.sum(u * (u - 1) * (u - 2)) / (9.0 * n * (n - 1) * (n - 2))
    var += np.sum(t * (t - 1)) * np.sum(u * (u - 1)) / (2.0 * n * (n - 1))
    if not var > 0:
        return 1.0
    z = max(abs(s_stat) - 1.0, 0.0) / math.sqrt(var)
    return float(min(1.0, erfc(z / math.sqrt(2.0))))


def kendall_tau(x, y, method: str = "auto") -> tuple[float, float]:
    """Kendall tau-b and a two-sided p-value.

    ``method="auto"`` enumerates the exact null for n <= 8 without ties and
    otherwise uses the tie-corrected normal approximation with continuity
    correction. ``"exact"`` and ``"normal"`` force one or the other.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("x and y must be 1-D arrays of equal length")
    n = x.size
    if n < 3:
        raise ValidationError("Kendall tau needs at least 3 observations")
    conc, disc, ties_x, ties_y = _pair_counts(x, y)
    n0 = n * (n - 1) // 2
    if ties_x == n0 or ties_y == n0:
        raise ValidationError("Kendall tau undefined: a variable is constant")
    tau = (conc - disc) / math.sqrt((n0 - ties_x) * (n0 - ties_y))
    no_ties = ties_x == 0 and ties_y == 0
    if method == "auto":
        method = "exact" if no_ties and n <= EXACT_KENDALL_MAX_N else "normal"
    if method == "exact":
        if not no_ties:
            raise ValidationError("exact Kendall p-value requires untied data")
        p = _exact_p(n, conc - disc)
    elif method == "normal":
        p = _normal_p(x, y, conc - disc)
    else:
        raise ValidationError(f"unknown method {method!r}")
    return float(tau), float(p)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("pearson needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise ValidationError("pearson undefined for a constant vector")
    return float(np.dot(dx, dy) / math.sqrt(sxx * syy))
