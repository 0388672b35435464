"""Deterministic featurization: score aggregation, decile classes, chat timing."""
from __future__ import annotations

import datetime as dt
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..io import read_score_table, write_score_table

SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple[tuple[str, str, int, float], ...]

    def __post_init__(self):
        rows = tuple((str(g), str(m), int(t), float(s)) for g, m, t, s in self.rows)
        keys = set()
        for g, m, t, s in rows:
            if not np.isfinite(s):
                raise ValidationError(f"non-finite score for {(g, m, t)}")
            if (g, m, t) in keys:
                raise ValidationError(f"duplicate score key {(g, m, t)}")
            keys.add((g, m, t))
        object.__setattr__(self, "rows", rows)

    @property
    def modalities(self) -> list[str]:
        return sorted({m for _, m, _, _ in self.rows})

    @classmethod
    def read_csv(cls, path) -> "ScoreTable":
        return cls(tuple(read_score_table(path)))

    def write_csv(self, path):
        write_score_table(path, self.rows)


def gamer_mean_scores(table: ScoreTable, modality: str) -> list[tuple[str, float]]:
    """Arithmetic mean score per gamer for one modality, sorted by gamer id."""
    groups = defaultdict(list)
    for g, m, _, s in table.rows:
        if m == modality:
            groups[g].append(s)
    if not groups:
        raise ValidationError(f"modality {modality!r} not present in score table")
    return [(g, float(np.mean(np.sort(groups[g])))) for g in sorted(groups)]


def decile_quantize(values) -> tuple[np.ndarray, np.ndarray]:
    """Decile class (0-9) of each value and the nine boundaries.

    A value equal to a boundary falls in the lower class.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise ValidationError("decile quantization needs at least 10 values")
    boundaries = np.quantile(x, np.arange(1, 10) / 10.0)
    classes = np.searchsorted(boundaries, x, side="left")
    return classes.astype(int), boundaries


def _sorted_times(timestamps) -> np.ndarray:
    t = np.asarray(timestamps, dtype=float)
    if t.ndim != 1:
        raise ValidationError("timestamps must be 1-D")
    if t.size and np.any(np.diff(t) < 0):
        raise ValidationError("timestamps must be sorted ascending")
    return t


def window_group(timestamps, window: float = SECONDS_PER_HOUR) -> np.ndarray:
    """Fixed windows anchored at the first message: ``floor((t - t0) / window)``."""
    t = _sorted_times(timestamps)
    if t.size == 0:
        return np.zeros(0, dtype=int)
    return np.floor((t - t[0]) / window).astype(int)


def chat_density(timestamps) -> tuple[list[str], np.ndarray]:
    """Messages per UTC calendar day, over days with at least one message."""
    t = np.asarray(timestamps, dtype=float)
    if t.size == 0:
        return [], np.zeros(0, dtype=int)
    days = np.floor(t / SECONDS_PER_DAY).astype(np.int64)
    uniq, counts = np.unique(days, return_counts=True)
    epoch = dt.date(1970, 1, 1)
    labels = [(epoch + dt.timedelta(days=int(d))).isoformat() for d in uniq]
    return labels, counts
