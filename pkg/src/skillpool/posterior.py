"""Per-gamer skill summaries, MAP estimates and decile group selection."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ValidationError
from .io import atomic_write
from .model import ParameterIndex, RankObservation

MIN_DRAWS = 100
_EXACT_KDE_MAX = 2000
_KDE_CANDIDATES = 64
_KDE_BINS = 4096

BOXPLOT_COLUMNS = ["gamer", "rank_label", "map", "mean", "sd", "q05", "q25", "q50", "q75", "q95", "n_modalities"]


@dataclass(frozen=True)
class SkillSummary:
    gamer: str
    n_draws: int
    mean: float
    sd: float
    map: float
    q05: float
    q25: float
    q50: float
    q75: float
    q95: float
    modalities_observed: int = 0

    @property
    def interval_90(self) -> float:
        return self.q95 - self.q05

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GroupSelection:
    top_decile: list[str]
    bottom_decile: list[str]
    below_a_high_skill: list[str]
    threshold: float | None = None


def skill_draws(draws, index: ParameterIndex, gamer: str, centered: bool = False) -> np.ndarray:
    """Per-draw summed skill of ``gamer``, chains concatenated in order."""
    try:
        i = index.gamers.index(gamer)
    except ValueError:
        raise ValidationError(f"unknown gamer {gamer!r}") from None
    return all_skill_draws(draws, index, centered)[:, i]


def all_skill_draws(draws, index: ParameterIndex, centered: bool = False) -> np.ndarray:
    """Skill draws for every gamer, shape ``(total draws, N)``."""
    x = draws.pooled() if hasattr(draws, "pooled") else np.asarray(draws).reshape(-1, index.dim)
    n, m = index.n_gamers, index.n_modalities
    block = x[:, index.z].reshape(-1, n, m)
    if centered:
        return block.sum(axis=2)
    mu = x[:, index.mu]
    sigma = np.exp(x[:, index.log_sigma])
    eta = mu[:, None, :] + sigma[:, None, :] * block
    return eta.sum(axis=2)


def silverman_bandwidth(x: np.ndarray) -> float:
    sd = float(np.std(x, ddof=1))
    return 1.06 * sd * x.size ** (-0.2)


def _kde_at(points: np.ndarray, data: np.ndarray, h: float) -> np.ndarray:
    out = np.empty(points.size)
    for start in range(0, points.size, 256):
        chunk = points[start:start + 256]
        u = (chunk[:, None] - data[None, :]) / h
        out[start:start + 256] = np.exp(-0.5 * u * u).sum(axis=1)
    return out


def kde_mode(x) -> float:
    """Draw point maximizing a Gaussian KDE with Silverman bandwidth.

    Small samples are scored exactly. Larger ones are screened on a binned
    KDE, and the best candidates are then rescored exactly.
    """
    data = np.sort(np.asarray(x, dtype=float))
    h = silverman_bandwidth(data)
    if not h > 0:
        return float(data[0])
    if data.size <= _EXACT_KDE_MAX:
        candidates = data
    else:
        lo, hi = data[0] - 4 * h, data[-1] + 4 * h
        edges = np.linspace(lo, hi, _KDE_BINS + 1)
        width = edges[1] - edges[0]
        counts, _ = np.histogram(data, bins=edges)
        half = int(math.ceil(5 * h / width))
        grid = np.arange(-half, half + 1) * width
        smooth = fftconvolve(counts, np.exp(-0.5 * (grid / h) ** 2), mode="same")
        centers = 0.5 * (edges[:-1] + edges[1:])
        approx = np.interp(data, centers, smooth)
        k = min(_KDE_CANDIDATES, data.size)
        top = np.argpartition(-approx, k - 1)[:k]
        candidates = np.unique(data[top])
    dens = _kde_at(candidates, data, h)
    return float(candidates[int(np.argmax(dens))])


def summarize(draws, gamer: str, modalities_observed: int = 0) -> SkillSummary:
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    if x.size < MIN_DRAWS:
        raise ValidationError(f"need at least {MIN_DRAWS} draws to summarize, got {x.size}")
    q05, q25, q50, q75, q95 = np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])
    return SkillSummary(
        gamer=gamer,
        n_draws=int(x.size),
        mean=float(np.mean(x)),
        sd=float(np.std(x, ddof=1)),
        map=kde_mode(x),
        q05=float(q05), q25=float(q25), q50=float(q50), q75=float(q75), q95=float(q95),
        modalities_observed=int(modalities_observed),
    )


def summarize_all(draws, index: ParameterIndex, dataset=None, centered: bool = False) -> list[SkillSummary]:
    skills = all_skill_draws(draws, index, centered)
    observed = dataset.modalities_observed() if dataset is not None else np.zeros(index.n_gamers, dtype=int)
    return [summarize(skills[:, i], g, observed[i]) for i, g in enumerate(index.gamers)]


def decile_size(n: int, rounding: str = "ceil") -> int:
    if rounding == "ceil":
        return -(-n // 10)
    if rounding == "floor":
        return n // 10
    raise ValidationError(f"rounding must be 'ceil' or 'floor', got {rounding!r}")


def select_groups(summaries, ranks, rounding: str = "ceil") -> GroupSelection:
    """Top/bottom MAP deciles and below-A gamers with high estimated skill.

    The high-skill threshold is the lower median MAP of rank-A gamers (an
    order statistic, so the rule depends on the MAP ranking only).
    """
    summaries = list(summaries)
    if not summaries:
        raise ValidationError("select_groups needs at least one summary")
    order = sorted(summaries, key=lambda s: (-s.map, s.gamer))
    k = decile_size(len(order), rounding)
    top = [s.gamer for s in order[:k]]
    top_set = set(top)
    bottom = [s.gamer for s in order[len(order) - k:] if s.gamer not in top_set] if k else []

    rank_a = {r.gamer: r.rank_a for r in ranks}
    a_maps = sorted(s.map for s in summaries if rank_a.get(s.gamer) == 1)
    if not a_maps:
        warnings.warn("no rank-A gamers; below-A high-skill group is empty", RuntimeWarning, stacklevel=2)
        return GroupSelection(top, bottom, [], None)
    threshold = a_maps[(len(a_maps) - 1) // 2]
    below = [s.gamer for s in order if rank_a.get(s.gamer) == 0 and s.map > threshold]
    return GroupSelection(top, bottom, below, threshold)


def rank_label(rank: RankObservation | None) -> str:
    if rank is None:
        return ""
    return "A" if rank.rank_a == 1 else "below_A"


def export_boxplot_csv(summaries, ranks, path):
    ranks_by_gamer = {r.gamer: r for r in ranks}
    rows = sorted(summaries, key=lambda s: (-s.map, s.gamer))
    try:
        with atomic_write(path) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(BOXPLOT_COLUMNS)
            for s in rows:
                writer.writerow([s.gamer, rank_label(ranks_by_gamer.get(s.gamer))]
                                + [repr(float(v)) for v in (s.map, s.mean, s.sd, s.q05, s.q25, s.q50, s.q75, s.q95)]
                                + [s.modalities_observed])
    except OSError as exc:
        raise OSError(f"cannot write box-plot CSV to {path}: {exc}") from exc
    return path


def read_boxplot_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            out = {"gamer": row["gamer"], "rank_label": row["rank_label"], "n_modalities": int(row["n_modalities"])}
            for key in BOXPLOT_COLUMNS[2:-1]:
                out[key] = float(row[key])
            rows.append(out)
    return rows


def write_summary_json(summaries, path):
    with atomic_write(path) as fh:
        json.dump([s.to_json() for s in summaries], fh, indent=2)
        fh.write("\n")
    return path


def read_summary_json(path) -> list[SkillSummary]:
    with open(path) as fh:
        records = json.load(fh)
    try:
        return [SkillSummary(**rec) for rec in records]
    except TypeError as exc:
        raise ValidationError(f"{path}: malformed summary record ({exc})") from None
