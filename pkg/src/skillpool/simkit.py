"""Forward simulation of the pooling model, a quadrature oracle, and SBC.

Everything here is seeded from explicit integers; replicate ``r`` of an SBC run
derives its streams from ``SeedSequence(seed, spawn_key=(r,))`` so aggregate
results do not depend on execution order.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from .errors import NumericalError, ValidationError
from .io import atomic_write
from .model import (
    BERNOULLI_FLOOR,
    LOG_2PI,
    Dataset,
    HierarchicalModel,
    HyperPriors,
    LogitObservation,
    RankObservation,
)
from .sampler.chains import SamplerConfig, sample
from .sampler.diagnostics import rhat

MIN_SBC_REPLICATES = 100
DEFAULT_MODALITIES = ("video_spatial", "video_motion", "audio", "chat_text", "chat_temporal")
# share of gamers observed and mean datapoints per observed gamer, per modality
COVERAGE_PATTERN = ((0.87, 9.0), (0.87, 9.0), (0.83, 7.0), (0.66, 30.0), (0.66, 12.0))


@dataclass(frozen=True)
class TruthConfig:
    n_gamers: int
    n_modalities: int
    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    tau: tuple[float, ...]
    logits_per_pair: int | tuple | None = 10
    validation_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_gamers < 1 or self.n_modalities < 1:
            raise ValidationError("n_gamers and n_modalities must be >= 1")
        for name in ("mu", "sigma", "tau"):
            vec = tuple(float(v) for v in getattr(self, name))
            if len(vec) != self.n_modalities:
                raise ValidationError(f"{name} must have one entry per modality")
            object.__setattr__(self, name, vec)
        if not all(s > 0 for s in self.sigma) or not all(t > 0 for t in self.tau):
            raise ValidationError("sigma and tau must be strictly positive")
        if not 0.0 <= self.validation_fraction <= 1.0:
            raise ValidationError("validation_fraction must lie in [0, 1]")
        lpp = self.logits_per_pair
        if lpp is not None and not isinstance(lpp, (int, np.integer)):
            counts = np.asarray(lpp, dtype=int)
            if counts.shape != (self.n_gamers, self.n_modalities) or np.any(counts < 0):
                raise ValidationError("per-pair counts must be a non-negative (n_gamers, n_modalities) array")
            object.__setattr__(self, "logits_per_pair", tuple(map(tuple, counts.tolist())))
        elif lpp is not None and lpp < 0:
            raise ValidationError("logits_per_pair must be non-negative")

    @property
    def modality_names(self) -> tuple[str, ...]:
        if self.n_modalities <= len(DEFAULT_MODALITIES):
            return DEFAULT_MODALITIES[: self.n_modalities]
        return tuple(f"m{j}" for j in range(self.n_modalities))

    @property
    def gamer_names(self) -> tuple[str, ...]:
        width = max(3, len(str(self.n_gamers - 1)))
        return tuple(f"g{i:0{width}d}" for i in range(self.n_gamers))


@dataclass(frozen=True)
class TruthRecord:
    mu: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    eta: np.ndarray
    gamers: tuple[str, ...]
    modalities: tuple[str, ...]

    @property
    def skill(self) -> np.ndarray:
        return self.eta.sum(axis=1)

    def unconstrained(self) -> np.ndarray:
        z = (self.eta - self.mu) / self.sigma
        return np.concatenate([z.ravel(), self.mu, np.log(self.sigma), np.log(self.tau)])

    def to_json(self) -> dict:
        return {
            "modalities": list(self.modalities),
            "mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "tau": self.tau.tolist(),
            "gamers": [
                {"gamer": g, "skill": float(self.skill[i]), "eta": self.eta[i].tolist()}
                for i, g in enumerate(self.gamers)
            ],
        }


def coverage_counts(n_gamers: int, n_modalities: int, rng: np.random.Generator) -> np.ndarray:
    """Uneven per-pair observation counts: some gamers lack some modalities."""
    counts = np.zeros((n_gamers, n_modalities), dtype=int)
    for j in range(n_modalities):
        share, mean = COVERAGE_PATTERN[j % len(COVERAGE_PATTERN)]
        observed = rng.uniform(size=n_gamers) < share
        counts[:, j] = np.where(observed, 1 + rng.poisson(mean - 1.0, size=n_gamers), 0)
    return counts


def simulate(config: TruthConfig) -> tuple[Dataset, TruthRecord]:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n, m = config.n_gamers, config.n_modalities
    gamers, modalities = config.gamer_names, config.modality_names
    mu = np.array(config.mu)
    sigma = np.array(config.sigma)
    tau = np.array(config.tau)

    eta = mu + sigma * rng.standard_normal((n, m))
    lpp = config.logits_per_pair
    if lpp is None:
        counts = coverage_counts(n, m, rng)
    elif isinstance(lpp, tuple):
        counts = np.array(lpp, dtype=int)
    else:
        counts = np.full((n, m), int(lpp))

    logits = []
    for i in range(n):
        for j in range(m):
            values = eta[i, j] + tau[j] * rng.standard_normal(counts[i, j])
            logits.extend(LogitObservation(gamers[i], modalities[j], t, float(v)) for t, v in enumerate(values))

    skill = eta.sum(axis=1)
    prob = 1.0 / (1.0 + np.exp(-skill))
    rank_a = (rng.uniform(size=n) < prob).astype(int)
    n_val = int(round(config.validation_fraction * n))
    val = np.zeros(n, dtype=bool)
    val[rng.permutation(n)[:n_val]] = True
    ranks = [RankObservation(gamers[i], int(rank_a[i]), "validation" if val[i] else "train") for i in range(n)]

    if not logits and n_val == 0:
        raise ValidationError("simulated dataset has neither logits nor validation ranks")
    dataset = Dataset(gamers, modalities, tuple(logits), tuple(ranks))
    return dataset, TruthRecord(mu, sigma, tau, eta, gamers, modalities)


def recovery_config(seed: int = 0) -> TruthConfig:
    """Benchmark scenario for hyperparameter recovery: 50 gamers, 3 modalities."""
    return TruthConfig(n_gamers=50, n_modalities=3, mu=(-1.0, 0.0, 1.0), sigma=(0.5, 0.5, 0.5),
                       tau=(1.0, 1.0, 1.0), logits_per_pair=10, seed=seed)


def write_truth_json(path, truth: TruthRecord):
    with atomic_write(path) as fh:
        json.dump(truth.to_json(), fh, indent=2)
        fh.write("\n")


class FixedHyperModel:
    """Posterior of the effects ``eta`` (flattened, gamer-major) with mu, sigma, tau held fixed."""

    def __init__(self, dataset: Dataset, mu, sigma, tau):
        m = dataset.n_modalities
        self.mu = np.broadcast_to(np.asarray(mu, dtype=float), (m,)).copy()
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (m,)).copy()
        self.tau = np.broadcast_to(np.asarray(tau, dtype=float), (m,)).copy()
        self.shape = (dataset.n_gamers, m)
        self._counts = dataset.counts
        self._lbar = dataset.logit_mean
        self._ss = dataset.logit_ss
        self._rank_idx, self._rank_val = dataset.validation_ranks()

    @property
    def dim(self) -> int:
        return self.shape[0] * self.shape[1]

    def log_posterior(self, x):
        eta = np.asarray(x, dtype=float).reshape(self.shape)
        resid = (eta - self.mu) / self.sigma
        value = np.sum(-0.5 * resid**2 - np.log(self.sigma) - 0.5 * LOG_2PI)
        grad = -resid / self.sigma
        diff = self._lbar - eta
        value += np.sum(-(self._ss + self._counts * diff**2) / (2 * self.tau**2)
                        - self._counts * (np.log(self.tau) + 0.5 * LOG_2PI))
        grad = grad + self._counts * diff / self.tau**2
        if self._rank_idx.size:
            s = eta[self._rank_idx].sum(axis=1)
            r = self._rank_val
            p = 1.0 / (1.0 + np.exp(-s))
            value += np.sum(r * np.log(np.maximum(p, BERNOULLI_FLOOR))
                            + (1 - r) * np.log(np.maximum(1 - p, BERNOULLI_FLOOR)))
            ds = r * (1 - p) - (1 - r) * p
            grad[self._rank_idx] += ds[:, None]
        value = float(value)
        if not math.isfinite(value):
            raise NumericalError("non-finite log density", location=np.asarray(x).copy())
        return value, grad.ravel()

    __call__ = log_posterior


def conjugate_posterior(mu: float, sigma: float, tau: float, logits) -> tuple[float, float]:
    """Closed-form Normal-Normal posterior (mean, sd) of one effect."""
    logits = np.asarray(logits, dtype=float)
    precision = 1.0 / sigma**2 + logits.size / tau**2
    mean = (mu / sigma**2 + logits.sum() / tau**2) / precision
    return float(mean), float(1.0 / math.sqrt(precision))


def grid_posterior_oracle(dataset: Dataset, mu: float, sigma: float, tau: float,
                          n_nodes: int = 20001, width: float = 10.0) -> tuple[float, float]:
    """Quadrature posterior mean and sd of the single effect of a 1-gamer, 1-modality dataset."""
    if dataset.n_gamers != 1 or dataset.n_modalities != 1:
        raise ValidationError("grid oracle needs exactly one gamer and one modality")
    if n_nodes < 10_000:
        raise ValidationError("grid oracle needs at least 10^4 nodes")
    model = FixedHyperModel(dataset, mu, sigma, tau)
    grid = np.linspace(mu - width * sigma, mu + width * sigma, n_nodes)
    logd = np.array([model.log_posterior(np.array([g]))[0] for g in grid])
    logd -= logd.max()
    dens = np.exp(logd)
    if dens[0] > 1e-12 or dens[-1] > 1e-12:
        raise NumericalError("posterior mass reaches the grid edge; widen the grid", location=(grid[0], grid[-1]))
    norm = trapezoid(dens, grid)
    mean = trapezoid(grid * dens, grid) / norm
    var = trapezoid((grid - mean) ** 2 * dens, grid) / norm
    return float(mean), float(math.sqrt(var))


class SignFlippedGradient:
    """Wraps a model so the sampler sees the negated gradient (mutation test)."""

    def __init__(self, model):
        self.model = model

    def __call__(self, x):
        value, grad = self.model.log_posterior(x)
        return value, -grad


@dataclass
class SbcResult:
    names: list[str]
    ranks: np.ndarray          # (included replicates, parameters)
    histograms: np.ndarray     # (parameters, bins)
    chi_square: np.ndarray
    p_values: np.ndarray
    replicates: int
    excluded: int
    n_draws: int
    bins: int = 20
    max_rhats: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "replicates": self.replicates, "excluded": self.excluded, "n_draws": self.n_draws,
            "parameters": [
                {"name": n, "chi_square": float(c), "p_value": float(p), "histogram": h.tolist()}
                for n, c, p, h in zip(self.names, self.chi_square, self.p_values, self.histograms)
            ],
        }


def _replicate_seed(seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(r,))


def _sbc_replicate(args):
    config, sampler_cfg, priors, r, thin_to, mutate = args
    ss = _replicate_seed(config.seed, r)
    rng = np.random.default_rng(ss)
    m = config.n_modalities
    mu = priors.mu_loc + priors.mu_scale * rng.standard_normal(m)
    sigma = np.abs(priors.sigma_scale * rng.standard_normal(m))
    tau = np.abs(priors.tau_scale * rng.standard_normal(m))
    sim_seed, chain_seed = (int(s) for s in rng.integers(0, 2**63, size=2))
    truth_cfg = replace(config, mu=tuple(mu), sigma=tuple(sigma), tau=tuple(tau), seed=sim_seed)
    dataset, truth = simulate(truth_cfg)

    model = HierarchicalModel(dataset, priors)
    logp = SignFlippedGradient(model) if mutate == "gradient_sign" else model.log_posterior
    cfg = replace(sampler_cfg, seed=chain_seed, n_jobs=1)
    try:
        draws = sample(logp, model.dim, cfg)
    except (ArithmeticError, RuntimeError):
        return None, math.inf

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rh = np.array([rhat(draws.draws[:, :, k]) for k in range(model.dim)])
    max_rhat = float(np.max(rh)) if np.all(np.isfinite(rh)) else math.inf

    idx = model.index
    pooled = draws.pooled()
    total = pooled.shape[0]
    keep = np.floor(np.arange(thin_to) * total / thin_to).astype(int)
    x = pooled[keep]
    quantities = np.column_stack([
        x[:, idx.mu], np.exp(x[:, idx.log_sigma]), np.exp(x[:, idx.log_tau]),
        (x[:, idx.mu] + np.exp(x[:, idx.log_sigma]) * x[:, idx.z].reshape(-1, idx.n_gamers, m)[:, 0, :]).sum(axis=1),
    ])
    true_vals = np.concatenate([truth.mu, truth.sigma, truth.tau, [truth.skill[0]]])
    ranks = np.sum(quantities < true_vals[None, :], axis=0)
    return ranks, max_rhat


def sbc(config: TruthConfig, replicates: int, sampler: SamplerConfig, priors: HyperPriors | None = None,
        thin_to: int = 127, bins: int = 20, max_rhat: float = 1.05, mutate: str | None = None,
        n_jobs: int = 1) -> SbcResult:
    """Simulation-based calibration of the sampler on the pooling model.

    Each replicate draws hyperparameters from the prior, simulates data with
    ``config``'s design, samples the posterior and ranks the truth among
    ``thin_to`` evenly thinned draws for every mu, sigma, tau and gamer 0's
    skill. Replicates whose chains fail or exceed ``max_rhat`` are excluded.
    """
    if replicates < 1:
        raise ValidationError("replicates must be positive")
    if replicates < MIN_SBC_REPLICATES:
        warnings.warn(f"{replicates} SBC replicates give a weak uniformity test; use at least "
                      f"{MIN_SBC_REPLICATES}", RuntimeWarning, stacklevel=2)
    if mutate not in (None, "gradient_sign"):
        raise ValidationError(f"unknown mutation {mutate!r}")
    priors = priors if priors is not None else HyperPriors()
    jobs = [(config, sampler, priors, r, thin_to, mutate) for r in range(replicates)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_sbc_replicate, jobs))
    else:
        results = [_sbc_replicate(j) for j in jobs]

    m = config.n_modalities
    mods = config.modality_names
    names = ([f"mu[{x}]" for x in mods] + [f"sigma[{x}]" for x in mods] + [f"tau[{x}]" for x in mods]
             + [f"skill[{config.gamer_names[0]}]"])
    kept = [r for r, mr in results if r is not None and mr <= max_rhat]
    excluded = replicates - len(kept)
    ranks = np.array(kept, dtype=int).reshape(-1, 3 * m + 1)
    hist, chi2, pvals = rank_uniformity(ranks, thin_to + 1, bins)
    return SbcResult(names, ranks, hist, chi2, pvals, replicates, excluded, thin_to, bins,
                     [mr for _, mr in results])


def rank_uniformity(ranks: np.ndarray, n_levels: int, bins: int = 20):
    """Chi-square test of uniform ranks over ``n_levels`` values, collapsed to ``bins``.

    Expected counts account for bins covering unequal numbers of rank values.
    """
    ranks = np.asarray(ranks, dtype=int)
    n = ranks.shape[0]
    level_bin = (np.arange(n_levels) * bins) // n_levels
    expected_share = np.bincount(level_bin, minlength=bins) / n_levels
    hist = np.array([np.bincount(level_bin[ranks[:, k]], minlength=bins) for k in range(ranks.shape[1])])
    if n == 0:
        nan = np.full(ranks.shape[1], np.nan)
        return hist.reshape(ranks.shape[1], bins), nan, nan
    expected = n * expected_share
    chi2 = np.sum((hist - expected) ** 2 / expected, axis=1)
    pvals = stats.chi2.sf(chi2, df=bins - 1)
    return hist, chi2, pvals
