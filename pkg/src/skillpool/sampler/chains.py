"""Multi-chain execution, draw containers and exports.

Chain ``k`` draws from ``numpy.random.Generator(PCG64(SeedSequence(seed, spawn_key=(k,))))``.
The per-chain streams are determined by ``(seed, k)`` alone, so results do not
depend on how many worker processes run the chains or in which order.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NonConvergenceError, NumericalError, ValidationError
from ..io import atomic_write
from ..model import HierarchicalModel
from .adaptation import adapt_warmup
from .diagnostics import ess, rhat
from .nuts import NUTS, ChainState

INIT_RETRIES = 100


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 20000
    warmup: int = 10000
    seed: int = 0
    target_accept: float = 0.8
    max_treedepth: int = 10
    init_radius: float = 2.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValidationError("chains must be >= 1")
        if self.warmup < 1:
            raise ValidationError("warmup must be positive")
        if self.iterations <= self.warmup:
            raise ValidationError("iterations must exceed warmup")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 0:
            raise ValidationError("max_treedepth must be non-negative")
        if not self.init_radius > 0:
            raise ValidationError("init_radius must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def draws_per_chain(self) -> int:
        return self.iterations - self.warmup


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chain,))))


@dataclass
class Diagnostics:
    names: list[str]
    rhat: np.ndarray
    ess: np.ndarray
    divergences: int
    step_sizes: list[float]

    def max_rhat(self) -> float:
        finite = self.rhat[np.isfinite(self.rhat)]
        return float(finite.max()) if finite.size else math.nan

    def to_json(self) -> dict:
        return {
            "divergences": int(self.divergences),
            "step_sizes": [float(s) for s in self.step_sizes],
            "max_rhat": _json_float(self.max_rhat()),
            "parameters": [
                {"name": n, "rhat": _json_float(r), "ess": _json_float(e)}
                for n, r, e in zip(self.names, self.rhat, self.ess)
            ],
        }


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class MultiChainDraws:
    """Post-warmup draws, shape ``(chains, draws, dim)``, plus per-draw sampler stats."""

    draws: np.ndarray
    names: list[str]
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray
    inverse_mass_diag: np.ndarray
    warmup_divergences: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    def divergences(self) -> np.ndarray:
        return self.divergent.sum(axis=1)

    def parameter(self, k: int) -> np.ndarray:
        return self.draws[:, :, k]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.dim)

    def diagnostics(self, columns=None) -> Diagnostics:
        cols = range(self.dim) if columns is None else columns
        r, e = [], []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for k in cols:
                r.append(rhat(self.draws[:, :, k]))
                e.append(ess(self.draws[:, :, k]))
        names = [self.names[k] for k in cols]
        return Diagnostics(names, np.array(r), np.array(e), int(self.divergent.sum()),
                           [float(s) for s in self.step_size])

    def write_csv(self, directory, prefix: str = "draws_chain") -> list[Path]:
        directory = Path(directory)
        paths = []
        for c in range(self.n_chains):
            path = directory / f"{prefix}{c}.csv"
            write_draws_csv(path, self.names, self.draws[c])
            paths.append(path)
        return paths


def write_draws_csv(path, names, matrix):
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        np.savetxt(fh, matrix, delimiter=",", fmt="%.17g")


def read_draws_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        names = next(csv.reader(fh))
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    return names, values


def write_diagnostics_json(path, diagnostics: Diagnostics):
    with atomic_write(path) as fh:
        json.dump(diagnostics.to_json(), fh, indent=2)
        fh.write("\n")


def initial_position(logp_fn, dim, radius, rng):
    for _ in range(INIT_RETRIES):
        q = rng.uniform(-radius, radius, size=dim)
        try:
            logp, grad = logp_fn(q)
        except NumericalError:
            continue
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return q, logp, grad
    raise NonConvergenceError(f"no finite initial point after {INIT_RETRIES} attempts")


def run_chain(logp_fn, dim: int, config: SamplerConfig, chain: int, init=None):
    """Warm up and sample one chain; returns a dict of arrays."""
    rng = chain_rng(config.seed, chain)
    if init is None:
        q, logp, grad = initial_position(logp_fn, dim, config.init_radius, rng)
    else:
        q = np.asarray(init, dtype=float).copy()
        logp, grad = logp_fn(q)
    warm_div = [0]

    def count(_it, _q, stats):
        warm_div[0] += stats.divergent

    state = ChainState(q, step_size=1.0, inverse_mass_diag=np.ones(dim), rng=rng,
                       log_density=logp, gradient=grad)
    state = adapt_warmup(state, logp_fn, config.warmup, config.target_accept,
                         config.max_treedepth, record=count)

    kernel = NUTS(logp_fn, max_treedepth=config.max_treedepth)
    n = config.draws_per_chain
    out = np.empty((n, dim))
    accept = np.empty(n)
    depth = np.empty(n, dtype=int)
    leapfrogs = np.empty(n, dtype=int)
    divergent = np.zeros(n, dtype=bool)
    q, logp, grad = state.position, state.log_density, state.gradient
    eps, inv_mass = state.step_size, state.inverse_mass_diag
    for t in range(n):
        q, logp, grad, stats = kernel.transition(q, logp, grad, eps, inv_mass, rng)
        out[t] = q
        accept[t] = stats.accept_stat
        depth[t] = stats.tree_depth
        leapfrogs[t] = stats.n_leapfrog
        divergent[t] = stats.divergent
    return {
        "draws": out, "accept_stat": accept, "tree_depth": depth, "n_leapfrog": leapfrogs,
        "divergent": divergent, "step_size": eps, "inverse_mass_diag": inv_mass,
        "warmup_divergences": warm_div[0],
    }


def _run_chain_job(args):
    return run_chain(*args)


def sample(logp_fn, dim: int, config: SamplerConfig, names=None, inits=None) -> MultiChainDraws:
    """Run ``config.chains`` independent chains on an arbitrary log density.

    With ``config.n_jobs > 1`` chains run in worker processes, so ``logp_fn``
    must be picklable.
    """
    jobs = [(logp_fn, dim, config, c, None if inits is None else inits[c]) for c in range(config.chains)]
    if config.n_jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, config.chains)) as pool:
            results = list(pool.map(_run_chain_job, jobs))
    else:
        results = [_run_chain_job(j) for j in jobs]
    names = list(names) if names is not None else [f"x[{k}]" for k in range(dim)]
    return MultiChainDraws(
        draws=np.stack([r["draws"] for r in results]),
        names=names,
        accept_stat=np.stack([r["accept_stat"] for r in results]),
        tree_depth=np.stack([r["tree_depth"] for r in results]),
        n_leapfrog=np.stack([r["n_leapfrog"] for r in results]),
        divergent=np.stack([r["divergent"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        inverse_mass_diag=np.stack([r["inverse_mass_diag"] for r in results]),
        warmup_divergences=np.array([r["warmup_divergences"] for r in results]),
    )


def run_chains(dataset, priors=None, config: SamplerConfig | None = None,
               centered: bool = False) -> MultiChainDraws:
    """Sample the pooling model posterior for ``dataset``."""
    config = config if config is not None else SamplerConfig()
    model = HierarchicalModel(dataset, priors, centered=centered)
    return sample(model.log_posterior, model.dim, config, names=model.index.names())
