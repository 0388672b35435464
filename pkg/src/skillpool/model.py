"""Hierarchical random-effects pooling model.

Each gamer ``i`` has one latent effect ``eta[i, m]`` per modality ``m``:

    eta[i, m] ~ Normal(mu[m], sigma[m])
    logit[i, t, m] ~ Normal(eta[i, m], tau[m])
    rank_a[i] ~ Bernoulli(inv_logit(sum_m eta[i, m]))     (validation split only)

with ``mu ~ Normal(mu_loc, mu_scale)``, ``sigma ~ HalfNormal(sigma_scale)`` and
``tau ~ HalfNormal(tau_scale)``. Sampling happens on an unconstrained vector
``x = [z (N*M, gamer-major), mu (M), log sigma (M), log tau (M)]`` where the
non-centered map is ``eta = mu + sigma * z``. A centered layout (``eta`` stored
directly in the ``z`` block) is available for cross-checking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .errors import NumericalError, ValidationError

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
BERNOULLI_FLOOR = 1e-12
_LOG_FLOOR = math.log(BERNOULLI_FLOOR)

SPLITS = ("train", "validation")


@dataclass(frozen=True)
class LogitObservation:
    gamer: str
    modality: str
    datapoint: int
    logit: float


@dataclass(frozen=True)
class RankObservation:
    gamer: str
    rank_a: int
    split: str


@dataclass(frozen=True)
class HyperPriors:
    mu_loc: float = 0.0
    mu_scale: float = 2.5
    sigma_scale: float = 1.0
    tau_scale: float = 1.0

    def __post_init__(self):
        for name in ("mu_scale", "sigma_scale", "tau_scale"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive finite number, got {value}")
        if not np.isfinite(self.mu_loc):
            raise ValidationError("mu_loc must be finite")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated collection of logit and rank observations.

    Per-(gamer, modality) sufficient statistics of the logits are computed once
    at construction: count, mean and centered sum of squares.
    """

    gamers: tuple[str, ...]
    modalities: tuple[str, ...]
    logits: tuple[LogitObservation, ...] = ()
    ranks: tuple[RankObservation, ...] = ()
    counts: np.ndarray = field(init=False, repr=False)
    logit_mean: np.ndarray = field(init=False, repr=False)
    logit_ss: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "gamers", tuple(self.gamers))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "logits", tuple(self.logits))
        object.__setattr__(self, "ranks", tuple(self.ranks))
        if not self.gamers:
            raise ValidationError("dataset has no gamers")
        if not self.modalities:
            raise ValidationError("dataset has no modalities")
        gamer_pos = _positions(self.gamers, "gamer")
        modality_pos = _positions(self.modalities, "modality")

        n, m = len(self.gamers), len(self.modalities)
        per_pair: dict[tuple[int, int], list[float]] = {}
        seen = set()
        for obs in self.logits:
            key = (obs.gamer, obs.modality, obs.datapoint)
            if key in seen:
                raise ValidationError(f"duplicate logit observation {key}")
            seen.add(key)
            if obs.gamer not in gamer_pos:
                raise ValidationError(f"logit references unknown gamer {obs.gamer!r}")
            if obs.modality not in modality_pos:
                raise ValidationError(f"logit references unknown modality {obs.modality!r}")
            if not isinstance(obs.datapoint, (int, np.integer)) or obs.datapoint < 0:
                raise ValidationError(f"datapoint must be a non-negative integer: {key}")
            if not math.isfinite(obs.logit):
                raise ValidationError(f"non-finite logit at {key}")
            per_pair.setdefault((gamer_pos[obs.gamer], modality_pos[obs.modality]), []).append(obs.logit)

        ranked = set()
        for obs in self.ranks:
            if obs.gamer not in gamer_pos:
                raise ValidationError(f"rank references unknown gamer {obs.gamer!r}")
            if obs.gamer in ranked:
                raise ValidationError(f"more than one rank observation for gamer {obs.gamer!r}")
            ranked.add(obs.gamer)
            if obs.rank_a not in (0, 1):
                raise ValidationError(f"rank_a must be 0 or 1 for gamer {obs.gamer!r}")
            if obs.split not in SPLITS:
                raise ValidationError(f"split must be one of {SPLITS} for gamer {obs.gamer!r}")

        if not self.logits and not any(r.split == "validation" for r in self.ranks):
            raise ValidationError("dataset needs at least one logit or one validation rank")

        counts = np.zeros((n, m))
        mean = np.zeros((n, m))
        ss = np.zeros((n, m))
        for (i, j), values in per_pair.items():
            arr = np.sort(np.asarray(values, dtype=float))
            counts[i, j] = arr.size
            mean[i, j] = arr.mean()
            ss[i, j] = np.sum((arr - mean[i, j]) ** 2)
        for arr in (counts, mean, ss):
            arr.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "logit_mean", mean)
        object.__setattr__(self, "logit_ss", ss)

    @property
    def n_gamers(self) -> int:
        return len(self.gamers)

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    def gamer_index(self, gamer: str) -> int:
        try:
            return self.gamers.index(gamer)
        except ValueError:
            raise ValidationError(f"unknown gamer {gamer!r}") from None

    def modalities_observed(self) -> np.ndarray:
        """Number of modalities with at least one logit, per gamer."""
        return (self.counts > 0).sum(axis=1)

    def validation_ranks(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (gamer positions, rank_a values) of validation-split ranks."""
        pos = {g: i for i, g in enumerate(self.gamers)}
        rows = sorted((pos[r.gamer], r.rank_a) for r in self.ranks if r.split == "validation")
        idx = np.array([i for i, _ in rows], dtype=int)
        vals = np.array([v for _, v in rows], dtype=float)
        return idx, vals


def _positions(items: Sequence[str], what: str) -> dict[str, int]:
    pos = {}
    for k, item in enumerate(items):
        if not isinstance(item, str) or not item:
            raise ValidationError(f"{what} ids must be non-empty strings, got {item!r}")
        if item in pos:
            raise ValidationError(f"duplicate {what} id {item!r}")
        pos[item] = k
    return pos


@dataclass(frozen=True)
class ParameterIndex:
    """Flat layout of the unconstrained parameter vector."""

    gamers: tuple[str, ...]
    modalities: tuple[str, ...]

    @property
    def n_gamers(self) -> int:
        return len(self.gamers)

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def dim(self) -> int:
        return self.n_gamers * self.n_modalities + 3 * self.n_modalities

    @property
    def z(self) -> slice:
        return slice(0, self.n_gamers * self.n_modalities)

    @property
    def mu(self) -> slice:
        start = self.n_gamers * self.n_modalities
        return slice(start, start + self.n_modalities)

    @property
    def log_sigma(self) -> slice:
        start = self.mu.stop
        return slice(start, start + self.n_modalities)

    @property
    def log_tau(self) -> slice:
        start = self.log_sigma.stop
        return slice(start, start + self.n_modalities)

    def z_offset(self, gamer: int, modality: int) -> int:
        return gamer * self.n_modalities + modality

    def names(self) -> list[str]:
        out = [f"z[{g}|{m}]" for g in self.gamers for m in self.modalities]
        for block in ("mu", "log_sigma", "log_tau"):
            out.extend(f"{block}[{m}]" for m in self.modalities)
        return out


def build_index(dataset: Dataset) -> ParameterIndex:
    if not isinstance(dataset, Dataset):
        raise ValidationError("build_index expects a Dataset")
    return ParameterIndex(dataset.gamers, dataset.modalities)


@dataclass(frozen=True)
class ConstrainedParams:
    index: ParameterIndex
    mu: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    eta: np.ndarray  # (N, M)

    def skill(self) -> np.ndarray:
        return self.eta.sum(axis=1)


def constrain(params, index: ParameterIndex, centered: bool = False) -> ConstrainedParams:
    x = np.asarray(params, dtype=float)
    if x.shape != (index.dim,):
        raise ValidationError(f"parameter vector has shape {x.shape}, expected ({index.dim},)")
    n, m = index.n_gamers, index.n_modalities
    mu = x[index.mu]
    sigma = np.exp(x[index.log_sigma])
    tau = np.exp(x[index.log_tau])
    block = x[index.z].reshape(n, m)
    eta = block.copy() if centered else mu + sigma * block
    return ConstrainedParams(index, mu, sigma, tau, eta)


def skill_of(constrained: ConstrainedParams, gamer: str) -> float:
    try:
        i = constrained.index.gamers.index(gamer)
    except ValueError:
        raise ValidationError(f"unknown gamer {gamer!r}") from None
    return float(np.sum(constrained.eta[i]))


def _log_sigmoid(x):
    # log(1 / (1 + exp(-x))) without overflow
    return -np.logaddexp(0.0, -x)


@numba.njit(cache=True)
def _log_posterior_kernel(x, n, m, counts, lbar, ss, rank_idx, rank_val,
                          mu_loc, mu_scale, sigma_scale, tau_scale, centered):
    grad = np.zeros(x.size)
    nz = n * m
    value = 0.0
    mu = x[nz:nz + m]
    log_sigma = x[nz + m:nz + 2 * m]
    log_tau = x[nz + 2 * m:nz + 3 * m]
    sigma = np.exp(log_sigma)
    inv_tau2 = np.exp(-2.0 * log_tau)
    eta = np.empty((n, m))
    for j in range(m):
        d = (mu[j] - mu_loc) / mu_scale
        tau = math.exp(log_tau[j])
        value += (-0.5 * d * d - math.log(mu_scale) - 0.5 * LOG_2PI
                  + LOG_2 - math.log(sigma_scale) - 0.5 * LOG_2PI - 0.5 * (sigma[j] / sigma_scale) ** 2
                  + LOG_2 - math.log(tau_scale) - 0.5 * LOG_2PI - 0.5 * (tau / tau_scale) ** 2
                  + log_sigma[j] + log_tau[j])
        grad[nz + j] = -d / mu_scale
        grad[nz + m + j] = 1.0 - (sigma[j] / sigma_scale) ** 2
        grad[nz + 2 * m + j] = 1.0 - (tau / tau_scale) ** 2
    for i in range(n):
        for j in range(m):
            b = x[i * m + j]
            if centered:
                eta[i, j] = b
                r = (b - mu[j]) / sigma[j]
                value += -0.5 * r * r - log_sigma[j] - 0.5 * LOG_2PI
                grad[i * m + j] = -r / sigma[j]
                grad[nz + j] += r / sigma[j]
                grad[nz + m + j] += r * r - 1.0
            else:
                eta[i, j] = mu[j] + sigma[j] * b
                value += -0.5 * b * b - 0.5 * LOG_2PI
                grad[i * m + j] = -b
    dlik = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            t = counts[i, j]
            if t > 0:
                diff = lbar[i, j] - eta[i, j]
                quad = ss[i, j] + t * diff * diff
                value += -t * log_tau[j] - 0.5 * LOG_2PI * t - 0.5 * quad * inv_tau2[j]
                dlik[i, j] = t * diff * inv_tau2[j]
                grad[nz + 2 * m + j] += -t + quad * inv_tau2[j]
    for k in range(rank_idx.size):
        i = rank_idx[k]
        s = 0.0
        for j in range(m):
            s += eta[i, j]
        log_p = -np.logaddexp(0.0, -s)
        log_q = -np.logaddexp(0.0, s)
        r = rank_val[k]
        ds = 0.0
        if log_p < _LOG_FLOOR:
            value += r * _LOG_FLOOR
        else:
            value += r * log_p
            ds += r * math.exp(log_q)
        if log_q < _LOG_FLOOR:
            value += (1.0 - r) * _LOG_FLOOR
        else:
            value += (1.0 - r) * log_q
            ds -= (1.0 - r) * math.exp(log_p)
        for j in range(m):
            dlik[i, j] += ds
    for i in range(n):
        for j in range(m):
            g = dlik[i, j]
            if centered:
                grad[i * m + j] += g
            else:
                grad[i * m + j] += sigma[j] * g
                grad[nz + j] += g
                grad[nz + m + j] += g * sigma[j] * x[i * m + j]
    finite = math.isfinite(value)
    for k in range(grad.size):
        finite = finite and math.isfinite(grad[k])
    return value, grad, finite


class HierarchicalModel:
    """Log posterior and gradient of the pooling model on the unconstrained vector.

    Instances are immutable and picklable, so the bound ``log_posterior`` can be
    handed to worker processes. ``log_posterior`` runs a compiled kernel;
    ``log_posterior_reference`` is the same density written with array
    operations and serves as a cross-check.
    """

    def __init__(self, dataset: Dataset, priors: HyperPriors | None = None, centered: bool = False):
        self.dataset = dataset
        self.priors = priors if priors is not None else HyperPriors()
        self.centered = centered
        self.index = build_index(dataset)
        self._counts = dataset.counts
        self._lbar = dataset.logit_mean
        self._ss = dataset.logit_ss
        self._count_m = self._counts.sum(axis=0)
        self._rank_idx, self._rank_val = dataset.validation_ranks()
        self._n = self.index.n_gamers
        self._m = self.index.n_modalities
        self._dim = self.index.dim

    @property
    def dim(self) -> int:
        return self.index.dim

    def _check(self, x) -> np.ndarray:
        if type(x) is not np.ndarray or x.dtype != np.float64:
            x = np.asarray(x, dtype=float)
        if x.shape != (self._dim,):
            raise ValidationError(f"parameter vector has shape {x.shape}, expected ({self._dim},)")
        return x

    def log_posterior(self, x) -> tuple[float, np.ndarray]:
        x = self._check(x)
        p = self.priors
        value, grad, finite = _log_posterior_kernel(
            x, self._n, self._m, self._counts, self._lbar, self._ss, self._rank_idx, self._rank_val,
            p.mu_loc, p.mu_scale, p.sigma_scale, p.tau_scale, self.centered)
        if not finite:
            raise NumericalError("non-finite log posterior or gradient", location=x.copy())
        return value, grad

    __call__ = log_posterior

    def log_posterior_reference(self, x) -> tuple[float, np.ndarray]:
        x = self._check(x)
        idx = self.index
        pri = self.priors
        n, m = idx.n_gamers, idx.n_modalities

        block = x[idx.z].reshape(n, m)
        mu = x[idx.mu]
        log_sigma = x[idx.log_sigma]
        log_tau = x[idx.log_tau]
        with np.errstate(over="ignore", invalid="ignore"):
            sigma = np.exp(log_sigma)
            tau = np.exp(log_tau)
            inv_tau2 = np.exp(-2.0 * log_tau)

            # hyperpriors, with the log-Jacobian of the exp transforms
            dmu = (mu - pri.mu_loc) / pri.mu_scale
            value = np.sum(-0.5 * dmu**2 - math.log(pri.mu_scale) - 0.5 * LOG_2PI)
            value += np.sum(LOG_2 - math.log(pri.sigma_scale) - 0.5 * LOG_2PI - 0.5 * (sigma / pri.sigma_scale) ** 2)
            value += np.sum(LOG_2 - math.log(pri.tau_scale) - 0.5 * LOG_2PI - 0.5 * (tau / pri.tau_scale) ** 2)
            value += np.sum(log_sigma) + np.sum(log_tau)
            g_mu = -dmu / pri.mu_scale
            g_log_sigma = 1.0 - (sigma / pri.sigma_scale) ** 2
            g_log_tau = 1.0 - (tau / pri.tau_scale) ** 2

            # random effects
            if self.centered:
                eta = block
                resid = (eta - mu) / sigma
                value += np.sum(-0.5 * resid**2 - log_sigma - 0.5 * LOG_2PI)
                g_eta = -resid / sigma
                g_mu = g_mu + np.sum(resid / sigma, axis=0)
                g_log_sigma = g_log_sigma + np.sum(resid**2 - 1.0, axis=0)
            else:
                eta = mu + sigma * block
                value += np.sum(-0.5 * block**2) - 0.5 * LOG_2PI * block.size
                g_eta = np.zeros_like(eta)

            # logits via sufficient statistics: sum_t (l - eta)^2 = ss + T (lbar - eta)^2
            diff = self._lbar - eta
            quad = self._ss + self._counts * diff**2
            value += np.sum(-self._count_m * log_tau - 0.5 * LOG_2PI * self._count_m)
            value += np.sum(-0.5 * np.sum(quad, axis=0) * inv_tau2)
            dlik = self._counts * diff * inv_tau2
            g_log_tau = g_log_tau - self._count_m + np.sum(quad, axis=0) * inv_tau2

            # validation ranks through the summed skill
            if self._rank_idx.size:
                s = eta[self._rank_idx].sum(axis=1)
                r = self._rank_val
                log_p = _log_sigmoid(s)
                log_q = _log_sigmoid(-s)
                clamp_p = log_p < _LOG_FLOOR
                clamp_q = log_q < _LOG_FLOOR
                value += np.sum(r * np.maximum(log_p, _LOG_FLOOR) + (1 - r) * np.maximum(log_q, _LOG_FLOOR))
                # d/ds log sigmoid(s) = sigmoid(-s) = exp(log_q)
                ds = r * np.where(clamp_p, 0.0, np.exp(log_q)) - (1 - r) * np.where(clamp_q, 0.0, np.exp(log_p))
                dlik[self._rank_idx] += ds[:, None]

            g_eta = g_eta + dlik
            if self.centered:
                g_block = g_eta
            else:
                g_block = -block + sigma * dlik
                g_mu = g_mu + np.sum(dlik, axis=0)
                g_log_sigma = g_log_sigma + np.sum(dlik * sigma * block, axis=0)

            grad = np.concatenate([g_block.ravel(), g_mu, g_log_sigma, g_log_tau])
            value = float(value)
        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite log posterior or gradient", location=x.copy())
        return value, grad

    def constrain(self, x) -> ConstrainedParams:
        return constrain(x, self.index, centered=self.centered)


def log_posterior(params, dataset: Dataset, priors: HyperPriors | None = None,
                  centered: bool = False) -> tuple[float, np.ndarray]:
    """Joint log posterior (with normalizing constants) and its exact gradient."""
    return HierarchicalModel(dataset, priors, centered=centered).log_posterior(params)
