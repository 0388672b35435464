"""Split-Rhat and effective sample size.

Both take an array of shape ``(chains, draws)`` for a single parameter.
Degenerate input (zero within-chain variance) yields ``nan`` and a warning.
"""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import ValidationError


def _check(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValidationError("expected an array of shape (chains, draws)")
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise ValidationError("need at least 2 chains with at least 4 draws each")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    half = n // 2
    # odd lengths drop the middle draw
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _variances(x: np.ndarray):
    n = x.shape[1]
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    return n, w, b


def rhat(chains) -> float:
    """Split potential scale reduction factor."""
    x = _split(_check(chains))
    n, w, b = _variances(x)
    if not w > 0:
        warnings.warn("split-Rhat undefined: zero within-chain variance", RuntimeWarning, stacklevel=2)
        return float("nan")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    centered = x - x.mean()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real / n
    return acov


def ess(chains) -> float:
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    x = _check(chains)
    m, n = x.shape
    acov = np.array([_autocovariance(row) for row in x])
    w = np.mean(acov[:, 0] * n / (n - 1.0))
    if not w > 0:
        warnings.warn("ESS undefined: zero within-chain variance", RuntimeWarning, stacklevel=2)
        return float("nan")
    means = x.mean(axis=1)
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += means.var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # sum consecutive pairs while positive, then force monotone decrease
    pair_sums = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pair_sums.append(s)
        t += 2
    pairs = np.minimum.accumulate(np.array(pair_sums)) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)
