"""Warmup adaptation: dual-averaging step size and windowed diagonal metric."""
from __future__ import annotations

import math

import numpy as np

from ..errors import NonConvergenceError, NumericalError, ValidationError
from .nuts import NUTS, ChainState


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, step_size: float, target_accept: float = 0.8,
                 gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target_accept - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


class WindowSchedule:
    """Fast / slow-doubling / fast warmup partition.

    Defaults are a 75-iteration initial buffer, a 25-iteration first slow
    window doubling thereafter, and a 50-iteration terminal buffer. When the
    warmup is too short for these, the buffers become 15% / 75% / 10%.
    """

    def __init__(self, num_warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                 base_window: int = 25):
        if num_warmup < 20:
            raise ValidationError(f"warmup must be at least 20 iterations, got {num_warmup}")
        if init_buffer + base_window + term_buffer > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - (init_buffer + term_buffer)
        self.num_warmup = num_warmup
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        self.window_end = self._window_ends(base_window)

    def _window_ends(self, base_window: int) -> list[int]:
        # iteration indices (0-based) at which a slow window closes
        ends = []
        last = self.num_warmup - self.term_buffer - 1
        size = base_window
        end = self.init_buffer + size - 1
        while True:
            if end >= last:
                ends.append(last)
                break
            ends.append(end)
            size *= 2
            nxt = end + size
            if nxt + 2 * size >= self.num_warmup - self.term_buffer:
                nxt = last
            end = nxt
        return ends

    def in_slow_window(self, it: int) -> bool:
        return self.init_buffer <= it < self.num_warmup - self.term_buffer


class WelfordVariance:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def regularized_variance(self) -> np.ndarray:
        n = self.n
        var = self.m2 / (n - 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def find_reasonable_step_size(kernel: NUTS, q, logp, grad, step_size, inv_mass, rng) -> float:
    """Double or halve the step size until a single leapfrog step crosses 0.8 acceptance."""
    log_target = math.log(0.8)
    direction = 0
    for _ in range(200):
        p = rng.standard_normal(q.size) / np.sqrt(inv_mass)
        h0 = -logp + 0.5 * float(np.dot(p, inv_mass * p))
        p1 = p + 0.5 * step_size * grad
        q1 = q + step_size * inv_mass * p1
        logp1, grad1 = kernel._evaluate(q1)
        if grad1 is None:
            delta = -math.inf
        else:
            p1 = p1 + 0.5 * step_size * grad1
            delta = h0 - (-logp1 + 0.5 * float(np.dot(p1, inv_mass * p1)))
            if not math.isfinite(delta):
                delta = -math.inf
        if direction == 0:
            direction = 1 if delta > log_target else -1
        if direction == 1 and not delta > log_target:
            break
        if direction == -1 and not delta < log_target:
            break
        step_size = step_size * 2.0 if direction == 1 else step_size * 0.5
        if step_size > 1e7:
            raise NonConvergenceError("posterior is improper: step size search diverged")
        if step_size < 1e-300:
            raise NonConvergenceError("no acceptable step size found")
    return step_size


def adapt_warmup(state: ChainState, logp_fn, num_warmup: int, target_accept: float = 0.8,
                 max_treedepth: int = 10, record=None) -> ChainState:
    """Run ``num_warmup`` adaptive transitions and return the adapted state.

    ``record`` (optional) is called with ``(iteration, position, stats)`` after
    every warmup transition.
    """
    schedule = WindowSchedule(num_warmup)
    kernel = NUTS(logp_fn, max_treedepth=max_treedepth)
    rng = state.rng
    q = np.asarray(state.position, dtype=float).copy()
    logp, grad = state.log_density, state.gradient
    if grad is None or not math.isfinite(logp):
        try:
            logp, grad = logp_fn(q)
        except NumericalError as exc:
            raise NumericalError("invalid chain initialization", location=q) from exc
    inv_mass = np.asarray(state.inverse_mass_diag, dtype=float).copy()

    eps = find_reasonable_step_size(kernel, q, logp, grad, state.step_size, inv_mass, rng)
    averager = DualAveraging(eps, target_accept)
    estimator = WelfordVariance(q.size)
    window_ends = set(schedule.window_end)
    n_divergent = 0
    for it in range(num_warmup):
        q, logp, grad, stats = kernel.transition(q, logp, grad, eps, inv_mass, rng)
        n_divergent += stats.divergent
        eps = averager.update(stats.accept_stat)
        if record is not None:
            record(it, q, stats)
        if schedule.in_slow_window(it):
            estimator.add(q)
            if it in window_ends:
                inv_mass = estimator.regularized_variance()
                estimator = WelfordVariance(q.size)
                eps = find_reasonable_step_size(kernel, q, logp, grad, eps, inv_mass, rng)
                averager.restart(eps)
    if n_divergent == num_warmup:
        raise NonConvergenceError(f"all {num_warmup} warmup transitions diverged")
    eps = averager.final_step_size()
    return ChainState(position=q, step_size=eps, inverse_mass_diag=inv_mass, rng=rng,
                      log_density=logp, gradient=grad)
