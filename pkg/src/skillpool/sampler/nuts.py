"""No-U-Turn Hamiltonian Monte Carlo with a diagonal Euclidean metric.

Trajectories are built by repeated doubling in a random direction. Within a
subtree the proposal is drawn multinomially in proportion to ``exp(-H)``; at
the top level the new subtree replaces the current sample with probability
``min(1, w_subtree / w_tree)`` (biased progressive sampling). Termination uses
the generalized U-turn criterion on summed momenta, including the two extra
checks that join each pair of neighbouring subtrees.

``logp_fn`` everywhere is a callable ``x -> (log_density, gradient)``. It may
raise :class:`~skillpool.errors.NumericalError`; inside a trajectory that is
treated as a divergence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..errors import DivergenceError, NumericalError, ValidationError

MAX_ENERGY_ERROR = 1000.0

LogpFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def leapfrog(position, momentum, gradient_fn, step_size, inverse_mass_diag):
    """One velocity-Verlet step: half kick, drift, half kick.

    ``gradient_fn`` returns the gradient of the log density. A non-finite
    gradient raises :class:`DivergenceError`.
    """
    q = np.asarray(position, dtype=float)
    p = np.asarray(momentum, dtype=float)
    g = np.asarray(gradient_fn(q), dtype=float)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient at start of leapfrog step", location=q)
    p = p + 0.5 * step_size * g
    q = q + step_size * inverse_mass_diag * p
    g = np.asarray(gradient_fn(q), dtype=float)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient after drift", location=q)
    p = p + 0.5 * step_size * g
    return q, p


@dataclass(frozen=True)
class ChainState:
    position: np.ndarray
    step_size: float
    inverse_mass_diag: np.ndarray
    rng: np.random.Generator
    log_density: float = math.nan
    gradient: np.ndarray | None = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValidationError("step_size must be positive")
        if np.any(np.asarray(self.inverse_mass_diag) <= 0):
            raise ValidationError("inverse_mass_diag entries must be positive")


@dataclass(frozen=True)
class TransitionStats:
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool
    energy: float
    log_density: float


class _Point:
    __slots__ = ("q", "p", "logp", "grad")

    def __init__(self, q, p, logp, grad):
        self.q = q
        self.p = p
        self.logp = logp
        self.grad = grad


class _Subtree:
    __slots__ = ("edge", "propose", "log_w", "rho", "p_beg", "p_end", "s_beg", "s_end")

    def __init__(self, edge, propose, log_w, rho, p_beg, p_end, s_beg, s_end):
        self.edge = edge
        self.propose = propose
        self.log_w = log_w
        self.rho = rho
        self.p_beg = p_beg
        self.p_end = p_end
        self.s_beg = s_beg
        self.s_end = s_end


def _no_u_turn(s_minus, s_plus, rho) -> bool:
    return float(np.dot(s_minus, rho)) > 0.0 and float(np.dot(s_plus, rho)) > 0.0


class NUTS:
    """Transition kernel bound to one log density."""

    def __init__(self, logp_fn: LogpFn, max_treedepth: int = 10,
                 max_energy_error: float = MAX_ENERGY_ERROR):
        if max_treedepth < 0:
            raise ValidationError("max_treedepth must be non-negative")
        self.logp_fn = logp_fn
        self.max_treedepth = max_treedepth
        self.max_energy_error = max_energy_error

    def _evaluate(self, q):
        try:
            logp, grad = self.logp_fn(q)
        except NumericalError:
            return -math.inf, None
        # a non-finite gradient surfaces as a non-finite energy in _leaf
        if not math.isfinite(logp):
            return -math.inf, None
        return logp, grad

    def transition(self, q, logp, grad, step_size, inv_mass, rng):
        """Run one NUTS transition from ``q``; returns (q, logp, grad, stats)."""
        if not math.isfinite(logp):
            raise NumericalError("non-finite log density at start of transition", location=q)
        self._eps = step_size
        self._inv_mass = inv_mass
        self._rng = rng
        self._n_leapfrog = 0
        self._sum_metro = 0.0
        self._divergent = False

        p0 = rng.standard_normal(q.size) / np.sqrt(inv_mass)
        start = _Point(q, p0, logp, grad)
        s0 = inv_mass * p0
        self._H0 = -logp + 0.5 * float(np.dot(p0, s0))

        fwd = bck = start
        p_fwd = p_bck = p0
        s_fwd = s_bck = s0
        rho = p0
        log_w = 0.0
        sample = start
        depth = 0
        limit = max(self.max_treedepth, 1)
        while depth < limit:
            forward = rng.uniform() > 0.5
            sub = self._build(depth, fwd if forward else bck, 1.0 if forward else -1.0)
            if sub.edge is None:
                break
            depth += 1

            if sub.log_w > log_w:
                sample = sub.propose
            elif rng.uniform() < math.exp(sub.log_w - log_w):
                sample = sub.propose
            log_w = np.logaddexp(log_w, sub.log_w)

            # sub.*_beg touches the existing tree, sub.*_end is the new extreme
            if forward:
                persist = _no_u_turn(s_bck, sub.s_end, rho + sub.rho)
                persist &= _no_u_turn(s_bck, sub.s_beg, rho + sub.p_beg)
                persist &= _no_u_turn(s_fwd, sub.s_end, sub.rho + p_fwd)
                fwd, p_fwd, s_fwd = sub.edge, sub.p_end, sub.s_end
            else:
                persist = _no_u_turn(s_fwd, sub.s_end, rho + sub.rho)
                persist &= _no_u_turn(s_fwd, sub.s_beg, rho + sub.p_beg)
                persist &= _no_u_turn(s_bck, sub.s_end, sub.rho + p_bck)
                bck, p_bck, s_bck = sub.edge, sub.p_end, sub.s_end
            rho = rho + sub.rho
            if not persist or self.max_treedepth == 0:
                break

        n = self._n_leapfrog
        energy = -sample.logp + 0.5 * float(np.dot(sample.p, inv_mass * sample.p))
        stats = TransitionStats(
            accept_stat=self._sum_metro / n if n else 0.0,
            tree_depth=depth if self.max_treedepth > 0 else 0,
            n_leapfrog=n,
            divergent=self._divergent,
            energy=energy,
            log_density=sample.logp,
        )
        del self._rng
        return sample.q, sample.logp, sample.grad, stats

    def _leaf(self, z: _Point, sign: float):
        eps = sign * self._eps
        inv_mass = self._inv_mass
        self._n_leapfrog += 1
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * inv_mass * p
        logp, grad = self._evaluate(q)
        if grad is None:
            h = math.inf
        else:
            p = p + 0.5 * eps * grad
            h = -logp + 0.5 * float(np.dot(p, inv_mass * p))
            if not math.isfinite(h):
                h = math.inf
        delta = self._H0 - h
        self._sum_metro += 1.0 if delta > 0 else math.exp(delta)
        if h - self._H0 > self.max_energy_error:
            self._divergent = True
            return None
        point = _Point(q, p, logp, grad)
        s = inv_mass * p
        return _Subtree(point, point, delta, p, p, p, s, s)

    def _build(self, depth: int, z: _Point, sign: float):
        """Extend ``depth`` doublings from ``z``; ``edge is None`` marks an invalid subtree."""
        if depth == 0:
            leaf = self._leaf(z, sign)
            return leaf if leaf is not None else _INVALID

        init = self._build(depth - 1, z, sign)
        if init.edge is None:
            return init
        final = self._build(depth - 1, init.edge, sign)
        if final.edge is None:
            return final

        log_w = np.logaddexp(init.log_w, final.log_w)
        propose = init.propose
        if final.log_w > log_w or self._rng.uniform() < math.exp(final.log_w - log_w):
            propose = final.propose

        rho = init.rho + final.rho
        persist = _no_u_turn(init.s_beg, final.s_end, rho)
        persist &= _no_u_turn(init.s_beg, final.s_beg, init.rho + final.p_beg)
        persist &= _no_u_turn(init.s_end, final.s_end, final.rho + init.p_end)
        if not persist:
            return _INVALID
        return _Subtree(final.edge, propose, log_w, rho, init.p_beg, final.p_end, init.s_beg, final.s_end)


_INVALID = _Subtree(None, None, -math.inf, None, None, None, None, None)


def nuts_transition(state: ChainState, logp_fn: LogpFn, max_treedepth: int = 10):
    """One NUTS transition from ``state``; returns (new state, TransitionStats)."""
    q = np.asarray(state.position, dtype=float)
    logp, grad = state.log_density, state.gradient
    if grad is None or not math.isfinite(logp):
        try:
            logp, grad = logp_fn(q)
        except NumericalError as exc:
            raise NumericalError("invalid chain initialization: non-finite log density", location=q) from exc
    if not math.isfinite(logp):
        raise NumericalError("invalid chain initialization: non-finite log density", location=q)
    kernel = NUTS(logp_fn, max_treedepth=max_treedepth)
    q, logp, grad, stats = kernel.transition(q, logp, grad, state.step_size,
                                             np.asarray(state.inverse_mass_diag, dtype=float), state.rng)
    return replace(state, position=q, log_density=logp, gradient=grad), stats
