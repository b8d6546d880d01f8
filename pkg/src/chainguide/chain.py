"""Jump-chain simulation and the exact distribution oracle.

The particle chain jumps one particle at a time: a move of type i to type j
occurs at instantaneous rate counts_i * Q_ij(t, x, u, v) (equivalently
x_i Q_ij / h). Simulation is exact by thinning against the constant
dominating rate (d-1) K / h: candidate times arrive as a Poisson stream at
the dominating rate, the source type is sampled from the current mix, the
target type uniformly, and the candidate is accepted with probability
Q_ij / K. For enumerable lattices the forward equations are integrated
directly and serve as the oracle the simulator is validated against.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .models import estimate_constants
from .simplex import LatticeState, single_jump_neighbors
from .value import SimplexGrid

PROB_SUM_TOL = 1e-10
NEGATIVE_PROB_TOL = 1e-9


class RateBoundError(RuntimeError):
    """The model produced a rate above its declared bound; thinning is unsound."""


class IntegrationError(RuntimeError):
    """The forward-equation integrator produced an invalid distribution."""


@dataclass(frozen=True)
class JumpEvent:
    time: float
    from_type: int
    to_type: int

    def __post_init__(self):
        if self.from_type == self.to_type:
            raise ValueError("jump must move between distinct types")


@dataclass
class PathSample:
    """One realized trajectory: piecewise constant, right-continuous."""

    initial: LatticeState
    t0: float
    t1: float
    events: list = field(default_factory=list)
    candidates: int = 0
    _final: Optional[np.ndarray] = None

    def __post_init__(self):
        times = [e.time for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump times must be strictly increasing")

    def final_counts(self):
        if self._final is not None:
            return self._final.copy()
        counts = self.initial.counts.copy()
        for e in self.events:
            counts[e.from_type] -= 1
            counts[e.to_type] += 1
        return counts

    def state_at(self, t):
        """State immediately after the last jump at or before t."""
        if t < self.t0:
            raise ValueError("time precedes the path start")
        counts = self.initial.counts.copy()
        idx = bisect_right([e.time for e in self.events], t)
        for e in self.events[:idx]:
            counts[e.from_type] -= 1
            counts[e.to_type] += 1
        return LatticeState(counts)


def _as_policy(control) -> Callable:
    if callable(control):
        return control
    value = float(control)
    return lambda t, counts: value


def _dominating_rate(model, total, rate_bound):
    k = rate_bound
    if k is None:
        k = model.declared_k
    if k is None:
        k = estimate_constants(model).constants.k
    return k, (model.dimension - 1) * k * total


def simulate_chain(model, t0, t1, y, u_policy, v_policy, rng, rate_bound=None,
                   record_events=True):
    """Simulate the chain over [t0, t1] from lattice state y by thinning.

    ``u_policy`` and ``v_policy`` are callables (t, counts) -> control value
    (plain numbers are promoted to constant policies); they are consulted at
    every candidate jump time, so piecewise-constant time variation and
    state feedback are both supported. Raises RateBoundError if the model
    ever produces an off-diagonal rate above the bound used for thinning.
    """
    if not isinstance(y, LatticeState):
        y = LatticeState(y)
    if y.dimension != model.dimension:
        raise ValueError("state dimension does not match the model")
    if not t0 < t1 <= model.horizon + 1e-12:
        raise ValueError("need t0 < t1 <= horizon")
    u_fn = _as_policy(u_policy)
    v_fn = _as_policy(v_policy)
    k_bound, lam = _dominating_rate(model, y.total, rate_bound)
    path = PathSample(initial=y, t0=float(t0), t1=float(t1))
    if lam <= 0.0:
        return path
    d = model.dimension
    total = y.total
    counts = y.counts.astype(float).copy()
    inv_total = 1.0 / total
    t = float(t0)
    events = path.events
    n_candidates = 0
    while True:
        t += rng.exponential(1.0 / lam)
        if t >= t1:
            break
        n_candidates += 1
        x = counts * inv_total
        # source type from the current mix, target uniform among the rest
        cdf = np.cumsum(x)
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, d - 1)
        j = int(rng.integers(d - 1))
        if j >= i:
            j += 1
        u = u_fn(t, counts)
        v = v_fn(t, counts)
        q = float(model.rate_matrix(t, x, u, v)[i, j])
        if q > k_bound * (1.0 + 1e-9):
            raise RateBoundError(
                f"rate Q[{i},{j}]={q:.6g} exceeds bound {k_bound:.6g} at t={t:.6g}, x={x}")
        if q < 0.0:
            raise RateBoundError(f"negative rate Q[{i},{j}]={q:.6g} at t={t:.6g}")
        if rng.random() * k_bound < q:
            counts[i] -= 1.0
            counts[j] += 1.0
            if record_events:
                events.append(JumpEvent(t, i, j))
    path.candidates = n_candidates
    if not record_events:
        path._final = counts.astype(np.int64)
    return path


@dataclass
class Distribution:
    """Probability weights over an enumerated lattice."""

    space: SimplexGrid
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (self.space.node_count,):
            raise ValueError("probability vector does not match the state space")
        if p.min() < -NEGATIVE_PROB_TOL:
            raise ValueError(f"negative probability {p.min():.3e}")
        if abs(p.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum():.12f}")
        self.probs = p

    @property
    def total(self):
        return self.space.resolution

    def prob_of(self, state):
        counts = state.counts if isinstance(state, LatticeState) else np.asarray(state)
        idx = int(self.space.node_index(counts[None, :])[0])
        return float(self.probs[idx])

    @staticmethod
    def point_mass(space, state):
        counts = state.counts if isinstance(state, LatticeState) else np.asarray(state)
        probs = np.zeros(space.node_count)
        probs[int(space.node_index(counts[None, :])[0])] = 1.0
        return Distribution(space, probs)


def lattice_space(d, total, cap=10**6):
    """Enumerated lattice used by the distribution oracle."""
    return SimplexGrid(d, total, cap=cap)


def tv_distance(a, b):
    """Total-variation distance between two distributions on the same space."""
    if a.space is not b.space and not np.array_equal(a.space.counts, b.space.counts):
        raise ValueError("distributions live on different spaces")
    return 0.5 * float(np.abs(a.probs - b.probs).sum())


class _ForwardOperator:
    """Precomputed jump bookkeeping for one lattice; applies the generator."""

    def __init__(self, model, space):
        self.model = model
        self.space = space
        self.total = space.resolution
        self.xs = space.nodes
        counts = space.counts
        d = model.dimension
        self.pairs = []
        for i in range(d):
            for j in range(d):
                if i == j:
                    continue
                valid = counts[:, i] >= 1
                moved = counts[valid].copy()
                moved[:, i] -= 1
                moved[:, j] += 1
                self.pairs.append((i, j, valid, space.node_index(moved)))

    def rates(self, t, u, v):
        """counts_i * Q_ij for every state and ordered pair, as a list."""
        q = self.model.rate_matrix_multi(t, self.xs, u, v)
        out = []
        counts = self.space.counts
        for i, j, valid, to_idx in self.pairs:
            out.append((valid, to_idx, counts[:, i] * q[:, i, j]))
        return out

    def apply(self, t, p, u, v):
        out = np.zeros_like(p)
        for valid, to_idx, rate in self.rates(t, u, v):
            flux = rate * p
            out -= flux
            np.add.at(out, to_idx, flux[valid])
        return out

    def generator_on(self, t, fvals, u, v):
        """(L f)(z) for every state z at time t."""
        out = np.zeros_like(fvals)
        for valid, to_idx, rate in self.rates(t, u, v):
            diff = np.zeros_like(fvals)
            diff[valid] = fvals[to_idx] - fvals[valid]
            out += rate * diff
        return out


def default_ode_step(model, total, rate_bound=None):
    k = rate_bound if rate_bound is not None else model.declared_k
    if k is None or k <= 0.0:
        return 0.01
    return min(0.01, 0.1 / (total * k))


def master_evolve(model, t0, t1, dist0, u, v, ode_step=None):
    """Exact forward evolution of a lattice distribution under constant controls.

    Classic fourth-order fixed-step integration; the state spaces this
    oracle is meant for are tiny, so accuracy wins over speed.
    """
    if t1 < t0:
        raise ValueError("need t1 >= t0")
    space = dist0.space
    op = _ForwardOperator(model, space)
    h = ode_step if ode_step is not None else default_ode_step(model, space.resolution)
    span = t1 - t0
    if span == 0.0:
        return Distribution(space, dist0.probs.copy())
    steps = max(1, math.ceil(span / h))
    dt = span / steps
    p = dist0.probs.copy()
    t = t0
    for _ in range(steps):
        k1 = op.apply(t, p, u, v)
        k2 = op.apply(t + 0.5 * dt, p + 0.5 * dt * k1, u, v)
        k3 = op.apply(t + 0.5 * dt, p + 0.5 * dt * k2, u, v)
        k4 = op.apply(t + dt, p + dt * k3, u, v)
        p = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
    if p.min() < -NEGATIVE_PROB_TOL:
        raise IntegrationError(
            f"negative probability {p.min():.3e}; reduce the integrator step")
    drift = abs(p.sum() - 1.0)
    if drift > PROB_SUM_TOL:
        raise IntegrationError(f"probability mass drifted by {drift:.3e}")
    np.maximum(p, 0.0, out=p)
    p /= p.sum()
    return Distribution(space, p)


def dynkin_residual(model, f, t0, t1, y, u, v, ode_step=0.002):
    """Gap in the expectation identity E f(X_t1) = f(y) + int E (L f)(X_s) ds.

    Both sides come from the forward-equation oracle: the left from the
    integrated distribution, the right from composite Simpson quadrature of
    the generator term along the stored trajectory. The residual therefore
    measures integrator consistency only.
    """
    if not isinstance(y, LatticeState):
        y = LatticeState(y)
    space = lattice_space(model.dimension, y.total)
    op = _ForwardOperator(model, space)
    fvals = np.array([float(f(x)) for x in space.nodes])
    span = t1 - t0
    if span <= 0.0:
        raise ValueError("need t1 > t0")
    steps = max(2, math.ceil(span / ode_step))
    if steps % 2:
        steps += 1
    dt = span / steps
    p = Distribution.point_mass(space, y).probs
    times = t0 + dt * np.arange(steps + 1)
    integrand = np.empty(steps + 1)
    integrand[0] = p @ op.generator_on(times[0], fvals, u, v)
    for step in range(steps):
        t = times[step]
        k1 = op.apply(t, p, u, v)
        k2 = op.apply(t + 0.5 * dt, p + 0.5 * dt * k1, u, v)
        k3 = op.apply(t + 0.5 * dt, p + 0.5 * dt * k2, u, v)
        k4 = op.apply(t + dt, p + dt * k3, u, v)
        p = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        integrand[step + 1] = p @ op.generator_on(times[step + 1], fvals, u, v)
    # composite Simpson over the stored (even) grid
    integral = (dt / 3.0) * (integrand[0] + integrand[-1]
                             + 4.0 * integrand[1:-1:2].sum()
                             + 2.0 * integrand[2:-1:2].sum())
    expected_end = float(p @ fvals)
    start = float(f(y.coords()))
    return abs(expected_end - start - integral)


def sample_final_distribution(model, t0, t1, y, u_policy, v_policy, trials, seed,
                              rate_bound=None):
    """Empirical law of the chain state at t1 over independent trials.

    Each trial draws from its own generator keyed by (seed, trial index),
    so results do not depend on execution order.
    """
    if not isinstance(y, LatticeState):
        y = LatticeState(y)
    space = lattice_space(model.dimension, y.total)
    hits = np.zeros(space.node_count, dtype=np.int64)
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        path = simulate_chain(model, t0, t1, y, u_policy, v_policy, rng,
                              rate_bound=rate_bound, record_events=True)
        idx = int(space.node_index(path.final_counts()[None, :])[0])
        hits[idx] += 1
    return Distribution(space, hits / trials), hits


@dataclass
class TransitionTable:
    """Monte Carlo one-step transition estimates around a lattice state."""

    origin: LatticeState
    duration: float
    trials: int
    stay_prob: float
    stay_se: float
    neighbor_probs: dict  # (i, j) -> (probability, standard error)
    other_prob: float
    other_se: float


def empirical_transition(model, t_star, xi, delta, u, v_policy, trials, seed,
                         rate_bound=None):
    """Estimate single-jump transition probabilities by simulation."""
    if not isinstance(xi, LatticeState):
        xi = LatticeState(xi)
    neighbors = {(i, j): nb for i, j, nb in single_jump_neighbors(xi)}
    keys = {}
    for (i, j), nb in neighbors.items():
        keys[nb.counts.tobytes()] = (i, j)
    origin_key = xi.counts.tobytes()
    stay = 0
    hits = {pair: 0 for pair in neighbors}
    other = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        path = simulate_chain(model, t_star, t_star + delta, xi, u, v_policy, rng,
                              rate_bound=rate_bound)
        key = path.final_counts().astype(np.int64).tobytes()
        if key == origin_key:
            stay += 1
        elif key in keys:
            hits[keys[key]] += 1
        else:
            other += 1

    def se(count):
        p = count / trials
        return math.sqrt(p * (1.0 - p) / trials)

    return TransitionTable(
        origin=xi,
        duration=delta,
        trials=trials,
        stay_prob=stay / trials,
        stay_se=se(stay),
        neighbor_probs={pair: (count / trials, se(count)) for pair, count in hits.items()},
        other_prob=other / trials,
        other_se=se(other),
    )
