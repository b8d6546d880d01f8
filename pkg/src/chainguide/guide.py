"""Deterministic guide dynamics.

The guide is the auxiliary model state each player tracks alongside the
noisy chain. Between control corrections it rides the convex hull of the
drift vectors available with the opponent's announced control held fixed,
choosing a hull trajectory that keeps the interpolated game value from
rising (player 1) or falling (player 2). The hull is approximated by a
finite candidate family: each pure grid control plus evenly spaced
mixtures of adjacent pairs; one admissible monotone trajectory is all the
construction needs, so a coarse family suffices within the tolerance
already conceded to grid error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import estimate_constants
from .simplex import ProjectionError, as_coords
from .value import monotonicity_tolerance

GUIDE_PROJECTION_LIMIT = 1e-6


@dataclass(frozen=True)
class GuideState:
    """Guide position and the correction time it belongs to."""

    w: np.ndarray
    t: float

    def __init__(self, w, t):
        arr = np.asarray(w, dtype=float).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "w", arr)
        object.__setattr__(self, "t", float(t))


@dataclass(frozen=True)
class GuideStep:
    """One guide advance plus its value bookkeeping."""

    state: GuideState
    value_start: float
    value_end: float
    violation: bool
    candidate: int


def init_guide(s, y):
    """Start the guide exactly on the chain's initial state."""
    return GuideState(as_coords(y), s)


def _as_schedule(control):
    if callable(control):
        return control
    value = float(control)
    return lambda t: value


def integrate_characteristic(model, t0, t1, x0, u_schedule, v_schedule, ode_step=0.01):
    """Integrate the deterministic flow dx/dt = x Q(t, x, u(t), v(t)).

    Schedules are callables of time (constants are promoted); they are
    sampled at the stage times of a fourth-order fixed-step integrator.
    Every step ends with a clip-and-renormalize projection; a displacement
    above 1e-6 raises, since the exact flow never leaves the simplex.
    """
    u_fn = _as_schedule(u_schedule)
    v_fn = _as_schedule(v_schedule)
    span = float(t1) - float(t0)
    if span < 0.0:
        raise ValueError("need t1 >= t0")
    x = as_coords(x0, model.dimension)[None, :].copy()
    if span == 0.0:
        return x[0]
    steps = max(1, int(np.ceil(span / ode_step)))
    dt = span / steps
    t = float(t0)
    worst = 0.0

    def vel(stage_t, state):
        return model.drift_control_values(stage_t, state,
                                          np.array([u_fn(stage_t)]),
                                          np.array([v_fn(stage_t)]))

    for _ in range(steps):
        k1 = vel(t, x)
        k2 = vel(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = vel(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = vel(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        before = x.copy()
        np.maximum(x, 0.0, out=x)
        x /= x.sum(axis=1, keepdims=True)
        worst = max(worst, float(np.linalg.norm(x - before)))
        t += dt
    if worst > GUIDE_PROJECTION_LIMIT:
        raise ProjectionError(f"characteristic left the simplex by {worst:.3e}")
    return x[0]


@dataclass(frozen=True)
class CandidateFamily:
    """Finite inner approximation of the drift hull over one player's grid.

    Candidates are the pure grid controls (listed first, so value ties
    resolve to the lowest grid index) followed by adjacent-pair mixtures
    with evenly spaced weights.
    """

    first_idx: np.ndarray
    second_idx: np.ndarray
    weight: np.ndarray

    @staticmethod
    def build(grid_size, lam_points=9):
        first = list(range(grid_size))
        second = list(range(grid_size))
        weight = [1.0] * grid_size
        lams = np.linspace(0.0, 1.0, lam_points)
        for a in range(grid_size - 1):
            for lam in lams:
                first.append(a)
                second.append(a + 1)
                weight.append(float(lam))
        return CandidateFamily(np.asarray(first), np.asarray(second), np.asarray(weight))

    @property
    def count(self):
        return self.weight.size


def advance_guides(field, model, t0, t1, guides, fixed_idx, role,
                   slack, ode_step=0.01, lam_points=9):
    """Advance a batch of guides over [t0, t1] with the opposing control fixed.

    ``guides`` is (n, d); ``fixed_idx`` gives each row's announced opposing
    control as a grid index (the v of rule-(12) extremal selection for
    player 1, the u of the mirrored rule for player 2). Every candidate
    hull trajectory is integrated and the one optimizing the interpolated
    value at t1 wins: minimized for role "first", maximized for "second".
    Rows whose best candidate still moves the value the wrong way by more
    than ``slack`` are flagged, not rejected.

    Returns (endpoints (n, d), value_start (n,), value_end (n,),
    violation (n,), candidate index (n,)).
    """
    guides = np.asarray(guides, dtype=float)
    n, d = guides.shape
    if role == "first":
        own_values = model.u_grid.values()
        fixed_values = model.v_grid.values()[fixed_idx]
    elif role == "second":
        own_values = model.v_grid.values()
        fixed_values = model.u_grid.values()[fixed_idx]
    else:
        raise ValueError("role must be 'first' or 'second'")
    family = CandidateFamily.build(own_values.size, lam_points)
    nc = family.count
    span = float(t1) - float(t0)
    if span <= 0.0:
        raise ValueError("need t1 > t0")

    # tile trial rows per candidate: row r*nc + c is candidate c of trial r
    states = np.repeat(guides, nc, axis=0)
    mix_a = np.tile(own_values[family.first_idx], n)
    mix_b = np.tile(own_values[family.second_idx], n)
    lam = np.tile(family.weight, n)
    fixed = np.repeat(fixed_values, nc)

    steps = max(1, int(np.ceil(span / ode_step)))
    dt = span / steps
    t = float(t0)
    worst = 0.0
    for _ in range(steps):
        k1 = _hull_drift(model, t, states, mix_a, mix_b, lam, fixed, role)
        k2 = _hull_drift(model, t + 0.5 * dt, states + 0.5 * dt * k1,
                         mix_a, mix_b, lam, fixed, role)
        k3 = _hull_drift(model, t + 0.5 * dt, states + 0.5 * dt * k2,
                         mix_a, mix_b, lam, fixed, role)
        k4 = _hull_drift(model, t + dt, states + dt * k3, mix_a, mix_b, lam, fixed, role)
        states = states + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        before = states.copy()
        np.maximum(states, 0.0, out=states)
        states /= states.sum(axis=1, keepdims=True)
        worst = max(worst, float(np.max(np.linalg.norm(states - before, axis=1))))
        t += dt
    if worst > GUIDE_PROJECTION_LIMIT:
        raise ProjectionError(f"guide hull trajectory left the simplex by {worst:.3e}")

    value_start = field.eval_batch(t0, guides)
    end_values = field.eval_batch(t1, states).reshape(n, nc)
    if role == "first":
        best = np.argmin(end_values, axis=1)
    else:
        best = np.argmax(end_values, axis=1)
    rows = np.arange(n)
    value_end = end_values[rows, best]
    endpoints = states.reshape(n, nc, d)[rows, best]
    if role == "first":
        violation = value_end > value_start + slack
    else:
        violation = value_end < value_start - slack
    return endpoints, value_start, value_end, violation, best


def _hull_drift(model, t, states, mix_a, mix_b, lam, fixed, role):
    if role == "first":
        da = model.drift_control_values(t, states, mix_a, fixed)
        db = model.drift_control_values(t, states, mix_b, fixed)
    else:
        da = model.drift_control_values(t, states, fixed, mix_a)
        db = model.drift_control_values(t, states, fixed, mix_b)
    return lam[:, None] * da + (1.0 - lam[:, None]) * db


def _default_step_slack(field, model, t0, t1, constants):
    k_bound = constants.k if constants is not None else (
        model.declared_k if model.declared_k is not None
        else estimate_constants(model).constants.k)
    eps = monotonicity_tolerance(field, k_bound)
    return eps * (t1 - t0) / field.horizon


def guide_advance_first(field, model, t_star, t_plus, w_star, v_star,
                        slack=None, constants=None, ode_step=0.01, lam_points=9):
    """Player-1 guide update: ride the u-hull with v fixed, keep value from rising."""
    v_idx = model.v_grid.index_of(v_star) if not isinstance(v_star, (int, np.integer)) else int(v_star)
    if slack is None:
        slack = _default_step_slack(field, model, t_star, t_plus, constants)
    w = as_coords(w_star, model.dimension)
    endpoints, v0, v1, violation, cand = advance_guides(
        field, model, t_star, t_plus, w[None, :], np.array([v_idx]), "first",
        slack=slack, ode_step=ode_step, lam_points=lam_points)
    return GuideStep(GuideState(endpoints[0], t_plus), float(v0[0]), float(v1[0]),
                     bool(violation[0]), int(cand[0]))


def guide_advance_second(field, model, t_star, t_plus, w_star, u_star,
                         slack=None, constants=None, ode_step=0.01, lam_points=9):
    """Player-2 guide update: ride the v-hull with u fixed, keep value from falling."""
    u_idx = model.u_grid.index_of(u_star) if not isinstance(u_star, (int, np.integer)) else int(u_star)
    if slack is None:
        slack = _default_step_slack(field, model, t_star, t_plus, constants)
    w = as_coords(w_star, model.dimension)
    endpoints, v0, v1, violation, cand = advance_guides(
        field, model, t_star, t_plus, w[None, :], np.array([u_idx]), "second",
        slack=slack, ode_step=ode_step, lam_points=lam_points)
    return GuideStep(GuideState(endpoints[0], t_plus), float(v0[0]), float(v1[0]),
                     bool(violation[0]), int(cand[0]))
