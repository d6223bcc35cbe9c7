"""High-level tactic selection for one agent.

A small finite state machine over seven tactics, driven by one event per tick.
Events come from the game (Start, Stop, Pause, OnTable), from the running
skill (Done), or from guards over the filtered puck estimate (Defense,
CanSmash, CanRepel, Stuck). Guards are evaluated in the agent's own frame: its
goal at ``x = -length / 2``, its half at ``x < 0``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .path_planner import TableGeometry
from .puck_dynamics import GRAVITY, SimParams


class Tactic(enum.Enum):
    INIT = "Init"
    HOME = "Home"
    READY = "Ready"
    SMASH = "Smash"
    CUT = "Cut"
    REPEL = "Repel"
    PREPARE = "Prepare"


class Event(enum.Enum):
    START = "Start"
    STOP = "Stop"
    PAUSE = "Pause"
    ON_TABLE = "OnTable"
    DEFENSE = "Defense"
    CAN_SMASH = "CanSmash"
    CAN_REPEL = "CanRepel"
    STUCK = "Stuck"
    DONE = "Done"


# states that execute a trajectory, and the only event that may enter each
SKILL_STATES = frozenset({Tactic.HOME, Tactic.SMASH, Tactic.CUT, Tactic.REPEL, Tactic.PREPARE})
ENTRY_EVENT = {
    Tactic.HOME: Event.START,
    Tactic.SMASH: Event.CAN_SMASH,
    Tactic.CUT: Event.DEFENSE,
    Tactic.REPEL: Event.CAN_REPEL,
    Tactic.PREPARE: Event.STUCK,
}
GUARD_PRIORITY = (Event.DEFENSE, Event.CAN_REPEL, Event.CAN_SMASH, Event.STUCK)

_EDGES = {
    (Tactic.INIT, Event.START): Tactic.HOME,
    (Tactic.HOME, Event.ON_TABLE): Tactic.READY,
    (Tactic.READY, Event.CAN_SMASH): Tactic.SMASH,
    (Tactic.READY, Event.CAN_REPEL): Tactic.REPEL,
    (Tactic.READY, Event.DEFENSE): Tactic.CUT,
    (Tactic.READY, Event.STUCK): Tactic.PREPARE,
    (Tactic.SMASH, Event.DONE): Tactic.READY,
    (Tactic.REPEL, Event.DONE): Tactic.READY,
    (Tactic.PREPARE, Event.DONE): Tactic.READY,
}


def transition(state, event):
    """Next tactic for ``event`` (None means a tick without events). Total and pure.

    Stop always returns to Init and Pause sends every started agent to Ready.
    Cut holds only while Defense keeps firing; any other tick leaves it.
    """
    state = Tactic(state)
    if event is Event.STOP:
        return Tactic.INIT
    if event is Event.PAUSE:
        return state if state is Tactic.INIT else Tactic.READY
    if state is Tactic.CUT:
        return Tactic.CUT if event is Event.DEFENSE else Tactic.READY
    return _EDGES.get((state, event), state)


@dataclass
class TacticState:
    """Current tactic plus the skill being executed in it."""

    current: Tactic = Tactic.INIT
    trajectory: object = None
    done: bool = False

    def __post_init__(self):
        self.check()

    def check(self):
        if not isinstance(self.current, Tactic):
            raise ValueError("current must be a Tactic")
        if self.trajectory is not None and self.current not in SKILL_STATES:
            raise ValueError(f"{self.current.value} cannot carry a trajectory")

    def apply(self, event):
        """Advance in place. Changing tactic drops the active trajectory."""
        nxt = transition(self.current, event)
        changed = nxt is not self.current
        if changed:
            self.current, self.trajectory, self.done = nxt, None, False
        return changed


@dataclass(frozen=True)
class Thresholds:
    v_smash_max: float = 0.5
    v_repel_min: float = 1.0
    v_still: float = 0.05
    d_border: float = 0.1
    horizon: float = 1.5


# -- crossing prediction ------------------------------------------------------

def _axis_motion(p0, v0, d, c):
    """Closed-form 1-D motion under ``v' = -d v - c sign(v)``.

    Returns (position(t), velocity(t), stop time). Velocity never changes sign.
    """
    s = 1.0 if v0 >= 0 else -1.0
    u0 = abs(v0)
    if u0 == 0.0:
        return (lambda t: p0), (lambda t: 0.0), 0.0
    if d > 0:
        a = u0 + c / d
        t_stop = math.log(a / (c / d)) / d if c > 0 else math.inf

        def pos(t):
            t = min(t, t_stop)
            return p0 + s * (a * (1.0 - math.exp(-d * t)) / d - c / d * t)

        def vel(t):
            return 0.0 if t >= t_stop else s * (a * math.exp(-d * t) - c / d)
    else:
        t_stop = u0 / c if c > 0 else math.inf

        def pos(t):
            t = min(t, t_stop)
            return p0 + s * (u0 * t - 0.5 * c * t * t)

        def vel(t):
            return 0.0 if t >= t_stop else s * (u0 - c * t)
    return pos, vel, t_stop


def predict_crossing(r, v, x_line, params=None, table=None, v_min=1e-3, t_max=30.0, max_bounces=20):
    """First crossing of the vertical line ``x = x_line`` by the puck centre.

    Propagates the drift model per axis in closed form, mirroring the motion at
    the long rims with the long-rim restitution. Returns ``(y, t)`` or None when
    the puck moves away, stops short, or ``t_max`` passes first.
    """
    params = SimParams() if params is None else params
    table = TableGeometry() if table is None else table
    x, y = float(r[0]), float(r[1])
    vx, vy = float(v[0]), float(v[1])
    d, c = params.d_lin, params.mu_table * GRAVITY
    y_lim = table.width / 2 - table.puck_radius
    if (x_line - x) * vx <= 0.0:
        return None
    t0 = 0.0
    for _ in range(max_bounces + 1):
        if math.hypot(vx, vy) < v_min or t0 >= t_max:
            return None
        px, _, tsx = _axis_motion(x, vx, d, c)
        py, fvy, tsy = _axis_motion(y, vy, d, c)
        span = min(t_max - t0, max(tsx, tsy))
        if not math.isfinite(span):
            span = t_max - t0
        # time to the line (x is monotone) and to the rim ahead (y is monotone)
        tx = None
        if (px(span) - x_line) * (x - x_line) <= 0.0:
            tx = brentq(lambda t: px(t) - x_line, 0.0, span, xtol=1e-12) if x != x_line else 0.0
        ty = None
        if vy != 0.0:
            rim = math.copysign(y_lim, vy)
            if (py(span) - rim) * (y - rim) <= 0.0:
                ty = 0.0 if y == rim else brentq(lambda t: py(t) - rim, 0.0, span, xtol=1e-12)
        if tx is not None and (ty is None or tx <= ty):
            return float(py(tx)), float(t0 + tx)
        if ty is None:
            return None
        vx_new = _axis_motion(x, vx, d, c)[1](ty)
        x, y = px(ty), math.copysign(y_lim, vy)
        vx, vy = vx_new, -params.e_long * fvy(ty)
        t0 += ty
    return None


# -- guards -------------------------------------------------------------------

def goal_corridor(table):
    """Half-width of the band of crossing heights that threaten the goal."""
    return table.goal_width / 2 + table.puck_radius


def rim_gap(r, table):
    """Distance from the puck's edge to the nearest rim."""
    return min(table.length / 2 - abs(r[0]), table.width / 2 - abs(r[1])) - table.puck_radius


def active_guards(r, v, table=None, thresholds=None, params=None):
    """Every guard that holds for a puck at ``r`` moving at ``v`` (agent frame)."""
    table = TableGeometry() if table is None else table
    th = Thresholds() if thresholds is None else thresholds
    r, v = np.asarray(r, dtype=float), np.asarray(v, dtype=float)
    speed = float(np.hypot(*v))
    own_half = r[0] < 0.0
    near_rim = rim_gap(r, table) < th.d_border
    guards = set()
    crossing = None
    if v[0] < 0.0:
        crossing = predict_crossing(r, v, -table.length / 2 + table.puck_radius, params, table)
    corridor = goal_corridor(table)
    if crossing is not None and crossing[1] <= th.horizon and abs(crossing[0]) < corridor:
        guards.add(Event.DEFENSE)
    if v[0] < 0.0 and speed > th.v_repel_min and crossing is not None and abs(crossing[0]) >= corridor:
        guards.add(Event.CAN_REPEL)
    # a puck against a rim cannot be struck cleanly; that is Prepare's job
    if own_half and speed < th.v_smash_max and not near_rim:
        guards.add(Event.CAN_SMASH)
    if own_half and speed < th.v_still and near_rim:
        guards.add(Event.STUCK)
    return guards


def prioritize(guards):
    """Highest-priority guard event, or None."""
    for ev in GUARD_PRIORITY:
        if ev in guards:
            return ev
    return None


def derive_events(r, v, table=None, thresholds=None, params=None):
    """Guard event set for the tick: the single highest-priority guard that holds."""
    ev = prioritize(active_guards(r, v, table, thresholds, params))
    return set() if ev is None else {ev}


def to_agent_frame(r, v, side):
    """Mirror a table-frame puck into the frame of the agent defending ``side``."""
    s = 1.0 if side == "home" else -1.0
    return s * np.asarray(r, dtype=float), s * np.asarray(v, dtype=float)
