import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from airhockey.path_planner import TableGeometry
from airhockey.puck_dynamics import PuckState, SimParams, simulate_array
from airhockey.tactics import (ENTRY_EVENT, GUARD_PRIORITY, SKILL_STATES, Event, Tactic, TacticState,
                               Thresholds, active_guards, derive_events, predict_crossing, rim_gap,
                               to_agent_frame, transition)

TABLE = TableGeometry()
EVENTS = list(Event) + [None]
S, E = Tactic, Event

# every non-identity edge, written out by hand
EXPECTED = {
    (S.INIT, E.START): S.HOME,
    (S.HOME, E.ON_TABLE): S.READY,
    (S.READY, E.CAN_SMASH): S.SMASH,
    (S.READY, E.CAN_REPEL): S.REPEL,
    (S.READY, E.DEFENSE): S.CUT,
    (S.READY, E.STUCK): S.PREPARE,
    (S.SMASH, E.DONE): S.READY,
    (S.REPEL, E.DONE): S.READY,
    (S.PREPARE, E.DONE): S.READY,
}
for s in S:
    EXPECTED[(s, E.STOP)] = S.INIT
    if s is not S.INIT:
        EXPECTED[(s, E.PAUSE)] = S.READY
for ev in EVENTS:
    if ev not in (E.DEFENSE, E.STOP):
        EXPECTED[(S.CUT, ev)] = S.READY


def test_exhaustive_transition_table():
    for s, ev in itertools.product(S, EVENTS):
        assert transition(s, ev) is EXPECTED.get((s, ev), s), (s, ev)


def test_diagram_edges():
    assert transition(S.READY, E.CAN_SMASH) is S.SMASH
    assert transition(S.CUT, E.STOP) is S.INIT
    assert transition(S.INIT, E.DONE) is S.INIT


def test_stop_reaches_init_and_start_is_only_exit():
    for s in S:
        assert transition(s, E.STOP) is S.INIT
    exits = [ev for ev in EVENTS if transition(S.INIT, ev) is not S.INIT]
    assert exits == [E.START]


def test_transition_accepts_string_values():
    assert transition("Ready", E.STUCK) is S.PREPARE


def test_paths_to_depth_six_never_enter_skill_without_guard():
    # every event sequence of length 6 from Init; about 1.1 million transitions
    frontier = [S.INIT]
    visited = {S.INIT}
    for depth in range(6):
        nxt = []
        for s in frontier:
            for ev in EVENTS:
                t = transition(s, ev)
                if t is not s and t in ENTRY_EVENT:
                    assert ev is ENTRY_EVENT[t], (s, ev, t)
                nxt.append(t)
        frontier = nxt
        visited.update(frontier)
    assert len(frontier) == len(EVENTS) ** 6
    assert visited == set(S)


def test_tactic_state_drops_trajectory_on_change():
    ts = TacticState()
    ts.apply(E.START)
    ts.trajectory = "handle"
    assert not ts.apply(E.DONE)
    assert ts.trajectory == "handle"
    assert ts.apply(E.ON_TABLE)
    assert ts.current is S.READY and ts.trajectory is None
    with pytest.raises(ValueError):
        TacticState(S.READY, trajectory="x")


def test_guard_examples():
    assert derive_events([-0.5, 0.0], [0.0, 0.0]) == {E.CAN_SMASH}
    assert derive_events([0.3, 0.0], [-3.0, 0.0]) == {E.DEFENSE}
    y = TABLE.width / 2 - TABLE.puck_radius - 0.02
    assert derive_events([-0.5, y], [0.0, 0.0]) == {E.STUCK}
    # fast puck heading for a corner of the home end
    assert derive_events([0.2, 0.0], [-2.0, 0.3]) == {E.CAN_REPEL}
    # slow puck in the opponent's half: nothing to do
    assert derive_events([0.5, 0.0], [0.1, 0.0]) == set()


@settings(max_examples=300, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-0.55, 0.55), st.floats(-4, 4), st.floats(-4, 4))
def test_guard_priority(x, y, vx, vy):
    guards = active_guards([x, y], [vx, vy])
    events = derive_events([x, y], [vx, vy])
    assert len(events) <= 1
    if guards:
        top = next(g for g in GUARD_PRIORITY if g in guards)
        assert events == {top}
    else:
        assert events == set()
    # Repel and Defense never hold together, nor Smash and Stuck
    assert not {E.DEFENSE, E.CAN_REPEL} <= guards
    assert not {E.CAN_SMASH, E.STUCK} <= guards


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-0.5, 0.5), st.floats(-3, 3), st.floats(-3, 3))
def test_agent_frame_is_involution(x, y, vx, vy):
    r, v = to_agent_frame(*to_agent_frame([x, y], [vx, vy], "away"), "away")
    assert np.allclose(r, [x, y]) and np.allclose(v, [vx, vy])
    r, v = to_agent_frame([x, y], [vx, vy], "home")
    assert np.allclose(r, [x, y])


def test_rim_gap():
    assert rim_gap([0.0, 0.0], TABLE) == pytest.approx(TABLE.width / 2 - TABLE.puck_radius)
    assert rim_gap([1.0, 0.0], TABLE) == pytest.approx(TABLE.length / 2 - 1.0 - TABLE.puck_radius)


# -- crossing prediction ---------------------------------------------------------

def numeric_crossing(x0, v0, x_line, d, c):
    """Integrate v' = -d v - c sign(v) numerically until x reaches the line."""
    def rhs(t, s):
        return [s[1], -d * s[1] - (c * np.sign(s[1]) if abs(s[1]) > 1e-9 else 0.0)]

    def hit(t, s):
        return s[0] - x_line
    hit.terminal = True

    def stopped(t, s):
        return abs(s[1]) - 1e-7
    stopped.terminal = True
    sol = solve_ivp(rhs, (0, 60), [x0, v0], events=[hit, stopped], rtol=1e-11, atol=1e-12, max_step=0.01)
    return sol.t_events[0][0] if len(sol.t_events[0]) else None


@pytest.mark.parametrize("d,mu,v0", [(0.0, 0.0, 2.0), (0.01, 0.0, 1.5), (0.0, 0.02, 2.0), (0.01, 0.05, 3.0)])
def test_head_on_crossing_matches_numeric_integration(d, mu, v0):
    params = SimParams(1.0, 1.0, 0.0, mu, 0.0, d, 0.0)
    out = predict_crossing([0.3, 0.12], [-v0, 0.0], -1.0, params)
    assert out is not None
    t_ref = numeric_crossing(0.3, -v0, -1.0, d, mu * 9.81)
    assert out[0] == pytest.approx(0.12, abs=1e-12)
    assert out[1] == pytest.approx(t_ref, abs=1e-6)
    if d == 0 and mu == 0:
        assert out[1] == pytest.approx(1.3 / v0, rel=1e-12)


def test_crossing_stops_short():
    params = SimParams(1.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.0)
    # stopping distance v^2 / (2 mu g) is about 0.1 m
    assert predict_crossing([0.0, 0.0], [-1.0, 0.0], -1.0, params) is None


def test_receding_puck_has_no_crossing():
    assert predict_crossing([0.0, 0.0], [2.0, 0.5], -1.0) is None
    assert predict_crossing([0.0, 0.0], [0.0, 0.0], -1.0) is None


def mirror_crossing(r, v, x_line, y_lim):
    """Unfold the straight line through reflections off y = +-y_lim (elastic, no drag)."""
    t = (x_line - r[0]) / v[0]
    y = r[1] + v[1] * t
    period = 4 * y_lim
    y = (y + y_lim) % period
    return (y if y <= 2 * y_lim else period - y) - y_lim, t


def simulator_crossing(r, v, x_line, params, dt=1e-3):
    rows, _ = simulate_array(PuckState.make(r[0], r[1], v[0], v[1]), params, TABLE, dt, 3.0)
    xs = rows[:, 0]
    k = np.flatnonzero((xs[:-1] - x_line) * (xs[1:] - x_line) <= 0)[0]
    a = (x_line - xs[k]) / (xs[k + 1] - xs[k])
    return rows[k, 1] + a * (rows[k + 1, 1] - rows[k, 1])


@pytest.mark.parametrize("r,v", [([0.5, 0.0], [-2.0, 1.5]), ([0.8, -0.3], [-1.5, -2.0]),
                                 ([0.9, 0.4], [-1.0, 3.0])])
def test_rim_bounce_mirrors(r, v):
    params = SimParams(1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    x_line = -0.8
    y_lim = TABLE.width / 2 - TABLE.puck_radius
    y, t = predict_crossing(r, v, x_line, params)
    y_ref, t_ref = mirror_crossing(r, v, x_line, y_lim)
    assert abs(y - r[1] - v[1] * t) > 0.05          # at least one rim was involved
    assert y == pytest.approx(y_ref, abs=1e-9)
    assert t == pytest.approx(t_ref, abs=1e-9)
    assert y == pytest.approx(simulator_crossing(r, v, x_line, params), abs=2e-3)


def test_restitution_slows_crossing():
    lossy = SimParams(0.6, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0)
    elastic = SimParams(1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    r, v = [0.5, 0.0], [-2.0, 1.5]
    y_l, t_l = predict_crossing(r, v, -0.8, lossy)
    y_e, t_e = predict_crossing(r, v, -0.8, elastic)
    assert t_l == pytest.approx(t_e)            # x motion is unaffected by the long rims
    assert y_l == pytest.approx(simulator_crossing(r, v, -0.8, lossy), abs=2e-3)
    assert y_l != pytest.approx(y_e)


def test_thresholds_configurable():
    th = Thresholds(v_smash_max=0.05)
    assert derive_events([-0.5, 0.0], [0.2, 0.0], thresholds=th) == set()
    assert SKILL_STATES == set(ENTRY_EVENT)
    assert math.isclose(Thresholds().horizon, 1.5)
