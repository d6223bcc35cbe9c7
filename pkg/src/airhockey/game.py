"""Two-agent self-play on the simulated table.

Each agent runs its own puck filter on noisy camera samples, picks a tactic
with the state machine and executes the tactic's skill as a joint trajectory.
The mallet is kinematic: its position is the forward kinematics of the
commanded joints. Both agents think in their own frame (own goal at
``x = -length / 2``); the away side is the point reflection of the home side,
so one arm model serves both.

A referee counts goals, resets the puck into the conceding half after a goal
and back into play after a long stall, and audits invariants every tick.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import path_planner as pp
from .arena import home_configuration, table_arm
from .errors import AirHockeyError
from .hit_optimizer import TrackerConfig, plan_hit_trajectory, track_plan
from .kinematics import fk_position
from .puck_dynamics import PuckState, SimParams, _advance, _geometry, simulate_array
from .puck_tracker import FilterConfig, FilterState, predict, update
from .tactics import (SKILL_STATES, Event, Tactic, TacticState, Thresholds, derive_events,
                      predict_crossing, to_agent_frame)

DT = 0.01
HIT_MODE = "NL+AQP"
HOLD_TIME = 0.3          # pause after a failed or finished defensive skill
HOME_SPEED = 0.5
CUT_SPEED = 1.0
REPEL_SPEED = 1.5
REPEL_LINE = -0.65
PREPARE_SPEED = 0.4
PREPARE_RUNUP = 0.04
PREPARE_PUSH = 0.08
STALL_TIME = 4.0
RESET_X = 0.55
CUT_REPLAN = 0.03
BOUNDS_TOL = 5e-3


@dataclass
class Skill:
    """Joint samples for consecutive ticks and the mallet positions they produce."""

    q: np.ndarray
    xy: np.ndarray
    k: int = 0
    target: np.ndarray = None

    @property
    def finished(self):
        return self.k >= len(self.q) - 1

    def advance(self):
        if not self.finished:
            self.k += 1
        return self.q[self.k], self.xy[self.k]


def own_bounds(table):
    """Tightened boundary restricted to the agent's half (agent frame)."""
    b = pp.tightened_boundary(table, pp.default_margin(table))
    return pp.Bounds(b.x_min, -table.mallet_radius - pp.SAFETY_MARGIN, b.y_min, b.y_max)


def move_plan(start, target, speed):
    """Straight rest-to-rest move: accelerate over the first half, brake over the second."""
    start, target = np.asarray(start, dtype=float), np.asarray(target, dtype=float)
    mid = 0.5 * (start + target)
    first = pp.PlanSegment([pp.Line(start, mid)])
    second = pp.PlanSegment([pp.Line(mid, target)])
    first.profile = pp.fit_quartic_profile(first.length, 0.0, speed)
    second.profile = pp.fit_quartic_profile(second.length, speed, 0.0)
    d = (target - start) / np.linalg.norm(target - start)
    return pp.HitPlan([first, second], mid, d, float(speed))


class Agent:
    """One robot: filter, tactic state machine and the skill being executed."""

    def __init__(self, side, rng, table=None, params=None, thresholds=None, filter_cfg=None):
        self.side = side
        self.rng = rng
        self.table = pp.TableGeometry() if table is None else table
        self.params = SimParams() if params is None else params
        self.thresholds = Thresholds() if thresholds is None else thresholds
        self.filter_cfg = filter_cfg or FilterConfig(sim_params=self.params, table=self.table)
        self.chain = table_arm()
        self.q_home = home_configuration(self.chain)
        self.q = self.q_home.copy()
        self.xy = fk_position(self.chain, self.q)[:2]
        self.home_xy = self.xy.copy()
        self.bounds = own_bounds(self.table)
        self.tracker_cfg = TrackerConfig(dt=DT)
        self.fsm = TacticState()
        self.skill = None
        self.estimate = None
        self.smash_count = 0
        self.plan_failures = 0

    # -- perception -----------------------------------------------------------

    def observe(self, t, z):
        """Fuse a table-frame measurement ``(x, y, phi)``."""
        if self.estimate is None or self.estimate.t >= t:
            self.estimate = FilterState.initial(z, t)
            return
        self.estimate, _ = update(predict(self.estimate, t - self.estimate.t, self.filter_cfg), z, self.filter_cfg)

    def puck(self):
        """Filtered puck position and velocity in the agent frame."""
        m = self.estimate.mean
        return to_agent_frame(m[:2], m[2:4], self.side)

    # -- decision -------------------------------------------------------------

    def choose_event(self, game_event):
        if game_event is not None:
            return game_event
        cur = self.fsm.current
        if cur is Tactic.HOME and self.skill is not None and self.skill.finished:
            return Event.ON_TABLE if self.estimate is not None else None
        if cur in (Tactic.SMASH, Tactic.REPEL, Tactic.PREPARE):
            return Event.DONE if self.skill is None or self.skill.finished else None
        if cur in (Tactic.READY, Tactic.CUT):
            if self.estimate is None or self.estimate.initiating:
                return None
            r, v = self.puck()
            events = derive_events(r, v, self.table, self.thresholds, self.params)
            return next(iter(events)) if events else None
        return None

    def tick(self, t, game_event=None):
        """Run one decision tick. Returns (event fed to the machine, previous tactic)."""
        event = self.choose_event(game_event)
        before = self.fsm.current
        changed = self.fsm.apply(event)
        if changed:
            self.skill = None
            if self.fsm.current in SKILL_STATES:
                self.skill = self._start_skill(self.fsm.current)
                if self.fsm.current is Tactic.SMASH:
                    self.smash_count += 1
        elif self.fsm.current is Tactic.CUT:
            self._refresh_cut()
        self.fsm.trajectory = self.skill
        return event, before

    def command(self):
        """Mallet (position, velocity) in the table frame for the coming step."""
        start = self.xy.copy()
        if self.skill is not None:
            self.q, self.xy = self.skill.advance()
            self.q = self.q.copy()
            self.xy = self.xy.copy()
        s = 1.0 if self.side == "home" else -1.0
        return s * start, s * (self.xy - start) / DT

    # -- skills ---------------------------------------------------------------

    def _hold(self, seconds=HOLD_TIME):
        n = max(1, int(round(seconds / DT)))
        return Skill(np.repeat(self.q[None, :], n + 1, 0), np.repeat(self.xy[None, :], n + 1, 0))

    def _track(self, plan):
        _, qs, *_ = track_plan(self.chain, self.q, plan, self.tracker_cfg)
        return Skill(qs, np.array([fk_position(self.chain, q)[:2] for q in qs]))

    def _move(self, target, speed):
        target = self.bounds.clamp(target)
        if np.linalg.norm(target - self.xy) < 5e-3:
            skill = self._hold(0.1)
        else:
            try:
                skill = self._track(move_plan(self.xy, target, speed))
            except AirHockeyError:
                self.plan_failures += 1
                skill = self._hold()
        skill.target = target
        return skill

    def _hit(self, puck_xy, hit_dir):
        hit_xy = puck_xy - (self.table.puck_radius + self.table.mallet_radius) * hit_dir
        if not self.bounds.contains(hit_xy):
            return None
        stop = self.bounds.clamp(hit_xy + 0.15 * hit_dir)
        bounds = pp.motion_bounds(self.table, [self.xy, hit_xy, stop], 0.2).intersect(self.bounds)
        try:
            traj = plan_hit_trajectory(self.chain, self.q, puck_xy, hit_dir, stop, self.table, self.tracker_cfg,
                                       HIT_MODE, bounds=bounds, rng=self.rng)
        except (AirHockeyError, ValueError):
            return None
        if not traj.feasible:
            return None
        skill = Skill(traj.q, np.array([fk_position(self.chain, q)[:2] for q in traj.q]))
        skill.hit_index = traj.hit_index
        return skill

    def _predict_puck(self, lead):
        r, v = self.puck()
        if lead <= 0:
            return r
        rows, _ = simulate_array(PuckState.make(r[0], r[1], v[0], v[1]), self.params, self.table, DT, lead)
        return rows[-1, :2]

    def _smash(self):
        _, v = self.puck()
        hit_type = pp.HIT_TYPES[int(self.rng.integers(len(pp.HIT_TYPES)))]
        target = self.table.goal_center("away")
        lead = 0.0 if np.hypot(*v) < self.thresholds.v_still else 0.8
        for _ in range(2):
            p = self._predict_puck(lead)
            skill = self._hit(p, pp.compute_hit_direction(p, target, self.table, hit_type))
            if skill is None:
                return None
            t_hit = skill.hit_index * DT
            if np.linalg.norm(self._predict_puck(t_hit) - p) < 0.02:
                return skill
            lead = t_hit
        return skill

    def _prepare(self):
        """Push a resting puck off the rim: approach from behind, then sweep through it slowly."""
        r, _ = self.puck()
        t = self.table
        long_gap = t.width / 2 - abs(r[1])
        short_gap = t.length / 2 - abs(r[0])
        if long_gap <= short_gap:
            d = np.array([1.0, 0.0])          # slide it along the long rim
        else:
            d = np.array([0.0, -math.copysign(1.0, r[1])])
        contact = t.puck_radius + t.mallet_radius
        approach = self.bounds.clamp(r - (contact + PREPARE_RUNUP) * d)
        through = self.bounds.clamp(r + PREPARE_PUSH * d)
        first = self._move(approach, HOME_SPEED)
        if np.linalg.norm(first.xy[-1] - approach) > 0.01:
            return None
        q0, xy0 = self.q, self.xy
        self.q, self.xy = first.q[-1], first.xy[-1]
        second = self._move(through, PREPARE_SPEED)
        self.q, self.xy = q0, xy0
        return Skill(np.vstack([first.q, second.q[1:]]), np.vstack([first.xy, second.xy[1:]]))

    def _cut_target(self):
        r, v = self.puck()
        x_line = self.bounds.x_min + 0.03
        out = predict_crossing(r, v, x_line, self.params, self.table)
        if out is None:
            return None
        y = out[0]
        side = math.copysign(1.0, y if abs(y) > 1e-3 else v[1] or 1.0)
        # stand slightly inboard so the puck glances off towards the side
        contact = self.table.puck_radius + self.table.mallet_radius
        lim = self.table.goal_width / 2 + self.table.puck_radius
        return np.array([x_line, float(np.clip(y - 0.4 * contact * side, -lim, lim))])

    def _repel_target(self):
        r, v = self.puck()
        out = predict_crossing(r, v, REPEL_LINE, self.params, self.table)
        if out is None:
            return None
        return np.array([REPEL_LINE - 0.5 * self.table.mallet_radius, out[0]])

    def _start_skill(self, tactic):
        if tactic is Tactic.HOME:
            return self._move(self.home_xy, HOME_SPEED)
        if tactic is Tactic.CUT:
            target = self._cut_target()
            return self._hold() if target is None else self._move(target, CUT_SPEED)
        if tactic is Tactic.REPEL:
            target = self._repel_target()
            skill = None if target is None else self._move(target, REPEL_SPEED)
        elif tactic is Tactic.SMASH:
            skill = self._smash()
        else:
            skill = self._prepare()
        if skill is None:
            self.plan_failures += 1
            return self._hold()
        return skill

    def _refresh_cut(self):
        if self.skill is not None and not self.skill.finished:
            return
        target = self._cut_target()
        if target is None:
            return
        if self.skill is None or self.skill.target is None or np.linalg.norm(target - self.skill.target) > CUT_REPLAN:
            self.skill = self._move(target, CUT_SPEED)

    # -- audit ----------------------------------------------------------------

    def violations(self):
        out = []
        try:
            self.fsm.check()
        except ValueError as exc:
            out.append(str(exc))
        if self.skill is not None and self.fsm.current not in SKILL_STATES:
            out.append(f"trajectory active in {self.fsm.current.value}")
        if not self.chain.within_limits(self.q, tol=1e-9):
            out.append("joint position limit exceeded")
        if self.bounds.distance_outside(self.xy) > BOUNDS_TOL:
            out.append(f"mallet outside its boundary by {self.bounds.distance_outside(self.xy):.4f} m")
        return out


@dataclass
class GameConfig:
    duration: float = 60.0
    sigma_r: float = 1e-3
    sigma_phi: float = 0.01
    params: SimParams = field(default_factory=SimParams)
    table: pp.TableGeometry = field(default_factory=pp.TableGeometry)
    thresholds: Thresholds = field(default_factory=Thresholds)


@dataclass
class GameResult:
    score: dict
    goals: list              # (t, side conceding, x, y)
    transitions: list        # (t, side, event, from, to)
    log: np.ndarray          # per tick: t, puck x y vx vy, mallet home x y, mallet away x y
    states: list             # per tick: (home tactic, away tactic)
    smash_count: dict
    violations: list         # (t, who, message)
    resets: int


def _reset_puck(rng, half, table):
    x = -RESET_X if half == "home" else RESET_X
    return (x, float(rng.uniform(-0.25, 0.25)), 0.0, 0.0, float(rng.uniform(-math.pi, math.pi)), 0.0)


def run_game(seed, config=None):
    """Play one seeded game. Everything stochastic flows from ``seed``."""
    cfg = GameConfig() if config is None else config
    table, params = cfg.table, cfg.params
    root = np.random.SeedSequence(seed)
    s_ref, s_home, s_away, s_noise = root.spawn(4)
    ref_rng, noise_rng = np.random.default_rng(s_ref), np.random.default_rng(s_noise)
    agents = {
        "home": Agent("home", np.random.default_rng(s_home), table, params, cfg.thresholds),
        "away": Agent("away", np.random.default_rng(s_away), table, params, cfg.thresholds),
    }
    geom = _geometry(table)
    puck = _reset_puck(ref_rng, "home" if ref_rng.uniform() < 0.5 else "away", table)
    n_steps = int(round(cfg.duration / DT))
    score = {"home": 0, "away": 0}
    goals, transitions, log, states, violations = [], [], [], [], []
    still_since = 0.0
    resets = 0
    pending = {"home": Event.START, "away": Event.START}
    for k in range(n_steps + 1):
        t = k * DT
        z = np.array([puck[0] + noise_rng.normal(0, cfg.sigma_r), puck[1] + noise_rng.normal(0, cfg.sigma_r),
                      puck[4] + noise_rng.normal(0, cfg.sigma_phi)])
        if k == n_steps:
            pending = {"home": Event.STOP, "away": Event.STOP}
        mallets = []
        for side, agent in agents.items():
            agent.observe(t, z)
            event, before = agent.tick(t, pending.pop(side, None))
            if agent.fsm.current is not before:
                transitions.append((t, side, event.value if event else "", before.value, agent.fsm.current.value))
            for msg in agent.violations():
                violations.append((t, side, msg))
            mallets.append(agent.command())
        states.append((agents["home"].fsm.current.value, agents["away"].fsm.current.value))
        log.append((t, *puck[:4], *agents["home"].xy, *(-agents["away"].xy)))
        if k == n_steps:
            break
        mtuple = [(float(p[0]), float(p[1]), float(u[0]), float(u[1])) for p, u in mallets]
        puck, goal = _advance(puck, params, geom, mtuple, DT)
        if not (abs(puck[0]) <= table.length / 2 + 1e-9 or table.in_goal(puck[:2], "home")
                or table.in_goal(puck[:2], "away")) or abs(puck[1]) > table.width / 2 + 1e-9:
            violations.append((t + DT, "referee", "puck left the table"))
        if goal is not None:
            if not table.in_goal(puck[:2], goal):
                violations.append((t + DT, "referee", "goal flagged outside the goal region"))
            scorer = "away" if goal == "home" else "home"
            score[scorer] += 1
            goals.append((t + DT, goal, puck[0], puck[1]))
            puck = _reset_puck(ref_rng, goal, table)
            pending = {"home": Event.PAUSE, "away": Event.PAUSE}
            still_since = t + DT
            continue
        if math.hypot(puck[2], puck[3]) >= cfg.thresholds.v_still:
            still_since = t + DT
        elif t + DT - still_since >= STALL_TIME:
            puck = _reset_puck(ref_rng, "home" if ref_rng.uniform() < 0.5 else "away", table)
            pending = {"home": Event.PAUSE, "away": Event.PAUSE}
            still_since = t + DT
            resets += 1
    return GameResult(score, goals, transitions, np.array(log), states,
                      {s: a.smash_count for s, a in agents.items()}, violations, resets)
