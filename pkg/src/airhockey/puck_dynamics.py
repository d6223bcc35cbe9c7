"""Planar puck simulator driven by the seven-parameter model.

Free motion: Euler position update with the step's starting velocity, then
linear decay and a per-axis constant table friction on the velocity. Rims and
mallets are resolved with an impulse model: restitution on the normal component
and a Coulomb-capped tangential impulse acting on the contact slip. The spin
enters the slip through an effective lever arm ``k_spin * R`` and receives the
reciprocal angular impulse, so a collision never adds kinetic energy. With
``k_spin = 1`` this is the rigid-disc model. Mass cancels out of every update;
``PUCK_MASS`` is only used to report energies.
"""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .config import format_kv, read_kv
from .path_planner import TableGeometry

GRAVITY = 9.81
PUCK_MASS = 0.015
TOI_ITERATIONS = 8
TOI_SCAN = 4
MAX_EVENTS_PER_STEP = 16

PARAM_BOUNDS = {
    "e_long": (0.5, 1.0),
    "e_short": (0.5, 1.0),
    "mu_rim": (0.0, 0.5),
    "mu_table": (0.0, 0.5),
    "k_spin": (0.0, 0.5),
    "d_lin": (0.0, 0.01),
    "d_ang": (0.0, 0.01),
}
PARAM_NAMES = tuple(PARAM_BOUNDS)


@dataclass(frozen=True)
class SimParams:
    e_long: float = 0.8
    e_short: float = 0.8
    mu_rim: float = 0.1
    mu_table: float = 0.01
    k_spin: float = 0.1
    d_lin: float = 0.005
    d_ang: float = 0.005

    def __post_init__(self):
        for name, (lo, hi) in PARAM_BOUNDS.items():
            val = getattr(self, name)
            if not lo <= val <= hi:
                raise ValueError(f"{name}={val} outside [{lo}, {hi}]")

    def as_array(self):
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, theta):
        return cls(*(float(x) for x in theta))

    @staticmethod
    def bounds():
        """(7, 2) array of lower/upper bounds in field order."""
        return np.array([PARAM_BOUNDS[f.name] for f in fields(SimParams)])


def load_params(path):
    kv = read_kv(path)
    defaults = SimParams()
    return SimParams(**{name: kv.float_value(name, getattr(defaults, name)) for name in PARAM_NAMES})


def save_params(path, params):
    with open(path, "w") as fh:
        fh.write(format_kv([(name, getattr(params, name)) for name in PARAM_NAMES]))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class PuckState:
    r: np.ndarray
    rdot: np.ndarray
    phi: float = 0.0
    phidot: float = 0.0

    @classmethod
    def make(cls, x, y, vx=0.0, vy=0.0, phi=0.0, phidot=0.0):
        return cls(np.array([x, y], dtype=float), np.array([vx, vy], dtype=float),
                   wrap_angle(float(phi)), float(phidot))

    def as_tuple(self):
        return (float(self.r[0]), float(self.r[1]), float(self.rdot[0]), float(self.rdot[1]),
                float(self.phi), float(self.phidot))

    def kinetic_energy(self, radius, mass=PUCK_MASS):
        inertia = 0.5 * mass * radius ** 2
        return 0.5 * mass * float(self.rdot @ self.rdot) + 0.5 * inertia * self.phidot ** 2


@dataclass
class CollisionEvent:
    kind: str            # "long", "short" or "mallet"
    vn_in: float         # normal relative speed before (positive = approaching)
    vn_out: float        # normal relative speed after (positive = separating)
    restitution: float


# -- impulse model ------------------------------------------------------------

def _impulse(vx, vy, w, nx, ny, e, mu, k, radius):
    """Contact impulse on relative velocity (vx, vy) with unit normal n pointing into the puck side.

    Returns (vx', vy', w') or None when the bodies are not approaching.
    """
    vn = vx * nx + vy * ny
    if vn >= 0.0:
        return None
    tx, ty = ny, -nx
    vt = vx * tx + vy * ty
    slip = vt + k * radius * w
    jn = (1.0 + e) * -vn                       # normal impulse per unit mass
    j = min(abs(slip) / (1.0 + 2.0 * k * k), mu * jn)
    j = math.copysign(j, slip) if slip != 0.0 else 0.0
    vn_new = -e * vn
    vt_new = vt - j
    w_new = w - 2.0 * k * j / radius            # I = m R^2 / 2
    return vn_new * nx + vt_new * tx, vn_new * ny + vt_new * ty, w_new


RIMS = {("long", 1): (0.0, -1.0), ("long", -1): (0.0, 1.0),
        ("short", 1): (-1.0, 0.0), ("short", -1): (1.0, 0.0)}


def resolve_rim_collision(state, params, rim, table=None):
    """Bounce off a rim given as ``(kind, sign)``, e.g. ``("long", 1)`` for the y = +w/2 side."""
    table = TableGeometry() if table is None else table
    nx, ny = RIMS[tuple(rim)]
    e = params.e_long if rim[0] == "long" else params.e_short
    out = _impulse(state.rdot[0], state.rdot[1], state.phidot, nx, ny, e, params.mu_rim,
                   params.k_spin, table.puck_radius)
    if out is None:
        return state
    return PuckState(state.r.copy(), np.array(out[:2]), state.phi, out[2])


def resolve_mallet_collision(state, mallet_pos, mallet_vel, params, table=None):
    """Impulse from a kinematic (infinite-mass) mallet; reuses ``e_long`` and ``mu_rim``."""
    table = TableGeometry() if table is None else table
    d = state.r - np.asarray(mallet_pos, dtype=float)
    dist = float(np.hypot(d[0], d[1]))
    nx, ny = d[0] / dist, d[1] / dist
    rel = state.rdot - np.asarray(mallet_vel, dtype=float)
    out = _impulse(rel[0], rel[1], state.phidot, nx, ny, params.e_long, params.mu_rim,
                   params.k_spin, table.puck_radius)
    if out is None:
        return state
    v = np.array(out[:2]) + np.asarray(mallet_vel, dtype=float)
    return PuckState(state.r.copy(), v, state.phi, out[2])


# -- stepping -----------------------------------------------------------------

class _Geometry:
    """Precomputed float limits for the fast path."""

    def __init__(self, table):
        self.table = table
        self.R = table.puck_radius
        self.x_lim = table.length / 2 - table.puck_radius
        self.y_lim = table.width / 2 - table.puck_radius
        self.half_goal = table.goal_width / 2
        self.contact = table.puck_radius + table.mallet_radius
        self.goal_x = table.length / 2


_GEOMS = {}


def _geometry(table):
    geom = _GEOMS.get(table)
    if geom is None:
        geom = _GEOMS[table] = _Geometry(table)
    return geom


def _gaps(geom, x, y, mallets, t, skip=()):
    """Smallest signed gap and which contact it belongs to, at time t into the sub-step."""
    best, which = geom.y_lim - y, ("long", 1)
    g = y + geom.y_lim
    if g < best:
        best, which = g, ("long", -1)
    if abs(y) >= geom.half_goal:
        g = geom.x_lim - x
        if g < best:
            best, which = g, ("short", 1)
        g = x + geom.x_lim
        if g < best:
            best, which = g, ("short", -1)
    for i, (mx, my, ux, uy) in enumerate(mallets):
        if i in skip:
            continue
        g = math.hypot(x - mx - ux * t, y - my - uy * t) - geom.contact
        if g < best:
            best, which = g, ("mallet", i)
    return best, which


def _move(x, y, vx, vy, w, p, geom, mallets, dt, events=None):
    """Straight-line motion over dt with every contact on the way resolved.

    Returns (x, y, vx, vy, w, n_contacts).
    """
    R = geom.R
    t_done = 0.0
    n_contacts = 0
    separated = set()
    for _ in range(MAX_EVENTS_PER_STEP):
        rem = dt - t_done
        if rem <= 0.0:
            break
        # coarse scan for the first penetration, then bisect on the gap
        t_lo, t_hi = 0.0, None
        for k in range(1, TOI_SCAN + 1):
            tk = rem * k / TOI_SCAN
            g, which = _gaps(geom, x + vx * tk, y + vy * tk, mallets, t_done + tk, separated)
            if g < 0.0:
                t_hi = tk
                break
            t_lo = tk
        if t_hi is None:
            x += vx * rem
            y += vy * rem
            break
        for _ in range(TOI_ITERATIONS):
            mid = 0.5 * (t_lo + t_hi)
            g, _ = _gaps(geom, x + vx * mid, y + vy * mid, mallets, t_done + mid, separated)
            if g < 0.0:
                t_hi = mid
            else:
                t_lo = mid
        _, which = _gaps(geom, x + vx * t_hi, y + vy * t_hi, mallets, t_done + t_hi, separated)
        x += vx * t_lo
        y += vy * t_lo
        t_done += t_lo
        kind, idx = which
        if kind == "mallet":
            mx, my, ux, uy = mallets[idx]
            mx += ux * t_done
            my += uy * t_done
            dx, dy = x - mx, y - my
            dist = math.hypot(dx, dy)
            if dist > 1e-12:
                nx, ny = dx / dist, dy / dist
            else:
                # centres coincide: push out along the mallet motion, or towards the table centre
                sp = math.hypot(ux, uy)
                nx, ny = (ux / sp, uy / sp) if sp > 0 else (0.0, -math.copysign(1.0, y))
            out = _impulse(vx - ux, vy - uy, w, nx, ny, p.e_long, p.mu_rim, p.k_spin, R)
            if out is not None:
                n_contacts += 1
                vn_in = -((vx - ux) * nx + (vy - uy) * ny)
                vx, vy, w = out[0] + ux, out[1] + uy, out[2]
                if events is not None:
                    events.append(CollisionEvent("mallet", vn_in, (vx - ux) * nx + (vy - uy) * ny, p.e_long))
            else:
                # overlapping without approach (mallet pushing from behind its own motion): separate,
                # but never through a rim when the puck is pinched against it, and let the rims
                # still act for the rest of the step
                x, y = mx + nx * geom.contact, my + ny * geom.contact
                y = min(max(y, -geom.y_lim), geom.y_lim)
                if abs(y) >= geom.half_goal:
                    x = min(max(x, -geom.x_lim), geom.x_lim)
                separated.add(idx)
                continue
        else:
            nx, ny = RIMS[which]
            e = p.e_long if kind == "long" else p.e_short
            out = _impulse(vx, vy, w, nx, ny, e, p.mu_rim, p.k_spin, R)
            if out is not None:
                n_contacts += 1
                vn_in = -(vx * nx + vy * ny)
                vx, vy, w = out
                if events is not None:
                    events.append(CollisionEvent(kind, vn_in, vx * nx + vy * ny, e))
            # clamp any residual bisection overshoot back onto the rim line
            x = min(max(x, -geom.x_lim), geom.x_lim) if kind == "short" else x
            y = min(max(y, -geom.y_lim), geom.y_lim) if kind == "long" else y
        if t_lo == 0.0 and out is None:
            # stuck in contact with nothing to resolve; finish the step without events
            x += vx * rem
            y += vy * rem
            break
    return x, y, vx, vy, w, n_contacts


def _advance(s, p, geom, mallets, dt, events=None):
    """Advance the float state tuple by dt. Returns (new_state, goal_side or None)."""
    x, y, vx, vy, phi, w = s
    x, y, vx, vy, w, _ = _move(x, y, vx, vy, w, p, geom, mallets, dt, events)
    phi = wrap_angle(phi + s[5] * dt)
    # drift on the velocity
    c = p.mu_table * GRAVITY * dt
    decay = 1.0 - p.d_lin * dt
    vx, vy = _friction(vx * decay, c), _friction(vy * decay, c)
    w *= 1.0 - p.d_ang * dt
    goal = None
    if abs(y) < geom.half_goal:
        if x > geom.goal_x:
            goal = "away"
        elif x < -geom.goal_x:
            goal = "home"
    return (x, y, vx, vy, phi, w), goal


def _friction(v, c):
    if abs(v) <= c:
        return 0.0
    return v - math.copysign(c, v)


def _mallet_tuple(mallets):
    return [(float(m[0][0]), float(m[0][1]), float(m[1][0]), float(m[1][1])) for m in (mallets or [])]


def step(state, params, table=None, mallets=None, dt=0.01, events=None):
    """One simulator step. ``mallets`` is a list of (position, velocity) pairs."""
    if not 0.0 < dt <= 0.02:
        raise ValueError("dt must lie in (0, 0.02]")
    geom = _geometry(TableGeometry() if table is None else table)
    out, _ = _advance(state.as_tuple(), params, geom, _mallet_tuple(mallets), dt, events)
    return PuckState(np.array(out[:2]), np.array(out[2:4]), out[4], out[5])


class Trace(list):
    """List of ``PuckState`` with the goal side (or None) that ended the round."""

    goal = None

    def array(self):
        return np.array([s.as_tuple() for s in self])


def simulate_array(initial, params, table=None, dt=0.01, T=1.0, mallet_fn=None, events=None):
    """Fast path: (N+1, 6) array of (x, y, vx, vy, phi, phidot) and the goal side.

    ``mallet_fn(k)`` may return the mallet list for step k. Rows after a goal are not produced.
    """
    geom = _geometry(TableGeometry() if table is None else table)
    n = int(round(T / dt))
    s = initial.as_tuple() if isinstance(initial, PuckState) else tuple(float(v) for v in initial)
    rows = [s]
    goal = None
    for k in range(n):
        mallets = _mallet_tuple(mallet_fn(k)) if mallet_fn is not None else ()
        s, goal = _advance(s, params, geom, mallets, dt, events)
        rows.append(s)
        if goal is not None:
            break
    return np.array(rows), goal


def simulate_trace(initial, params, table=None, dt=0.01, T=1.0, mallet_fn=None, events=None):
    rows, goal = simulate_array(initial, params, table, dt, T, mallet_fn, events)
    trace = Trace(PuckState(r[:2].copy(), r[2:4].copy(), float(r[4]), float(r[5])) for r in rows)
    trace.goal = goal
    return trace


def write_trace_csv(path, rows, dt):
    rows = rows.array() if isinstance(rows, Trace) else np.asarray(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "vx", "vy", "phi", "phidot"])
        for k, row in enumerate(rows):
            writer.writerow([f"{k * dt:.6f}"] + [f"{v:.12g}" for v in row])


def read_trace_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]
