"""Planar hitting-path planner.

A hit plan has two segments: the *hitting* segment from the start point to the
hit point and the *stop* segment from the hit point to the stop point. Each is
a line-arc-line path whose corner sits on the tightened table boundary where
the hitting line crosses it. The arc is the largest fillet that fits both
legs. Arc length along each segment follows a quartic time profile with zero
acceleration at both ends.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, EmptyRegion, InvalidBoundary, OutOfBounds, OutOfRange

PUCK_RADIUS = 0.03165
MALLET_RADIUS = 0.048
SAFETY_MARGIN = 0.005
COLLINEAR_TOL = 1e-9
RADIUS_SHRINK = 1e-6


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned rectangle."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @property
    def size(self):
        return self.x_max - self.x_min, self.y_max - self.y_min

    def contains(self, p, tol=1e-12):
        return (self.x_min - tol <= p[0] <= self.x_max + tol
                and self.y_min - tol <= p[1] <= self.y_max + tol)

    def distance_outside(self, p):
        dx = max(self.x_min - p[0], 0.0, p[0] - self.x_max)
        dy = max(self.y_min - p[1], 0.0, p[1] - self.y_max)
        return math.hypot(dx, dy)

    def clamp(self, p):
        return np.array([min(max(p[0], self.x_min), self.x_max), min(max(p[1], self.y_min), self.y_max)])

    def intersect(self, other):
        return Bounds(max(self.x_min, other.x_min), min(self.x_max, other.x_max),
                      max(self.y_min, other.y_min), min(self.y_max, other.y_max))


@dataclass(frozen=True)
class TableGeometry:
    """Table centred at the origin, long side along x. Home goal at x = -length/2."""

    length: float = 2.16
    width: float = 1.22
    goal_width: float = 0.25
    puck_radius: float = PUCK_RADIUS
    mallet_radius: float = MALLET_RADIUS

    def __post_init__(self):
        if not self.width < self.length:
            raise ValueError("table width must be below its length")
        if self.puck_radius <= 0 or self.mallet_radius <= 0:
            raise ValueError("radii must be positive")
        if not self.goal_width < self.width:
            raise ValueError("goal width must be below table width")

    @property
    def bounds(self):
        return Bounds(-self.length / 2, self.length / 2, -self.width / 2, self.width / 2)

    def in_goal(self, r, side):
        """True if the puck centre ``r`` is past the goal line of ``side`` ('home' or 'away')."""
        sign = -1.0 if side == "home" else 1.0
        return abs(r[1]) < self.goal_width / 2 and sign * r[0] > self.length / 2

    def goal_center(self, side):
        return np.array([(-1.0 if side == "home" else 1.0) * self.length / 2, 0.0])


def tightened_boundary(table, margin):
    """Table rectangle shrunk by ``margin`` on every side."""
    if 2 * margin >= table.width or 2 * margin >= table.length:
        raise EmptyRegion(f"margin {margin} leaves no room on a {table.length} x {table.width} table")
    b = table.bounds
    return Bounds(b.x_min + margin, b.x_max - margin, b.y_min + margin, b.y_max - margin)


def default_margin(table):
    return table.mallet_radius + SAFETY_MARGIN


def motion_bounds(table, points, pad=0.1, margin=None):
    """Tightened table boundary further limited to the box around ``points`` grown by ``pad``.

    Keeps the cross-points (and so the arcs) close to the start, hit and stop
    points instead of at the far rims.
    """
    margin = default_margin(table) if margin is None else margin
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0) - pad
    hi = pts.max(axis=0) + pad
    return tightened_boundary(table, margin).intersect(Bounds(lo[0], hi[0], lo[1], hi[1]))


# -- path pieces --------------------------------------------------------------

@dataclass(frozen=True)
class Line:
    p0: np.ndarray
    p1: np.ndarray
    # Explicit unit direction; short pieces lose precision if it is derived from the endpoints.
    direction: np.ndarray = None

    def __post_init__(self):
        if self.direction is None:
            L = np.linalg.norm(self.p1 - self.p0)
            object.__setattr__(self, "direction", (self.p1 - self.p0) / L if L > 0 else np.zeros(2))

    @property
    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))

    def at(self, s):
        return self.p0 + s * self.direction, self.direction


@dataclass(frozen=True)
class Arc:
    center: np.ndarray
    radius: float
    start_angle: float
    sweep: float

    @property
    def length(self):
        return abs(self.sweep) * self.radius

    def at(self, s):
        direction = 1.0 if self.sweep >= 0 else -1.0
        a = self.start_angle + direction * s / self.radius
        c, sn = math.cos(a), math.sin(a)
        pos = self.center + self.radius * np.array([c, sn])
        tangent = direction * np.array([-sn, c])
        return pos, tangent


@dataclass(frozen=True)
class QuarticProfile:
    """``s(t) = a0 + a1 t + a2 t^2 + a3 t^3 + a4 t^4`` on ``[0, t_f]``."""

    coefficients: tuple
    t_f: float
    s_f: float

    def position(self, t):
        a0, a1, a2, a3, a4 = self.coefficients
        return a0 + t * (a1 + t * (a2 + t * (a3 + t * a4)))

    def velocity(self, t):
        _, a1, a2, a3, a4 = self.coefficients
        return a1 + t * (2 * a2 + t * (3 * a3 + t * 4 * a4))

    def acceleration(self, t):
        _, _, a2, a3, a4 = self.coefficients
        return 2 * a2 + t * (6 * a3 + t * 12 * a4)


def fit_quartic_profile(s_f, v_start, v_end):
    """Quartic arc-length profile from rest to ``v_end`` or from ``v_start`` to rest.

    The six boundary conditions (position, speed and zero acceleration at both
    ends) are consistent only for ``t_f = 2 s_f / v_hit``.
    """
    if s_f <= 0:
        raise InvalidBoundary("path length must be positive")
    if v_start < 0 or v_end < 0:
        raise InvalidBoundary("endpoint speeds must be non-negative")
    if (v_start == 0) == (v_end == 0):
        raise InvalidBoundary("exactly one endpoint speed must be zero")
    v_hit = v_start + v_end
    t_f = 2.0 * s_f / v_hit
    a4 = (v_start - v_end) / (2.0 * t_f ** 3)
    a3 = -2.0 * a4 * t_f
    return QuarticProfile((0.0, float(v_start), 0.0, a3, a4), t_f, float(s_f))


@dataclass
class PlanSegment:
    pieces: list
    profile: QuarticProfile = None
    bounds: Bounds = None
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._cum = np.concatenate([[0.0], np.cumsum([p.length for p in self.pieces])])

    @property
    def length(self):
        return float(self._cum[-1])

    def at(self, s):
        """Position and unit tangent at arc length ``s``."""
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self._cum, s, side="right")) - 1
        k = min(max(k, 0), len(self.pieces) - 1)
        pos, tangent = self.pieces[k].at(s - self._cum[k])
        if self.bounds is not None:
            # Only removes rounding error; pieces are inside by construction.
            pos = self.bounds.clamp(pos)
        return pos, tangent

    @property
    def start(self):
        return self.at(0.0)[0]

    @property
    def end(self):
        return self.at(self.length)[0]


@dataclass
class HitPlan:
    segments: list
    hit_point: np.ndarray
    hit_direction: np.ndarray
    hit_speed: float

    @property
    def hit_time(self):
        return self.segments[0].profile.t_f

    @property
    def duration(self):
        return sum(seg.profile.t_f for seg in self.segments)


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def line_cross_points(point, direction, bounds):
    """Where the line ``point + lam * direction`` leaves ``bounds``: (behind, ahead)."""
    if not bounds.contains(point, tol=1e-9):
        raise OutOfBounds(f"point {tuple(np.round(point, 4))} lies outside the boundary")
    lam_front, lam_back = math.inf, -math.inf
    for k, (lo, hi) in enumerate(((bounds.x_min, bounds.x_max), (bounds.y_min, bounds.y_max))):
        if abs(direction[k]) < 1e-15:
            continue
        a = (lo - point[k]) / direction[k]
        b = (hi - point[k]) / direction[k]
        lam_front = min(lam_front, max(a, b))
        lam_back = max(lam_back, min(a, b))
    if not (math.isfinite(lam_front) and math.isfinite(lam_back)):
        raise OutOfBounds("direction has no cross-point with the boundary")
    return point + lam_back * direction, point + lam_front * direction


def fillet(a, m, b):
    """Pieces of the C1 path a -> corner m -> b with the largest tangent arc.

    The arc radius is the largest one whose tangent points stay on both legs,
    shrunk by ``RADIUS_SHRINK`` so they land strictly inside.
    """
    l1 = float(np.linalg.norm(m - a))
    l2 = float(np.linalg.norm(b - m))
    if l1 < COLLINEAR_TOL or l2 < COLLINEAR_TOL:
        return [Line(a.copy(), b.copy())]
    u1 = (m - a) / l1
    u2 = (b - m) / l2
    turn = math.atan2(_cross(u1, u2), float(np.dot(u1, u2)))
    if abs(turn) < 1e-12:
        return [Line(a.copy(), b.copy())]
    if math.pi - abs(turn) < 1e-12:
        raise DegenerateGeometry("path would reverse onto itself at the corner")
    half_tan = math.tan(abs(turn) / 2)
    radius = min(l1, l2) / half_tan
    radius = radius - RADIUS_SHRINK if radius > 2 * RADIUS_SHRINK else 0.5 * radius
    d = radius * half_tan
    t1 = m - d * u1
    t2 = m + d * u2
    side = 1.0 if turn > 0 else -1.0
    normal = side * np.array([-u1[1], u1[0]])
    center = t1 + radius * normal
    start_angle = math.atan2(-normal[1], -normal[0])
    pieces = []
    if l1 - d > 0:
        pieces.append(Line(a.copy(), t1, u1))
    pieces.append(Arc(center, radius, start_angle, turn))
    if l2 - d > 0:
        pieces.append(Line(t2, b.copy(), u2))
    return pieces


def _distance_to_line(p, origin, direction):
    return abs(_cross(p - origin, direction))


def plan_hit_path(start, hit_point, hit_dir, stop, bounds, hit_speed):
    """Plan the two-segment hitting path and its time profiles.

    Args:
        start, hit_point, stop: 2-vectors inside ``bounds``.
        hit_dir: unit 2-vector, mallet direction at the hit.
        bounds: tightened boundary (``Bounds``).
        hit_speed: mallet speed at the hit point (m/s).
    """
    start, hit_point, stop = (np.asarray(p, dtype=float) for p in (start, hit_point, stop))
    v = np.asarray(hit_dir, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("hit direction must be a unit vector")
    for name, p in (("start", start), ("stop", stop)):
        if not bounds.contains(p, tol=1e-9):
            raise OutOfBounds(f"{name} point lies outside the boundary")
    back, front = line_cross_points(hit_point, v, bounds)

    if _distance_to_line(start, hit_point, v) < COLLINEAR_TOL:
        if np.dot(hit_point - start, v) <= COLLINEAR_TOL:
            raise DegenerateGeometry("start lies on the hitting line ahead of the hit point")
        hit_pieces = [Line(start.copy(), hit_point.copy())]
    else:
        if np.linalg.norm(back - hit_point) < COLLINEAR_TOL:
            raise DegenerateGeometry("hit point sits on the boundary with no run-up")
        hit_pieces = fillet(start, back, hit_point)

    if _distance_to_line(stop, hit_point, v) < COLLINEAR_TOL:
        if np.dot(stop - hit_point, v) <= COLLINEAR_TOL:
            raise DegenerateGeometry("stop lies on the hitting line behind the hit point")
        stop_pieces = [Line(hit_point.copy(), stop.copy())]
    else:
        if np.linalg.norm(front - hit_point) < COLLINEAR_TOL:
            raise DegenerateGeometry("hit point sits on the boundary facing outwards")
        stop_pieces = fillet(hit_point, front, stop)

    hitting = PlanSegment(hit_pieces, bounds=bounds)
    stopping = PlanSegment(stop_pieces, bounds=bounds)
    hitting.profile = fit_quartic_profile(hitting.length, 0.0, hit_speed)
    stopping.profile = fit_quartic_profile(stopping.length, hit_speed, 0.0)
    return HitPlan([hitting, stopping], hit_point, v, float(hit_speed))


def eval_plan(plan, t):
    """Position and velocity of the mallet at time ``t`` on the plan."""
    total = plan.duration
    if t < -1e-12 or t > total + 1e-12:
        raise OutOfRange(f"t={t} outside [0, {total}]")
    t = min(max(t, 0.0), total)
    seg = plan.segments[0]
    if t > seg.profile.t_f:
        t -= seg.profile.t_f
        seg = plan.segments[1]
        t = min(t, seg.profile.t_f)
    s = seg.profile.position(t)
    pos, tangent = seg.at(s)
    return pos, tangent * seg.profile.velocity(t)


def path_acceleration(plan, t):
    """Tangential acceleration along the path (``s_ddot`` of the active segment)."""
    seg = plan.segments[0]
    if t > seg.profile.t_f:
        t -= seg.profile.t_f
        seg = plan.segments[1]
    return seg.profile.acceleration(t)


def sample_plan(plan, dt):
    """Sample (t, x, y, vx, vy) rows on a ``dt`` grid; the hit instant is always included."""
    t_hit = plan.hit_time
    n_hit = max(1, int(math.ceil(t_hit / dt - 1e-9)))
    n_stop = max(1, int(math.ceil((plan.duration - t_hit) / dt - 1e-9)))
    times = list(np.linspace(0.0, t_hit, n_hit + 1))
    times += list(t_hit + np.linspace(0.0, plan.duration - t_hit, n_stop + 1)[1:])
    rows = []
    for t in times:
        p, vel = eval_plan(plan, t)
        rows.append((t, p[0], p[1], vel[0], vel[1]))
    return np.array(rows)


def write_plan_csv(path, plan, dt):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "vx", "vy"])
        for row in sample_plan(plan, dt):
            writer.writerow([f"{v:.9g}" for v in row])


HIT_TYPES = ("direct", "forward_bounce", "reverse_bounce")


def compute_hit_direction(puck, target, table, hit_type):
    """Unit direction for the puck to reach ``target`` directly or with one long-rim bounce.

    Bounce shots aim at the target mirrored about the rim line the puck centre
    touches (rim offset inwards by the puck radius). A forward bounce uses the rim
    on the puck's side (y >= 0 counts as the positive side), a reverse bounce the other one.
    """
    puck = np.asarray(puck, dtype=float)
    target = np.asarray(target, dtype=float)
    if hit_type == "direct":
        aim = target
    elif hit_type in ("forward_bounce", "reverse_bounce"):
        side = 1.0 if puck[1] >= 0 else -1.0
        if hit_type == "reverse_bounce":
            side = -side
        rim_y = side * (table.width / 2 - table.puck_radius)
        aim = np.array([target[0], 2 * rim_y - target[1]])
    else:
        raise ValueError(f"unknown hit type {hit_type!r}")
    d = aim - puck
    return d / np.linalg.norm(d)
