"""Small dense QP with two-sided bounds on a linear image of the variables.

Solves::

    min_x  0.5 x^T H x + g^T x    s.t.  lo <= C x <= hi

with the dual active-set method of Goldfarb and Idnani. It starts from the
unconstrained minimiser, so no feasible initial point is needed, and an empty
feasible set is detected when a violated constraint cannot be added.
Sizes here are tiny (x has 4-5 entries, C has 7 rows).
"""
from __future__ import annotations

import numpy as np

from .errors import Infeasible

_ZERO = 1e-12


class BoxQPResult:
    __slots__ = ("x", "active", "multipliers", "iterations")

    def __init__(self, x, active, multipliers, iterations):
        self.x = x
        # active[k] = (row, sign): sign +1 means C[row] x = lo[row], -1 means C[row] x = hi[row]
        self.active = active
        self.multipliers = multipliers
        self.iterations = iterations


def solve_box_qp(H, g, C, lo, hi, max_iter=200, feas_tol=1e-12):
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    C = np.asarray(C, dtype=float)
    L = np.linalg.cholesky(H)
    Hinv = np.linalg.inv(L).T @ np.linalg.inv(L)
    x = -Hinv @ g
    n = x.size
    row_scale = np.maximum(np.linalg.norm(C, axis=1), 1.0)
    tol = feas_tol * row_scale

    active = []          # list of (row, sign)
    u = np.zeros(0)      # multipliers of the active constraints
    if np.any(lo > hi):
        raise Infeasible("lower bound above upper bound")

    for it in range(max_iter):
        Cx = C @ x
        viol_lo = lo - Cx
        viol_hi = Cx - hi
        worst_lo = int(np.argmax(viol_lo))
        worst_hi = int(np.argmax(viol_hi))
        if viol_lo[worst_lo] <= tol[worst_lo] and viol_hi[worst_hi] <= tol[worst_hi]:
            return BoxQPResult(x, active, u, it)
        if viol_lo[worst_lo] / row_scale[worst_lo] >= viol_hi[worst_hi] / row_scale[worst_hi]:
            p, sp = worst_lo, 1.0
        else:
            p, sp = worst_hi, -1.0
        # constraint p in ">=" form: np^T x >= bp
        n_p = sp * C[p]
        b_p = lo[p] if sp > 0 else -hi[p]
        u_p = 0.0

        while True:
            if active:
                N = np.array([s * C[r] for r, s in active]).T     # n x m
                HN = Hinv @ N
                M = N.T @ HN
                Hn = Hinv @ n_p
                r = np.linalg.solve(M, N.T @ Hn)
                z = Hn - HN @ r
            else:
                r = np.zeros(0)
                z = Hinv @ n_p
            # partial (dual) step length
            t1, drop = np.inf, -1
            for k in range(len(active)):
                if r[k] > _ZERO:
                    ratio = u[k] / r[k]
                    if ratio < t1:
                        t1, drop = ratio, k
            zn = float(z @ n_p)
            s_p = float(n_p @ x - b_p)
            t2 = -s_p / zn if abs(zn) > _ZERO * max(1.0, float(n_p @ n_p)) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise Infeasible(f"constraint on row {p} cannot be satisfied")
            if np.isfinite(t2):
                x = x + t * z
            u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append((p, sp))
                u = np.append(u, u_p)
                break
            # drop the blocking constraint and recompute the step
            active.pop(drop)
            u = np.delete(u, drop)
        if len(active) > n:
            raise Infeasible("active set exceeds problem dimension")
    raise Infeasible("active-set iteration limit reached")


def kkt_residuals(H, g, C, lo, hi, res):
    """Stationarity, primal infeasibility and complementarity of a solution."""
    x = res.x
    grad = H @ x + g
    for (row, sign), mult in zip(res.active, res.multipliers):
        grad = grad - mult * sign * C[row]
    Cx = C @ x
    primal = max(float(np.max(lo - Cx)), float(np.max(Cx - hi)), 0.0)
    comp = 0.0
    for (row, sign), mult in zip(res.active, res.multipliers):
        slack = Cx[row] - lo[row] if sign > 0 else hi[row] - Cx[row]
        comp = max(comp, abs(mult * slack))
    dual = max([0.0] + [-m for m in res.multipliers])
    return float(np.max(np.abs(grad))), primal, comp, dual
