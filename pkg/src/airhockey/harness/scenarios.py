"""Experiment scenarios behind the command-line harness.

Each ``run_*`` function takes a scenario config (a ``KeyValueFile`` or None for
defaults), an output directory, a seed and a worker count, writes its CSV
reports and returns a small summary dict. Reports are a pure function of
(config, seed); wall-clock measurements go to separate ``*timing*.csv`` files
so the remaining reports stay byte-identical between runs.
"""
from __future__ import annotations

import csv
import functools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import path_planner as pp
from ..arena import ROBOT_BASE, home_configuration, table_arm
from ..config import KeyValueFile
from ..errors import ConfigError
from ..game import GameConfig, run_game
from ..hit_optimizer import MODES, TrackerConfig, hit_point_for_puck, timed_plan_hit_trajectory
from ..kinematics import RigidTransform, load_chain
from ..puck_dynamics import PARAM_NAMES, SimParams, load_params
from ..puck_tracker import (H, FilterConfig, FilterState, finite_difference_velocity, run_filter,
                            synthetic_bounce_traces, update)
from ..sysid.identify import from_unit, identify, loss, make_reference_traces, mean_position_error, random_search
from ..tactics import Thresholds

KINDS = ("hit-bench", "sysid", "filter-eval", "selfplay")

# allowed keys and defaults per scenario; anything else in a config is an error
DEFAULTS = {
    "hit-bench": {
        "chain": "",
        "grid.nx": 15,
        "grid.ny": 12,
        "grid.x": (-0.8, -0.3),
        "grid.y": (-0.4, 0.4),
        "stop_offset": 0.1,
        "modes": " ".join(MODES),
        "hit_types": " ".join(pp.HIT_TYPES),
    },
    "sysid": {
        "iterations": 200,
        "batch_size": 5,
        "traces": 10,
        "trace_duration": 1.5,
        "beta": 1.0,
    },
    "filter-eval": {
        "traces": 20,
        "trace_duration": 2.0,
        "sigma_r": 1e-3,
        "sigma_phi": 0.01,
        "inlier_updates": 10000,
        "params": "",
    },
    "selfplay": {
        "duration": 60.0,
        "sigma_r": 1e-3,
        "sigma_phi": 0.01,
        "params": "",
        "v_smash_max": Thresholds.v_smash_max,
        "v_repel_min": Thresholds.v_repel_min,
        "horizon": Thresholds.horizon,
    },
}


def check_keys(kind, kv):
    if kv is None:
        return
    for key in kv:
        if key not in DEFAULTS[kind]:
            raise ConfigError(f"unknown key '{key}' for {kind}", kv.path, kv.lines.get(key))


def _opts(kind, kv):
    """Config view with defaults filled in; typed getters raise ConfigError with line numbers."""
    check_keys(kind, kv)
    return kv if kv is not None else KeyValueFile()


def _positive(kv, key, value):
    if value <= 0:
        raise ConfigError(f"'{key}' must be positive", kv.path, kv.lines.get(key))
    return value


def _resolve(kv, key):
    """Path value relative to the config file's directory."""
    value = kv.get(key, "")
    if not value or os.path.isabs(value) or kv.path is None:
        return value
    return os.path.join(os.path.dirname(os.fspath(kv.path)), value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x, digits=9):
    return f"{x:.{digits}g}"


def _pool_map(workers):
    if workers <= 1:
        return None, map
    pool = ProcessPoolExecutor(max_workers=workers)
    return pool, functools.partial(pool.map, chunksize=1)


# -- hitting benchmark -----------------------------------------------------------

@dataclass(frozen=True)
class HitTask:
    cell: int
    puck: tuple
    hit_type: str
    mode: str
    stop_offset: float
    entropy: tuple


def bench_grid(nx=15, ny=12, x_range=(-0.8, -0.3), y_range=(-0.4, 0.4)):
    """Puck positions of the benchmark grid, x-major order."""
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    return np.array([(x, y) for x in xs for y in ys])


def _hit_worker(task, chain_path=""):
    chain, q0 = _bench_chain(chain_path)
    table = pp.TableGeometry()
    puck = np.array(task.puck)
    d = pp.compute_hit_direction(puck, table.goal_center("away"), table, task.hit_type)
    inner = pp.tightened_boundary(table, pp.default_margin(table))
    stop = inner.clamp(hit_point_for_puck(puck, d, table) + task.stop_offset * d)
    rng = np.random.default_rng(task.entropy)
    traj, ms = timed_plan_hit_trajectory(chain, q0, puck, d, stop, table, TrackerConfig(), task.mode, rng=rng)
    limits_ok = bool(chain.within_limits(traj.q, tol=1e-9)
                     and np.all(np.abs(traj.qdot) <= chain.qdot_max + 1e-9))
    return traj.feasible, traj.achieved_hit_speed, traj.trials, limits_ok, ms


@functools.lru_cache(maxsize=4)
def _bench_chain(chain_path):
    if not chain_path:
        chain = table_arm()
    else:
        chain = load_chain(chain_path).with_base(RigidTransform(np.eye(3), ROBOT_BASE))
    return chain, home_configuration(chain)


def hit_bench_tasks(kv, seed):
    """Validated benchmark tasks for a config: grid cells x hit types x modes, in report order."""
    kv = _opts("hit-bench", kv)
    d = DEFAULTS["hit-bench"]
    nx = _positive(kv, "grid.nx", kv.int_value("grid.nx", d["grid.nx"]))
    ny = _positive(kv, "grid.ny", kv.int_value("grid.ny", d["grid.ny"]))
    x_range = kv.floats("grid.x", 2, d["grid.x"])
    y_range = kv.floats("grid.y", 2, d["grid.y"])
    stop_offset = kv.float_value("stop_offset", d["stop_offset"])
    modes = kv.str_value("modes", d["modes"]).split()
    hit_types = kv.str_value("hit_types", d["hit_types"]).split()
    for key, values, allowed in (("modes", modes, MODES), ("hit_types", hit_types, pp.HIT_TYPES)):
        bad = [v for v in values if v not in allowed]
        if bad or not values:
            raise ConfigError(f"'{key}' accepts {' '.join(allowed)}", kv.path, kv.lines.get(key))

    grid = bench_grid(nx, ny, x_range, y_range)
    table = pp.TableGeometry()
    inner = pp.tightened_boundary(table, pp.default_margin(table))
    for p in grid:
        if not inner.contains(p):
            key = "grid.x" if not inner.x_min <= p[0] <= inner.x_max else "grid.y"
            raise ConfigError(f"grid point ({p[0]:.3f}, {p[1]:.3f}) lies outside the tightened table",
                              kv.path, kv.lines.get(key))
    tasks = [HitTask(c, (float(p[0]), float(p[1])), ht, mode, stop_offset, (seed, c, i, j))
             for c, p in enumerate(grid) for i, ht in enumerate(hit_types) for j, mode in enumerate(modes)]
    return tasks, modes


def run_hit_bench(kv, out, seed, workers=1):
    """Plan every (grid cell, hit type, mode) and report speed, feasibility and timing.

    Writes ``hits.csv`` (one row per plan), ``summary.csv`` (per mode) and the
    wall-clock files ``hits_timing.csv`` and ``timing_summary.csv``.
    """
    tasks, modes = hit_bench_tasks(kv, seed)
    chain_path = _resolve(kv, "chain") if kv is not None else ""
    _bench_chain(chain_path)                 # fail early on a bad chain file

    os.makedirs(out, exist_ok=True)
    pool, map_fn = _pool_map(workers)
    try:
        results = list(map_fn(functools.partial(_hit_worker, chain_path=chain_path), tasks))
    finally:
        if pool is not None:
            pool.shutdown()

    rows, timing = [], []
    for task, (feasible, speed, trials, limits_ok, ms) in zip(tasks, results):
        rows.append([task.cell, _fmt(task.puck[0]), _fmt(task.puck[1]), task.hit_type, task.mode,
                     int(feasible), _fmt(speed, 12), trials, int(limits_ok)])
        timing.append([task.cell, task.hit_type, task.mode, f"{ms:.3f}"])
    _write_csv(os.path.join(out, "hits.csv"),
               ["cell", "puck_x", "puck_y", "hit_type", "mode", "feasible", "hit_speed", "trials", "limits_ok"], rows)
    _write_csv(os.path.join(out, "hits_timing.csv"), ["cell", "hit_type", "mode", "time_ms"], timing)

    summary, timing_summary = [], []
    per_mode = {}
    for mode in modes:
        sel = [r for t, r in zip(tasks, results) if t.mode == mode]
        speeds = np.array([r[1] for r in sel])
        ms = np.array([r[4] for r in sel])
        n_fail = sum(not r[0] for r in sel)
        n_limit = sum(not r[3] for r in sel)
        summary.append([mode, len(sel), n_fail, n_limit, _fmt(speeds.mean(), 12), _fmt(np.median(speeds), 12)])
        timing_summary.append([mode] + [f"{f(ms):.3f}" for f in (np.mean, np.min, np.max, np.median)])
        per_mode[mode] = {"failures": n_fail, "limit_violations": n_limit, "mean_speed": float(speeds.mean()),
                          "median_ms": float(np.median(ms))}
    _write_csv(os.path.join(out, "summary.csv"),
               ["mode", "plans", "failures", "limit_violations", "mean_speed", "median_speed"], summary)
    _write_csv(os.path.join(out, "timing_summary.csv"), ["method", "mean_ms", "min_ms", "max_ms", "median_ms"],
               timing_summary)
    return {"rows": len(rows), "modes": per_mode}


# -- system identification -------------------------------------------------------

def _unit_loss(u, reference):
    return loss(from_unit(u), reference)


def run_sysid(kv, out, seed, workers=1):
    """Identify a hidden parameter vector from simulated traces, against random search.

    The hidden parameters, the traces and both searches are drawn from ``seed``.
    Writes ``loss_curve.csv`` (best-so-far per iteration, equal evaluation counts),
    ``best_theta.csv`` (truth and the two estimates) and ``sysid_timing.csv``.
    """
    kv = _opts("sysid", kv)
    d = DEFAULTS["sysid"]
    iterations = _positive(kv, "iterations", kv.int_value("iterations", d["iterations"]))
    batch = _positive(kv, "batch_size", kv.int_value("batch_size", d["batch_size"]))
    n_traces = _positive(kv, "traces", kv.int_value("traces", d["traces"]))
    duration = _positive(kv, "trace_duration", kv.float_value("trace_duration", d["trace_duration"]))
    beta = _positive(kv, "beta", kv.float_value("beta", d["beta"]))

    rng = np.random.default_rng(seed)
    truth = from_unit(rng.uniform(size=7))
    reference = make_reference_traces(truth, n_traces, rng, T=duration)

    os.makedirs(out, exist_ok=True)
    pool, map_fn = _pool_map(workers)
    try:
        t0 = time.perf_counter()
        bo = identify(reference, iterations, np.random.default_rng(seed + 100), batch_size=batch, beta=beta,
                      map_fn=lambda f, U: map_fn(functools.partial(_unit_loss, reference=reference), U))
        t_bo = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.shutdown()
    t0 = time.perf_counter()
    rs = random_search(reference, iterations * batch, np.random.default_rng(seed + 200), batch_size=batch)
    t_rs = time.perf_counter() - t0

    _write_csv(os.path.join(out, "loss_curve.csv"), ["iteration", "evaluations", "bo_best", "random_best"],
               [[k + 1, (k + 1) * batch, _fmt(b, 12), _fmt(r, 12)]
                for k, (b, r) in enumerate(zip(bo.history, rs.history))])
    rows = []
    errors = {}
    for name, theta, value in (("truth", truth, loss(truth, reference)), ("bo", bo.theta_best, bo.loss_best),
                               ("random", rs.theta_best, rs.loss_best)):
        err = mean_position_error(theta, reference)
        errors[name] = err
        rows.append([name] + [_fmt(getattr(theta, p), 12) for p in PARAM_NAMES] + [_fmt(value, 12), _fmt(err, 12)])
    _write_csv(os.path.join(out, "best_theta.csv"), ["method", *PARAM_NAMES, "loss", "mean_position_error"], rows)
    _write_csv(os.path.join(out, "sysid_timing.csv"), ["method", "seconds"],
               [["bo", f"{t_bo:.3f}"], ["random", f"{t_rs:.3f}"]])
    return {"bo_loss": bo.loss_best, "random_loss": rs.loss_best, "bo_error": errors["bo"],
            "random_error": errors["random"], "seconds": t_bo + t_rs}


# -- filter evaluation -----------------------------------------------------------

def inlier_gate_rate(n, rng, cfg):
    """Fraction of measurements drawn from the predicted innovation distribution that pass the gate."""
    accepted = 0
    for _ in range(n):
        A = rng.normal(size=(6, 6)) * rng.uniform(1e-3, 3e-2)
        mean = np.r_[rng.uniform(-0.5, 0.5, 2), rng.normal(size=2), rng.uniform(-3, 3), 0.0]
        s = FilterState(mean, A @ A.T + np.eye(6) * 1e-6, initiating=0)
        z = rng.multivariate_normal(H @ s.mean, H @ s.cov @ H.T + cfg.R)
        accepted += update(s, z, cfg)[1]
    return accepted / n


def run_filter_eval(kv, out, seed, workers=1):
    """EKF on noisy simulated bounce traces plus a synthetic inlier gate check.

    Writes ``filter_traces.csv`` (per trace RMSEs, acceptance and covariance health)
    and ``filter_summary.csv``.
    """
    kv = _opts("filter-eval", kv)
    d = DEFAULTS["filter-eval"]
    n_traces = _positive(kv, "traces", kv.int_value("traces", d["traces"]))
    duration = _positive(kv, "trace_duration", kv.float_value("trace_duration", d["trace_duration"]))
    sigma_r = _positive(kv, "sigma_r", kv.float_value("sigma_r", d["sigma_r"]))
    sigma_phi = _positive(kv, "sigma_phi", kv.float_value("sigma_phi", d["sigma_phi"]))
    n_inliers = kv.int_value("inlier_updates", d["inlier_updates"])
    params_path = _resolve(kv, "params")
    params = load_params(params_path) if params_path else SimParams()
    cfg = FilterConfig(d=params.d_lin, c=params.mu_table * 9.81, sigma_r=sigma_r, sigma_phi=sigma_phi,
                       sim_params=params)

    trace_rng, gate_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    traces = synthetic_bounce_traces(n_traces, trace_rng, params, T=duration, sigma_r=sigma_r, sigma_phi=sigma_phi)
    rows = []
    sq_f, sq_fd = [], []
    accepted = total = 0
    all_spd = True
    for i, (meas, truth) in enumerate(traces):
        states = run_filter(meas, cfg)
        est = np.array([s.mean[2:4] for s in states])
        ef = np.sum((est[1:] - truth[1:, 2:4]) ** 2, axis=1)
        efd = np.sum((finite_difference_velocity(meas)[1:] - truth[1:, 2:4]) ** 2, axis=1)
        sq_f.append(ef)
        sq_fd.append(efd)
        acc = sum(s.accepted for s in states[1:])
        accepted += acc
        total += len(states) - 1
        min_eig = min(float(np.linalg.eigvalsh(s.cov)[0]) for s in states)
        spd = min_eig > 0 and max(np.max(np.abs(s.cov - s.cov.T)) for s in states) < 1e-12
        all_spd &= spd
        pos = np.array([s.mean[:2] for s in states]) - truth[:, :2]
        rows.append([i, len(states), _fmt(np.sqrt(np.mean(np.sum(pos ** 2, axis=1)))), _fmt(np.sqrt(ef.mean())),
                     _fmt(np.sqrt(efd.mean())), _fmt(acc / (len(states) - 1)), _fmt(min_eig), int(spd)])
    rmse_f = float(np.sqrt(np.mean(np.concatenate(sq_f))))
    rmse_fd = float(np.sqrt(np.mean(np.concatenate(sq_fd))))
    gate = inlier_gate_rate(n_inliers, gate_rng, cfg) if n_inliers > 0 else float("nan")

    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, "filter_traces.csv"),
               ["trace", "samples", "position_rmse", "velocity_rmse_filter", "velocity_rmse_fd", "acceptance_rate",
                "min_cov_eigenvalue", "cov_spd"], rows)
    summary = {"velocity_rmse_filter": rmse_f, "velocity_rmse_fd": rmse_fd, "trace_acceptance": accepted / total,
               "inlier_gate_rate": gate, "cov_spd": int(all_spd)}
    _write_csv(os.path.join(out, "filter_summary.csv"), ["metric", "value"],
               [[k, _fmt(v)] for k, v in summary.items()])
    return summary


# -- self-play -------------------------------------------------------------------

def run_selfplay(kv, out, seed, workers=1):
    """One seeded game between two agents.

    Writes ``game_log.csv`` (per tick), ``events.csv`` (tactic changes),
    ``goals.csv``, ``violations.csv`` and ``score.csv``.
    """
    kv = _opts("selfplay", kv)
    d = DEFAULTS["selfplay"]
    params_path = _resolve(kv, "params")
    cfg = GameConfig(
        duration=_positive(kv, "duration", kv.float_value("duration", d["duration"])),
        sigma_r=kv.float_value("sigma_r", d["sigma_r"]),
        sigma_phi=kv.float_value("sigma_phi", d["sigma_phi"]),
        params=load_params(params_path) if params_path else SimParams(),
        thresholds=Thresholds(v_smash_max=kv.float_value("v_smash_max", d["v_smash_max"]),
                              v_repel_min=kv.float_value("v_repel_min", d["v_repel_min"]),
                              horizon=kv.float_value("horizon", d["horizon"])),
    )
    res = run_game(seed, cfg)

    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, "game_log.csv"),
               ["t", "puck_x", "puck_y", "puck_vx", "puck_vy", "home_x", "home_y", "away_x", "away_y",
                "home_tactic", "away_tactic"],
               [[f"{row[0]:.2f}"] + [_fmt(v) for v in row[1:]] + list(st) for row, st in zip(res.log, res.states)])
    _write_csv(os.path.join(out, "events.csv"), ["t", "side", "event", "from", "to"],
               [[f"{t:.2f}", side, ev, a, b] for t, side, ev, a, b in res.transitions])
    _write_csv(os.path.join(out, "goals.csv"), ["t", "conceded_by", "puck_x", "puck_y"],
               [[f"{t:.2f}", side, _fmt(x), _fmt(y)] for t, side, x, y in res.goals])
    _write_csv(os.path.join(out, "violations.csv"), ["t", "who", "message"],
               [[f"{t:.2f}", who, msg] for t, who, msg in res.violations])
    _write_csv(os.path.join(out, "score.csv"),
               ["home", "away", "smash_home", "smash_away", "resets", "violations"],
               [[res.score["home"], res.score["away"], res.smash_count["home"], res.smash_count["away"],
                 res.resets, len(res.violations)]])
    return {"score": res.score, "smashes": res.smash_count, "violations": len(res.violations), "resets": res.resets}


RUNNERS = {"hit-bench": run_hit_bench, "sysid": run_sysid, "filter-eval": run_filter_eval, "selfplay": run_selfplay}
