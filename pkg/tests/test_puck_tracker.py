import numpy as np
import pytest
from scipy.stats import chi2

from airhockey.errors import NonMonotonicTime
from airhockey.puck_dynamics import PuckState, SimParams, simulate_array
from airhockey.puck_tracker import (
    GATE_THRESHOLD, H, FilterConfig, FilterState, finite_difference_velocity, innovation,
    predict, read_measurements_csv, run_filter, synthetic_bounce_traces, transition_jacobian,
    update, velocity_rmse, write_states_csv,
)


def settled_state(mean, scale=1e-3):
    rng = np.random.default_rng(5)
    A = rng.normal(size=(6, 6)) * scale
    return FilterState(np.asarray(mean, dtype=float), A @ A.T + np.eye(6) * scale ** 2, initiating=0)


def is_spd(P):
    return np.max(np.abs(P - P.T)) < 1e-12 and np.min(np.linalg.eigvalsh(P)) > 0


def test_gate_threshold_is_chi_square_quantile():
    assert GATE_THRESHOLD == pytest.approx(chi2.ppf(0.9, 3))
    assert GATE_THRESHOLD == pytest.approx(6.2514, abs=1e-4)


def test_stationary_mean_is_unchanged_by_predict():
    cfg = FilterConfig()
    s = settled_state([0.1, -0.2, 0.0, 0.0, 0.5, 0.0])
    out = predict(s, 0.01, cfg)
    np.testing.assert_array_equal(out.mean, s.mean)


def test_covariance_follows_lyapunov_recursion():
    cfg = FilterConfig()
    dt, n = 0.01, 50
    s = settled_state([0.0, 0.0, 0.3, -0.2, 0.0, 1.0])
    P0 = s.cov.copy()
    for _ in range(n):
        s = predict(s, dt, cfg)
    # closed form: F^n P0 F^nT + sum_i F^i Q F^iT, F assembled by hand
    F = np.eye(6)
    F[0, 2] = F[1, 3] = F[4, 5] = dt
    F[2, 2] = F[3, 3] = 1 - cfg.d * dt
    Q = np.diag([cfg.eps_r, cfg.eps_r, cfg.eps_v, cfg.eps_v, cfg.eps_phi, cfg.eps_phidot]) ** 2
    Fn = np.linalg.matrix_power(F, n)
    ref = Fn @ P0 @ Fn.T + sum(np.linalg.matrix_power(F, i) @ Q @ np.linalg.matrix_power(F, i).T
                               for i in range(n))
    np.testing.assert_allclose(s.cov, ref, atol=1e-10, rtol=0)
    np.testing.assert_array_equal(transition_jacobian(cfg, dt), F)


def test_rim_collision_does_not_touch_covariance():
    cfg = FilterConfig()
    y_lim = cfg.table.width / 2 - cfg.table.puck_radius
    s = settled_state([0.3, y_lim - 0.005, 0.2, 2.0, 0.0, 0.0])
    out = predict(s, 0.01, cfg)
    assert out.collided and out.mean[3] < 0
    F = transition_jacobian(cfg, 0.01)
    np.testing.assert_allclose(out.cov, F @ s.cov @ F.T + cfg.Q, atol=1e-15)
    free = predict(settled_state([0.3, 0.0, 0.2, 2.0, 0.0, 0.0]), 0.01, cfg)
    assert not free.collided
    np.testing.assert_allclose(out.cov, free.cov, atol=1e-15)


def test_measurement_at_prediction_has_zero_statistic():
    cfg = FilterConfig()
    s = settled_state([0.1, 0.2, 1.0, 0.0, 0.3, 2.0])
    out, accepted = update(s, H @ s.mean, cfg)
    assert accepted and out.gate_statistic == 0.0
    np.testing.assert_array_equal(out.mean, s.mean)


def test_far_outlier_resets_track():
    cfg = FilterConfig()
    s = settled_state([0.1, 0.2, 1.0, -0.5, 0.3, 2.0])
    S = H @ s.cov @ H.T + cfg.R
    z = H @ s.mean + 10 * np.sqrt(np.diag(S)) * np.array([1.0, 0.0, 0.0])
    out, accepted = update(s, z, cfg)
    assert not accepted and not out.accepted
    np.testing.assert_array_equal(out.cov, np.eye(6))
    np.testing.assert_array_equal(out.mean, [z[0], z[1], 0.0, 0.0, z[2], 0.0])
    assert out.gate_statistic > GATE_THRESHOLD


def test_gate_acceptance_on_synthetic_inliers():
    cfg = FilterConfig()
    rng = np.random.default_rng(90)
    accepted = 0
    for _ in range(10_000):
        s = settled_state(np.r_[rng.uniform(-0.5, 0.5, 2), rng.normal(size=2), rng.uniform(-3, 3), 0.0],
                          scale=rng.uniform(1e-3, 3e-2))
        S = H @ s.cov @ H.T + cfg.R
        z = rng.multivariate_normal(H @ s.mean, S)
        _, ok = update(s, z, cfg)
        accepted += ok
    assert 0.88 <= accepted / 10_000 <= 0.92


def test_innovation_wraps_angle():
    s = settled_state([0.0, 0.0, 0.0, 0.0, 3.1, 0.0])
    nu = innovation(s, [0.0, 0.0, -3.1])
    assert nu[2] == pytest.approx(2 * np.pi - 6.2)


def test_initiation_then_ballistic_convergence():
    # noiseless measurements of a free-flying puck: velocity within 2 % after 20 updates
    p = SimParams()
    cfg = FilterConfig(d=p.d_lin, c=p.mu_table * 9.81, sim_params=p)
    truth, _ = simulate_array(PuckState.make(-0.6, -0.2, 1.2, 0.4, 0.3, 0.0), p, dt=0.01, T=0.2)
    meas = np.column_stack([np.arange(len(truth)) * 0.01, truth[:, 0], truth[:, 1], truth[:, 4]])
    states = run_filter(meas[:21], cfg)
    v_est, v_true = states[20].mean[2:4], truth[20, 2:4]
    assert np.linalg.norm(v_est - v_true) <= 0.02 * np.linalg.norm(v_true)
    assert all(s.accepted for s in states)


def test_noise_free_filter_reproduces_transition():
    cfg = FilterConfig(eps_r=0.0, eps_v=0.0, eps_phi=0.0, eps_phidot=0.0, sigma_r=1e-9, sigma_phi=1e-9)
    s = settled_state([-0.4, 0.1, 0.8, 0.3, 0.0, 1.5])
    expected = []
    probe = s
    for _ in range(30):
        probe = predict(probe, 0.01, cfg)
        expected.append(probe.mean.copy())
    for k in range(30):
        s, ok = update(predict(s, 0.01, cfg), H @ expected[k], cfg)
        assert ok
        np.testing.assert_allclose(s.mean, expected[k], atol=1e-12)


def test_filter_beats_finite_differences_on_bounce_traces():
    traces = synthetic_bounce_traces(20, np.random.default_rng(1))
    fd = np.sqrt(np.mean(np.concatenate(
        [np.sum((finite_difference_velocity(m)[1:] - t[1:, 2:4]) ** 2, axis=1) for m, t in traces])))
    assert velocity_rmse(traces, FilterConfig()) < fd


def test_covariance_stays_spd():
    for meas, _ in synthetic_bounce_traces(5, np.random.default_rng(2)):
        for s in run_filter(meas):
            assert is_spd(s.cov)
            assert -np.pi < s.mean[4] <= np.pi


def test_empty_and_non_monotonic_input():
    assert run_filter([]) == []
    with pytest.raises(NonMonotonicTime):
        run_filter([[0.0, 0, 0, 0], [0.01, 0, 0, 0], [0.01, 0, 0, 0]])


def test_predict_rejects_non_positive_dt():
    with pytest.raises(ValueError):
        predict(settled_state(np.zeros(6)), 0.0, FilterConfig())


def test_state_csv(tmp_path):
    meas, _ = synthetic_bounce_traces(1, np.random.default_rng(3), T=0.5)[0]
    np.savetxt(tmp_path / "m.csv", meas, delimiter=",", header="t,x,y,phi", comments="")
    back = read_measurements_csv(tmp_path / "m.csv")
    np.testing.assert_allclose(back, meas)
    states = run_filter(back)
    write_states_csv(tmp_path / "s.csv", states)
    rows = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert rows.shape == (len(meas), 8)
    np.testing.assert_allclose(rows[:, 1:7], [s.mean for s in states], rtol=1e-8, atol=1e-12)
