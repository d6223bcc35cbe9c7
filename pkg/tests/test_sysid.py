import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import skew

from airhockey.errors import IllConditioned
from airhockey.puck_dynamics import SimParams
from airhockey.sysid import acquisition as acq
from airhockey.sysid.gp import (NOISE_FLOOR, GpModel, _cholesky, fit_gp, matern52, negative_log_likelihood,
                                posterior, posterior_marginals)
from airhockey.sysid.identify import (ANGLE_WEIGHT, BoState, ReferenceTrace, fit_state_model, from_unit,
                                      gp_subset,
                                      identify, loss, make_reference_traces, pareto_front, propose_batch,
                                      random_search, read_reference_dir, to_unit, write_reference_dir)
from airhockey.sysid.nsga2 import crowding_distance, dominates, non_dominated_sort, nsga2
from airhockey.sysid.warping import InputWarp, OutputWarp, skewness


@pytest.fixture(scope="module")
def reference():
    theta = SimParams(0.7, 0.9, 0.2, 0.05, 0.3, 0.004, 0.006)
    return theta, make_reference_traces(theta, 3, np.random.default_rng(5), T=1.0)


# -- loss ------------------------------------------------------------------------

def test_loss_self_consistency(reference):
    theta, traces = reference
    assert loss(theta, traces) < 1e-20
    assert loss(SimParams(), traces) > 1e-6


def test_loss_constant_half_turn_offset(reference):
    theta, traces = reference
    flipped = [ReferenceTrace(tr.initial, tr.r, np.array([math.remainder(a + math.pi, 2 * math.pi)
                                                          for a in tr.phi]), tr.dt) for tr in traces]
    assert loss(theta, flipped) == pytest.approx(ANGLE_WEIGHT * math.pi ** 2, rel=1e-12)


def test_loss_order_invariant_and_nonempty(reference):
    _, traces = reference
    p = SimParams()
    assert loss(p, traces) == pytest.approx(loss(p, traces[::-1]), rel=1e-14)
    with pytest.raises(ValueError):
        loss(p, [])


def test_reference_traces_have_bounces_and_no_goal(reference):
    _, traces = reference
    for tr in traces:
        assert tr.T == 100
        assert np.all(np.abs(tr.r[:, 0]) < 1.08)


def test_reference_dir_round_trip(tmp_path, reference):
    theta, traces = reference
    write_reference_dir(tmp_path, traces)
    back = read_reference_dir(tmp_path)
    assert len(back) == len(traces)
    assert loss(theta, back) < 1e-20
    assert back[0].dt == pytest.approx(0.01)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=7, max_size=7))
def test_unit_mapping_round_trip(u):
    u = np.array(u)
    np.testing.assert_allclose(to_unit(from_unit(u)), u, atol=1e-12)


# -- GP fitting --------------------------------------------------------------------

def gp_sample(rng, n, ls, noise=1e-4):
    X = rng.uniform(size=(n, len(ls)))
    K = matern52(X, X, np.asarray(ls), 1.0) + noise * np.eye(n)
    return X, np.linalg.cholesky(K) @ rng.standard_normal(n)


def test_lengthscale_recovery_over_seeds():
    true = np.array([0.2, 0.5])
    logs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X, y = gp_sample(rng, 80, true)
        model = fit_gp(X, y, n_restarts=2, rng=rng)
        logs.append(np.log(model.lengthscales / true))
    ratio = np.exp(np.mean(logs, axis=0))
    assert np.all(ratio > 0.5) and np.all(ratio < 2.0), ratio


def test_duplicate_inputs_need_noise():
    X = np.array([[0.3, 0.3], [0.3, 0.3], [0.7, 0.1]])
    y = np.array([0.0, 1.0, 0.5])
    model = fit_gp(X, y, n_restarts=2, rng=np.random.default_rng(0))
    assert model.noise > 1e-3 * np.var(y)


def test_two_points_interpolated_within_three_sigma():
    X = np.array([[0.2, 0.4], [0.8, 0.6]])
    y = np.array([1.0, -0.5])
    model = fit_gp(X, y, n_restarts=2, rng=np.random.default_rng(1))
    mu, var = posterior_marginals(model, X)
    sd = np.sqrt(var + model.noise)
    assert np.all(np.abs(mu - y) <= 3 * sd)


def test_fit_needs_two_points():
    with pytest.raises(ValueError):
        fit_gp(np.zeros((1, 2)), np.zeros(1))


def test_fit_nll_not_above_any_start():
    rng = np.random.default_rng(3)
    X, y = gp_sample(rng, 30, [0.3, 0.3, 0.3])
    starts = [np.r_[np.log([0.3, 0.3, 0.3]), 0.0, np.log(1e-4)], np.r_[np.zeros(3), 0.5, -3.0]]
    model = fit_gp(X, y, n_restarts=1, rng=rng, starts=starts)
    for p in starts:
        assert model.nll <= negative_log_likelihood(p, X, y, np.mean(y), grad=False) + 1e-9


@pytest.mark.parametrize("warp", [False, True])
def test_nll_gradient_matches_finite_differences(warp):
    rng = np.random.default_rng(7)
    X, y = gp_sample(rng, 15, [0.4, 0.6])
    dim = 2
    p = np.r_[np.log([0.4, 0.6]), 0.1, np.log(1e-2)]
    if warp:
        p = np.r_[p, rng.uniform(-0.5, 0.5, 2 * dim)]
    _, g = negative_log_likelihood(p, X, y, 0.1, warp)
    h = 1e-6
    fd = np.array([(negative_log_likelihood(p + h * e, X, y, 0.1, warp, grad=False)
                    - negative_log_likelihood(p - h * e, X, y, 0.1, warp, grad=False)) / (2 * h)
                   for e in np.eye(len(p))])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_cholesky_gives_up_on_indefinite_matrix():
    with pytest.raises(IllConditioned):
        _cholesky(-np.eye(3))


def test_model_invariants():
    X = np.random.default_rng(0).uniform(size=(5, 2))
    with pytest.raises(ValueError):
        GpModel(X, np.zeros(5), np.array([0.0, 1.0]), 1.0, 1e-3)
    with pytest.raises(ValueError):
        GpModel(X, np.zeros(5), np.array([0.3, 0.3]), 1.0, -1e-6)
    m = GpModel(X, np.zeros(5), np.array([0.3, 0.3]), 1.0, 0.0)
    assert m.noise == 0.0


# -- posterior ------------------------------------------------------------------------

def toy_model(n=6, dim=2, seed=0, ls=0.3, noise=NOISE_FLOOR, warp=None):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, dim))
    y = np.sin(3 * X).sum(1)
    return GpModel(X, y, np.full(dim, ls), 1.3, noise, mean=float(y.mean()), warp=warp)


def test_noiseless_interpolation():
    m = toy_model()
    mu, cov = posterior(m, m.X)
    np.testing.assert_allclose(mu, m.y, atol=1e-8)
    assert np.all(np.diag(cov) < 1e-6)


def test_prior_reversion_far_from_data():
    X = np.array([[0.0, 0.0], [0.05, 0.02]])
    m = GpModel(X, np.array([1.0, 2.0]), np.array([0.05, 0.05]), 2.0, 1e-6, mean=1.5)
    mu, var = posterior_marginals(m, np.array([[0.9, 0.9]]))
    assert var[0] == pytest.approx(2.0, rel=0.01)
    assert mu[0] == pytest.approx(1.5, abs=0.01)


def dense_oracle(X, y, Q, ls, sf, noise, mean, warp=None):
    """Textbook formulas with an explicit inverse and a loop-built kernel."""
    if warp is not None:
        X = 1 - (1 - X ** warp.a) ** warp.b
        Q = 1 - (1 - Q ** warp.a) ** warp.b

    def k(a, b):
        r = math.sqrt(sum(((a[i] - b[i]) / ls[i]) ** 2 for i in range(len(a))))
        return sf * (1 + math.sqrt(5) * r + 5 * r * r / 3) * math.exp(-math.sqrt(5) * r)
    K = np.array([[k(a, b) for b in X] for a in X]) + noise * np.eye(len(X))
    Ks = np.array([[k(q, b) for b in X] for q in Q])
    Kss = np.array([[k(q, p) for p in Q] for q in Q])
    Kinv = np.linalg.inv(K)
    return mean + Ks @ Kinv @ (y - mean), Kss - Ks @ Kinv @ Ks.T


@pytest.mark.parametrize("warped", [False, True])
def test_three_point_posterior_matches_dense_oracle(warped):
    rng = np.random.default_rng(11)
    X = rng.uniform(size=(3, 2))
    y = rng.normal(size=3)
    Q = rng.uniform(size=(4, 2))
    warp = InputWarp(np.array([0.7, 1.8]), np.array([1.5, 0.6])) if warped else None
    m = GpModel(X, y, np.array([0.4, 0.7]), 0.9, 1e-3, mean=0.2, warp=warp)
    mu, cov = posterior(m, Q)
    mu_ref, cov_ref = dense_oracle(X, y, Q, [0.4, 0.7], 0.9, 1e-3, 0.2, warp)
    np.testing.assert_allclose(mu, mu_ref, atol=1e-10)
    np.testing.assert_allclose(cov, cov_ref, atol=1e-10)
    mu2, var2 = posterior_marginals(m, Q)
    np.testing.assert_allclose(mu2, mu_ref, atol=1e-10)
    np.testing.assert_allclose(var2, np.diag(cov_ref), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 10))
def test_posterior_covariance_psd_and_variance_monotone(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n + 1, 3))
    y = rng.normal(size=n + 1)
    Q = rng.uniform(size=(6, 3))
    ls = rng.uniform(0.1, 1.0, 3)
    small = GpModel(X[:n], y[:n], ls, 1.0, 1e-6)
    big = GpModel(X, y, ls, 1.0, 1e-6)
    _, cov = posterior(small, Q)
    assert np.min(np.linalg.eigvalsh(cov)) >= -1e-10
    _, v_small = posterior_marginals(small, Q)
    _, v_big = posterior_marginals(big, Q)
    assert np.all(v_small >= 0) and np.all(v_big >= 0)
    assert np.all(v_big <= v_small + 1e-10)


# -- acquisitions ------------------------------------------------------------------------

def test_ei_vanishes_at_best_training_point():
    m = toy_model(n=8)
    best = int(np.argmin(m.y))
    ei, pi, _ = acq.acquisitions(m, m.X[best:best + 1], float(m.y[best]))
    assert ei < 1e-3 * m.signal_var


def test_mc_ei_within_three_standard_errors_of_closed_form():
    m = toy_model(n=8, ls=0.25)
    rng = np.random.default_rng(2)
    for seed in range(20):
        q = rng.uniform(size=(1, 2))
        mu, var = posterior_marginals(m, q)
        # incumbent within one posterior sd so improvement has real probability mass
        f_best = float(mu[0] + rng.uniform(-1, 1) * math.sqrt(var[0]))
        ei, _, _ = acq.acquisitions(m, q, f_best, seed=seed)
        f = mu[0] + math.sqrt(var[0]) * acq._normals(1, acq.N_SAMPLES, seed)[:, 0]
        se = np.std(np.maximum(f_best - f, 0.0), ddof=1) / math.sqrt(acq.N_SAMPLES)
        exact = acq.expected_improvement_closed_form(mu[0], math.sqrt(var[0]), f_best)
        assert abs(ei - exact) <= 3 * se + 1e-12


def test_single_point_ucb_is_mean_minus_scaled_sd():
    m = toy_model(n=8, ls=0.25)
    q = np.array([[0.9, 0.1]])
    _, _, ucb = acq.acquisitions(m, q, 0.0, beta=2.0, n_samples=20_000)
    mu, var = posterior_marginals(m, q)
    assert ucb == pytest.approx(mu[0] - math.sqrt(2.0 * var[0]), abs=0.02 * math.sqrt(var[0]))


def test_batch_enlargement_never_lowers_ei_or_pi():
    m = toy_model(n=8, ls=0.25)
    C = np.random.default_rng(4).uniform(size=(6, 2))
    f_best = float(np.min(m.y))
    prev = acq.acquisitions(m, C[:1], f_best, seed=9)
    for j in range(2, 7):
        cur = acq.acquisitions(m, C[:j], f_best, seed=9)
        assert cur[0] >= prev[0] - 1e-12 and cur[1] >= prev[1]
        assert cur[2] <= prev[2] + 1e-12
        prev = cur


def test_acquisitions_deterministic_and_pointwise_consistent():
    m = toy_model(n=8, ls=0.25)
    C = np.random.default_rng(6).uniform(size=(5, 2))
    a = acq.acquisitions(m, C, 0.0, seed=3)
    assert a == acq.acquisitions(m, C, 0.0, seed=3)
    pw = acq.pointwise_acquisitions(m, C, 0.0, seed=3)
    for i in range(5):
        np.testing.assert_allclose(pw[i], acq.acquisitions(m, C[i:i + 1], 0.0, seed=3), rtol=1e-9, atol=1e-12)


def test_repeated_candidates_fall_back_gracefully():
    m = toy_model(n=8)
    C = np.repeat(np.array([[0.5, 0.5]]), 3, 0)
    ei, pi, ucb = acq.acquisitions(m, C, 0.0)
    assert np.isfinite([ei, pi, ucb]).all()


# -- warping -----------------------------------------------------------------------------

def test_input_warp_identity():
    u = np.random.default_rng(0).uniform(0.01, 0.99, (100, 3))
    w = InputWarp.identity(3)
    assert w.is_identity()
    np.testing.assert_allclose(w.warp(u), u, atol=1e-15)


def test_input_warp_round_trip():
    rng = np.random.default_rng(1)
    w = InputWarp(rng.uniform(0.5, 2.0, 7), rng.uniform(0.5, 2.0, 7))
    u = rng.uniform(0.01, 0.99, (1000, 7))
    np.testing.assert_allclose(w.unwarp(w.warp(u)), u, atol=1e-10)


@pytest.mark.parametrize("shift", [0.0, -3.0])
def test_output_warp_round_trip_and_skew(shift):
    rng = np.random.default_rng(2)
    y = rng.lognormal(0.0, 1.5, 1000) + shift
    ow = OutputWarp.fit(y)
    assert ow.kind == ("box-cox" if shift == 0.0 else "yeo-johnson")
    np.testing.assert_allclose(ow.unwarp(ow.warp(y)), y, rtol=1e-10, atol=1e-10)
    assert abs(skewness(ow.warp(y))) < 0.5 * abs(skewness(y))
    assert skewness(y) == pytest.approx(skew(y), rel=1e-9)
    z = ow.warp(y)
    assert abs(z.mean()) < 1e-9 and z.std() == pytest.approx(1.0)


def test_output_warp_constant_data():
    ow = OutputWarp.fit(np.full(5, 2.0))
    assert ow.lam == 1.0
    assert np.all(np.isfinite(ow.warp(np.full(5, 2.0))))


# -- NSGA-II -------------------------------------------------------------------------------

def brute_force_ranks(F):
    rank = np.full(len(F), -1)
    remaining = set(range(len(F)))
    level = 0
    while remaining:
        front = [i for i in remaining if not any(dominates(F[j], F[i]) for j in remaining)]
        for i in front:
            rank[i] = level
        remaining -= set(front)
        level += 1
    return rank


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_non_dominated_sort_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    F = rng.integers(0, 5, size=(30, 3)).astype(float)
    np.testing.assert_array_equal(non_dominated_sort(F), brute_force_ranks(F))


def test_crowding_marks_extremes_infinite():
    F = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0], [0.25, 0.75]])
    cd = crowding_distance(F)
    assert np.isinf(cd[0]) and np.isinf(cd[2]) and np.all(np.isfinite(cd[[1, 3]]))


def test_nsga2_front_on_trade_off():
    front, values = nsga2(lambda X: np.column_stack([X[:, 0], 1 - X[:, 0] ** 2 - X[:, 1]]), 2,
                          np.random.default_rng(0), pop_size=40, generations=30)
    assert len(front) >= 20
    np.testing.assert_allclose(front[:, 1], 0.0, atol=0.05)
    assert front[:, 0].min() < 0.1 and front[:, 0].max() > 0.9
    ranks = non_dominated_sort(values)
    assert np.all(ranks == 0)


# -- proposals and the loop -----------------------------------------------------------------

@pytest.fixture(scope="module")
def fitted_state():
    rng = np.random.default_rng(0)
    U = rng.uniform(size=(25, 7))
    y = np.sum((U - 0.3) ** 2, axis=1) + 0.01
    state = BoState()
    state.add(U, y)
    fit_state_model(state, rng)
    return state


def test_proposal_members_are_front_points_in_bounds(fitted_state):
    prop = propose_batch(fitted_state, np.random.default_rng(1))
    assert prop.U.shape == (5, 7)
    assert np.all((prop.U >= 0) & (prop.U <= 1))
    lo, hi = SimParams.bounds().T
    for p in prop.params:
        a = p.as_array()
        assert np.all(a >= lo) and np.all(a <= hi)
    members = prop.U[~prop.padded]
    for u in members:
        assert np.any(np.all(np.isclose(prop.front, u, atol=0), axis=1))
    assert np.all(non_dominated_sort(prop.front_values) == 0)


def test_small_front_is_padded(fitted_state):
    fitted_state.batch_size = 120
    try:
        prop = propose_batch(fitted_state, np.random.default_rng(2))
    finally:
        fitted_state.batch_size = 5
    assert len(prop.U) == 120
    assert prop.padded.sum() == 120 - len(prop.front)
    assert np.all(prop.padded[len(prop.front):])


def test_bimodal_front_spans_exploit_and_explore():
    X = np.linspace(0.02, 0.45, 10)[:, None]
    y = 10 * (X[:, 0] - 0.22) ** 2
    m = GpModel(X, y, np.array([0.15]), 1.0, 1e-6, mean=float(y.mean()))
    front, _ = pareto_front(m, float(y.min()), np.random.default_rng(0), dim=1)
    assert np.any(np.abs(front[:, 0] - 0.22) < 0.05)
    assert np.any(front[:, 0] > 0.7)


@given(st.integers(0, 400), st.integers(2, 60))
@settings(max_examples=50, deadline=None)
def test_gp_subset_keeps_best_and_worst(n, cap):
    y = np.random.default_rng(n).permutation(n).astype(float)
    keep = gp_subset(y, cap)
    assert len(keep) == min(n, cap) and len(set(keep.tolist())) == len(keep)
    if n > cap:
        assert set(np.argsort(y)[:cap // 2]) <= set(keep.tolist())
        assert int(np.argmax(y)) in keep


def test_state_invariants():
    with pytest.raises(ValueError):
        BoState(batch_size=0)
    s = BoState()
    s.add(np.full((2, 7), 0.5), np.array([2.0, 1.0]))
    _, best = s.best
    assert best == 1.0


def test_identify_budget_one_is_one_batch(reference):
    _, traces = reference
    res = identify(traces[:1], 1, np.random.default_rng(0))
    assert len(res.y) == 5 and len(res.history) == 1
    with pytest.raises(ValueError):
        identify(traces[:1], 0, np.random.default_rng(0))


def test_identify_history_monotone(reference):
    _, traces = reference
    res = identify(traces[:1], 4, np.random.default_rng(1))
    assert len(res.y) == 20
    assert np.all(np.diff(res.history) <= 0)
    assert res.loss_best == pytest.approx(res.history[-1])
    assert res.loss_best == pytest.approx(loss(res.theta_best, traces[:1]), rel=1e-12)


def test_random_search_baseline(reference):
    _, traces = reference
    res = random_search(traces[:1], 20, np.random.default_rng(0))
    assert len(res.y) == 20 and len(res.history) == 4
    assert np.all(np.diff(res.history) <= 0)
    assert res.loss_best == res.y.min()
