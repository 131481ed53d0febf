import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dgss import gibbs
from dgss.distributions import beta_cdf, make_rng, truncnormal_pos_cdf
from dgss.errors import InvalidParam, NumericalFailure
from dgss.model import Dataset, HyperParams, check_invariants, fitted_from_scratch


def test_covariate_terms_single_observation():
    nu2, m, lr = gibbs.covariate_bayes_terms([2.0], [1.0], 1.0, 1.0, 1.0)
    assert nu2 == pytest.approx(0.5)
    assert m == pytest.approx(1.0)
    assert math.exp(lr) == pytest.approx(3.5419, abs=1e-4)
    assert gibbs.inclusion_probability(lr, 0.5) == pytest.approx(0.7798, abs=1e-4)


def test_covariate_terms_no_information():
    nu2, m, lr = gibbs.covariate_bayes_terms([], [], 1.0, 1.0, 2.5)
    assert (nu2, m) == (2.5, 0.0)
    assert lr == pytest.approx(0.0, abs=1e-15)
    nu2, m, lr = gibbs.covariate_bayes_terms([3.0, -1.0], [1.0, 2.0], 0.0, 1.0, 2.5)
    assert (nu2, m) == (2.5, 0.0)
    assert gibbs.inclusion_probability(lr, 0.3) == pytest.approx(0.3)


def test_node_terms_single_observation():
    lr, mu, sigma = gibbs.node_bayes_terms([2.0], [[1.0]], 1.0)
    assert lr == pytest.approx(0.5 * math.log(0.5) + 1.0)
    assert math.exp(lr) == pytest.approx(1.9221, abs=1e-4)
    assert mu == pytest.approx([1.0])
    assert np.allclose(sigma, [[0.5]])
    assert gibbs.inclusion_probability(lr, 0.5) == pytest.approx(0.6578, abs=1e-4)


def test_node_terms_degenerate_design():
    lr, mu, sigma = gibbs.node_bayes_terms([1.0, -2.0, 0.5], np.zeros((3, 2)), 0.7)
    assert lr == 0.0
    assert np.array_equal(mu, np.zeros(2))
    assert np.allclose(sigma, np.eye(2))


def test_node_terms_zero_response_shrinks():
    r = np.random.default_rng(1)
    lr, mu, _ = gibbs.node_bayes_terms(np.zeros(20), r.normal(size=(20, 3)), 1.3)
    assert lr <= 0.0
    assert np.allclose(mu, 0.0)
    assert gibbs.inclusion_probability(lr, 0.4) <= 0.4


@settings(max_examples=200, deadline=None)
@given(lr=st.floats(-600, 600), prior=st.floats(1e-9, 1 - 1e-9))
def test_log_inclusion_matches_direct(lr, prior):
    p = gibbs.inclusion_probability(lr, prior)
    assert 0.0 <= p <= 1.0
    if abs(lr) < 700:
        theta = math.exp(-lr) * (1 - prior) / prior
        assert abs(p - 1.0 / (1.0 + theta)) <= 1e-12


# ---------------------------------------------------------------------------
# single-block conditionals against brute-force residuals
# ---------------------------------------------------------------------------


def _warm_state(seed=3, p=4, q=2, n=80, sweeps=5):
    r = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), r.uniform(size=(n, q - 1))])
    data = Dataset.centered(r.normal(size=(n, p)), x)
    h = HyperParams.default(p, q, intercept=0)
    rng = make_rng(seed)
    state = gibbs.initial_state(data, h, rng)
    design = gibbs.make_design(data)
    for _ in range(sweeps):
        gibbs.sweep(state, design, h, rng)
    return data, design, h, state, rng


def _partial_residual(data, beta, i, skip):
    resid = data.y[:, i].copy()
    p, _, q = beta.shape
    for j in range(p):
        for k in range(q):
            if j != i and (j, k) not in skip:
                resid -= beta[i, j, k] * data.y[:, j] * data.x[:, k]
    return resid


def test_covariate_conditional_matches_brute_force():
    data, design, h, state, rng = _warm_state()
    i, j, k = 1, 2, 1
    state.delta_node[i, j] = 1
    state.b_latent[i, j, k] = 0.8
    state.delta_cov[k] = 1
    state.pi_cov[k] = 0.4
    state.s2[k] = 0.3
    state.beta[i, j, k] = state.tau[i, j, k] * 0.8
    state.fitted[:] = fitted_from_scratch(data, state.beta)
    resid = _partial_residual(data, state.beta, i, {(j, k)})
    col = data.y[:, j] * data.x[:, k]
    nu2, m, lr = gibbs.covariate_bayes_terms(resid, col, 0.8, state.sigma2[i], 0.3)
    prob = gibbs.inclusion_probability(lr, 0.4)

    n_rep = 20000
    hits = 0
    taus = []
    for _ in range(n_rep):
        gibbs.update_covariate_level(state, design, h, rng, i, j, k)
        if state.gamma[i, j, k]:
            hits += 1
            taus.append(state.tau_tilde[i, j, k])
    se = math.sqrt(prob * (1 - prob) / n_rep)
    assert abs(hits / n_rep - prob) < 4 * max(se, 1e-3)
    if len(taus) > 100:
        res = stats.kstest(taus, lambda v: truncnormal_pos_cdf(v, m, nu2))
        assert res.pvalue > 0.01
    check_invariants(state, data)


def test_node_conditional_matches_brute_force():
    data, design, h, state, rng = _warm_state(seed=5)
    i, j = 0, 3
    q = data.n_covs
    state.gamma[i, j] = 1
    state.tau_tilde[i, j] = [0.6, 0.9]
    state.delta_cov[:] = 1
    state.tau[i, j] = state.tau_tilde[i, j]
    state.beta[i, j] = state.delta_node[i, j] * state.tau[i, j] * state.b_latent[i, j]
    state.fitted[:] = fitted_from_scratch(data, state.beta)
    state.pi_node[i] = 0.3
    Z = _partial_residual(data, state.beta, i, {(j, k) for k in range(q)})
    XV = (data.y[:, [j]] * data.x) * state.tau[i, j]
    lr, mu, sigma = gibbs.node_bayes_terms(Z, XV, state.sigma2[i])
    prob = gibbs.inclusion_probability(lr, 0.3)

    n_rep = 20000
    draws = []
    for _ in range(n_rep):
        gibbs.update_node_level(state, design, h, rng, i, j)
        if state.delta_node[i, j]:
            draws.append(state.b_latent[i, j].copy())
        else:
            assert np.all(state.b_latent[i, j] == 0)
    se = math.sqrt(prob * (1 - prob) / n_rep)
    assert abs(len(draws) / n_rep - prob) < 4 * max(se, 1e-3)
    if len(draws) > 500:
        draws = np.array(draws)
        se_mu = np.sqrt(np.diag(sigma) / len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - mu) < 4 * se_mu)
        assert np.allclose(np.cov(draws.T), sigma, rtol=0.1, atol=1e-3)
    check_invariants(state, data)


def test_node_prior_recovery_when_tau_zero():
    data, design, h, state, rng = _warm_state(seed=8)
    i, j = 2, 0
    state.tau_tilde[i, j] = 0
    state.tau[i, j] = 0
    state.gamma[i, j] = 0
    state.beta[i, j] = 0
    state.fitted[:] = fitted_from_scratch(data, state.beta)
    state.pi_node[i] = 0.35
    n_rep = 20000
    hits = 0
    for _ in range(n_rep):
        gibbs.update_node_level(state, design, h, rng, i, j)
        hits += int(state.delta_node[i, j])
    assert abs(hits / n_rep - 0.35) < 4 * math.sqrt(0.35 * 0.65 / n_rep)


def test_pi_cov_empty_slice_drops_covariate():
    p = 25
    assert 1 - beta_cdf(0.05, 1, 1 + p * (p - 1)) < 1e-6
    data = Dataset(np.zeros((2, p)), np.ones((2, 1)))
    h = HyperParams.default(p, 1)
    state = gibbs.initial_state(data, h, make_rng(0), "zero")
    rng = make_rng(1)
    for _ in range(2000):
        gibbs.update_pi_cov(state, data, h, rng, 0)
        assert state.delta_cov[0] == 0


def test_pi_cov_zero_threshold_always_keeps():
    data = Dataset(np.zeros((2, 5)), np.ones((2, 1)))
    h = HyperParams.default(5, 1, d=0.0)
    state = gibbs.initial_state(data, h, make_rng(0), "zero")
    rng = make_rng(2)
    for _ in range(2000):
        gibbs.update_pi_cov(state, data, h, rng, 0)
        assert state.delta_cov[0] == 1


def test_delta_cov_flip_zeroes_slice_keeps_tau_tilde():
    data, design, h, state, rng = _warm_state(seed=9)
    k = 1
    state.delta_cov[k] = 1
    state.gamma[:, :, k] = 1 - np.eye(data.n_nodes, dtype=np.int8)
    state.tau_tilde[:, :, k] = 0.5 * state.gamma[:, :, k]
    state.tau[:, :, k] = state.tau_tilde[:, :, k]
    state.beta[:, :, k] = state.delta_node * state.tau[:, :, k] * state.b_latent[:, :, k]
    state.fitted[:] = fitted_from_scratch(data, state.beta)
    h1 = HyperParams.default(data.n_nodes, data.n_covs, d=1.0)
    gibbs.update_pi_cov(state, design, h1, rng, k)
    assert state.delta_cov[k] == 0
    assert np.all(state.beta[:, :, k] == 0)
    assert np.all(state.tau[:, :, k] == 0)
    assert np.all(state.tau_tilde[:, :, k] == 0.5 * state.gamma[:, :, k])
    check_invariants(state, data)


def test_sigma2_zero_residual_draws_prior_shape():
    data = Dataset(np.zeros((2, 2)), np.ones((2, 1)))
    h = HyperParams.default(2, 1)
    state = gibbs.initial_state(data, h, make_rng(0), "zero")
    rng = make_rng(3)
    draws = np.empty(20000)
    for r in range(draws.size):
        gibbs.update_sigma2(state, data, h, rng, 0)
        draws[r] = state.sigma2[0]
    assert stats.kstest(draws, stats.invgamma(2.0, scale=1.0).cdf).pvalue > 0.01


def test_sigma2_concentrates_at_truth():
    r = np.random.default_rng(4)
    n = 10**4
    x = np.column_stack([np.ones(n), r.uniform(size=n)])
    y = r.normal(size=(n, 2))
    y[:, 0] = 0.4 * y[:, 1] * x[:, 1] + math.sqrt(2.0) * r.normal(size=n)
    data = Dataset.centered(y, x)
    h = HyperParams.default(2, 2)
    state = gibbs.initial_state(data, h, make_rng(0), "zero")
    state.beta[0, 1, 1] = 0.4
    state.fitted[:] = fitted_from_scratch(data, state.beta)
    rng = make_rng(5)
    draws = []
    for _ in range(2000):
        gibbs.update_sigma2(state, data, h, rng, 0)
        draws.append(state.sigma2[0])
    assert abs(np.mean(draws) / 2.0 - 1) < 0.1


def test_s2_prior_recovery_with_empty_slab():
    data = Dataset(np.zeros((2, 3)), np.ones((2, 2)))
    h = HyperParams.default(3, 2)
    state = gibbs.initial_state(data, h, make_rng(0), "zero")
    rng = make_rng(6)
    draws = np.empty(20000)
    for r in range(draws.size):
        state.t_arr[0] = 1.7
        gibbs._k_s2(state.gamma, state.tau_tilde, state.s2, state.t_arr, rng)
        draws[r] = state.s2[0]
    assert stats.kstest(draws, stats.invgamma(1.0, scale=1.7).cdf).pvalue > 0.01


def test_proper_t_prior_changes_shape_and_rate():
    data = Dataset(np.zeros((2, 3)), np.ones((2, 2)))
    h = HyperParams.default(3, 2, a_t=2.0, b_t=0.5)
    state = gibbs.initial_state(data, h, make_rng(0), "zero")
    state.s2[:] = [1.0, 2.0]
    rng = make_rng(7)
    draws = np.empty(20000)
    for r in range(draws.size):
        gibbs.update_t(state, h, rng)
        draws[r] = state.t
    ref = stats.gamma(2 + 2.0, scale=1 / (0.5 + 1.5))
    assert stats.kstest(draws, ref.cdf).pvalue > 0.01


def test_bad_variance_raises():
    data, design, h, state, rng = _warm_state(seed=10)
    state.s2[0] = 0.0
    i, j = 0, 1
    state.b_latent[i, j, 0] = 1.0
    with pytest.raises(NumericalFailure):
        gibbs.update_covariate_level(state, design, h, rng, i, j, 0)


def test_diagonal_updates_rejected():
    data, design, h, state, rng = _warm_state(seed=11)
    with pytest.raises(InvalidParam):
        gibbs.update_covariate_level(state, design, h, rng, 1, 1, 0)
    with pytest.raises(InvalidParam):
        gibbs.update_node_level(state, design, h, rng, 2, 2)


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


def test_sweep_config_validation():
    with pytest.raises(InvalidParam):
        gibbs.SweepConfig(n_iter=10, burn_in=10)
    with pytest.raises(InvalidParam):
        gibbs.SweepConfig(n_iter=10, burn_in=2, thin=0)
    assert gibbs.SweepConfig(n_iter=10, burn_in=4, thin=3).n_samples == 2


def test_chain_is_deterministic(small_problem):
    data, _, h = small_problem
    cfg = gibbs.SweepConfig(n_iter=60, burn_in=20, recompute_period=10, check_period=10)
    a = gibbs.run_chain(data, h, cfg, seed=4)
    b = gibbs.run_chain(data, h, cfg, seed=4)
    c = gibbs.run_chain(data, h, cfg, seed=4, chain_id=1)
    assert a.identical_to(b)
    assert not a.identical_to(c)
    assert a.n_samples == 40
    assert a.traces["t"].shape == (60,)
    assert a.traces["pi_cov"].shape == (60, data.n_covs)
    assert a.traces["sigma2"].shape == (60, data.n_nodes)
    assert len(a.cache_drift) == 6
    assert a.cache_drift.max() <= 1e-6


def test_chain_outputs_are_consistent(small_problem):
    data, _, h = small_problem
    cfg = gibbs.SweepConfig(n_iter=50, burn_in=10, store_betas=True)
    out = gibbs.run_chain(data, h, cfg, seed=1)
    v = out.mppi.values
    assert v.min() >= 0 and v.max() <= 1
    assert np.all(v[np.arange(data.n_nodes), np.arange(data.n_nodes)] == 0)
    assert np.allclose(out.beta_samples.mean(axis=0), out.beta_mean)
    # composite MPPI can never exceed either of its factors' MPPIs
    assert np.all(v <= out.mppi_node[:, :, None] + 1e-12)
    assert np.all(v <= out.mppi_cov[None, None, :] + 1e-12)
    check_invariants(out.final_state, data)


def test_merge_and_parallel_chains(small_problem):
    data, _, h = small_problem
    cfg = gibbs.SweepConfig(n_iter=40, burn_in=20)
    serial = gibbs.run_chains(data, h, cfg, seed=2, n_chains=2, workers=1)
    parallel = gibbs.run_chains(data, h, cfg, seed=2, n_chains=2, workers=2)
    assert serial.identical_to(parallel)
    one = gibbs.run_chain(data, h, cfg, seed=2, chain_id=0)
    two = gibbs.run_chain(data, h, cfg, seed=2, chain_id=1)
    assert np.allclose(serial.mppi.values, (one.mppi.values + two.mppi.values) / 2)
    assert serial.n_samples == 40
    assert serial.traces["chain"].tolist() == [0] * 40 + [1] * 40


def test_null_data_mostly_excluded():
    fractions = []
    for s in range(10):
        r = make_rng(500, s)
        n = 2000
        x = np.column_stack([np.ones(n), r.uniform(size=n)])
        data = Dataset.centered(r.normal(size=(n, 5)), x)
        h = HyperParams.default(5, 2)
        out = gibbs.run_chain(data, h, gibbs.SweepConfig(n_iter=101, burn_in=100), seed=s)
        off = out.mppi.values[~np.eye(5, dtype=bool)]
        fractions.append(np.mean(off <= 0.5))
    assert np.mean(fractions) >= 0.95


def _planted_edge_data(seed, q=3):
    r = make_rng(600, seed)
    n, p = 500, 10
    x = np.column_stack([np.ones(n), r.uniform(size=(n, q - 1))])
    omega = np.eye(p)
    omega[0, 1] = omega[1, 0] = 0.5
    chol = np.linalg.cholesky(np.linalg.inv(omega))
    y = r.normal(size=(n, p)) @ chol.T
    return Dataset.centered(y, x)


@pytest.mark.parametrize("q", [3, 1])
def test_planted_strong_edge_recovered(q):
    for s in range(10):
        data = _planted_edge_data(s, q)
        h = HyperParams.default(10, q, intercept=0)
        out = gibbs.run_chain(data, h, gibbs.SweepConfig(n_iter=1500, burn_in=750), seed=s)
        assert out.mppi.values[0, 1, 0] >= 0.9
        assert out.mppi.values[1, 0, 0] >= 0.9


def _reverse_order_sweep(state, design, h, rng):
    # same blocks, every inner loop reversed
    p, q = design.n_nodes, design.n_covs
    for k in reversed(range(q)):
        for i in reversed(range(p)):
            for j in reversed(range(p)):
                if i != j:
                    gibbs.update_covariate_level(state, design, h, rng, i, j, k)
        gibbs.update_pi_cov(state, design, h, rng, k)
    for i in reversed(range(p)):
        for j in reversed(range(p)):
            if i != j:
                gibbs.update_node_level(state, design, h, rng, i, j)
        gibbs.update_pi_node(state, h, rng, i)
    for i in reversed(range(p)):
        gibbs.update_sigma2(state, design, h, rng, i)
    gibbs.update_s2_t(state, h, rng)


def test_sweep_order_does_not_change_mppi():
    r = make_rng(700)
    n, p, q = 300, 4, 2
    x = np.column_stack([np.ones(n), r.uniform(size=n)])
    omega = np.eye(p)
    omega[0, 1] = omega[1, 0] = 0.45
    omega[2, 3] = omega[3, 2] = -0.4
    y = r.normal(size=(n, p)) @ np.linalg.cholesky(np.linalg.inv(omega)).T
    data = Dataset.centered(y, x)
    design = gibbs.make_design(data)
    h = HyperParams.default(p, q, intercept=0)
    n_iter, burn = 1500, 500

    forward = gibbs.run_chain(data, h, gibbs.SweepConfig(n_iter=n_iter, burn_in=burn), seed=1)

    rng = make_rng(2)
    state = gibbs.initial_state(data, h, rng)
    acc = np.zeros((p, p, q))
    for it in range(n_iter):
        _reverse_order_sweep(state, design, h, rng)
        if it >= burn:
            acc += state.composite_indicator()
    reverse = acc / (n_iter - burn)
    assert np.max(np.abs(reverse - forward.mppi.values)) < 0.15
    for i, j in [(0, 1), (1, 0), (2, 3), (3, 2)]:
        assert forward.mppi.values[i, j, 0] > 0.9 and reverse[i, j, 0] > 0.9
