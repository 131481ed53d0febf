import math

import numpy as np
import pytest

from dgss import gibbs, oracle
from dgss.distributions import make_rng
from dgss.model import HyperParams


def test_cov_ratio_no_data_is_one():
    assert oracle.oracle_cov_bayes_ratio([], [], 1.0, 1.0, 2.0) == pytest.approx(1.0, abs=1e-12)


def test_cov_ratio_zero_coefficient_is_one():
    r = oracle.oracle_cov_bayes_ratio([1.0, -3.0, 2.0], [0.5, 1.0, 2.0], 0.0, 0.7, 1.3)
    assert r == pytest.approx(1.0, abs=1e-12)


def test_cov_ratio_single_observation():
    ref = oracle.oracle_cov_bayes_ratio([2.0], [1.0], 1.0, 1.0, 1.0)
    _, _, lr = gibbs.covariate_bayes_terms([2.0], [1.0], 1.0, 1.0, 1.0)
    assert ref == pytest.approx(3.5419, abs=1e-4)
    assert abs(ref / math.exp(lr) - 1) < 1e-6


def test_cov_ratio_extreme_configurations():
    worst, max_z = oracle.check_cov_ratio(seed=3, n_configs=30)
    assert worst < 1e-6
    assert max_z > 1


def test_node_ratio_zero_design_is_one():
    r = oracle.oracle_node_bayes_ratio([1.0, 2.0, -1.0], np.zeros((3, 2)), 1.0)
    assert r == pytest.approx(1.0, abs=1e-10)


def test_node_ratio_single_observation():
    ref = oracle.oracle_node_bayes_ratio([2.0], [[1.0]], 1.0)
    assert ref == pytest.approx(math.e / math.sqrt(2), rel=1e-6)


def test_node_ratio_two_dimensional():
    assert oracle.check_node_ratio_quadrature(seed=5, n_configs=6) < 1e-6


def test_node_ratio_monte_carlo_reports_se():
    c = oracle.random_node_config(make_rng(9), 3)
    est = oracle.oracle_node_bayes_ratio(c["Z"], c["XV"], c["sigma2"], n_draws=10**5,
                                         rng=make_rng(10))
    closed, _, _ = gibbs.node_bayes_terms(c["Z"], c["XV"], c["sigma2"])
    assert est.rel_se > 0
    assert abs(math.expm1(closed - est.log_value)) < 4 * est.rel_se


def test_prior_sparsity_examples():
    h = HyperParams(a_cov=[2.0], b_cov=[3.0], d_cov=[1.0], a_node=[1, 1], b_node=[1, 1])
    assert oracle.oracle_prior_sparsity(h, 0, 0, 10**4, make_rng(1))[0] == 0.0
    h = HyperParams.default(2, 1, d=0.0)
    mean, se = oracle.oracle_prior_sparsity(h, 0, 0, 10**6, make_rng(2))
    assert abs(mean - 0.25) < 3 * se
    h = HyperParams.default(2, 1, d=0.05)
    mean, se = oracle.oracle_prior_sparsity(h, 0, 0, 10**6, make_rng(3))
    assert abs(mean - 0.249375) < 3 * se


def test_prior_sparsity_needs_enough_draws():
    with pytest.raises(ValueError):
        oracle.oracle_prior_sparsity(HyperParams.default(2, 1), 0, 0, 100)


@pytest.mark.parametrize("kind, inputs, mean", [
    ("pi_cov", dict(p=3, a=1.0, b=1.0, n_gamma=2), 3 / 8),
    ("pi_node", dict(p=3, a=2.0, b=3.0, n_delta=1), 3 / 7),
    ("pi_node", dict(p=4, a=1.0, b=1.0, n_delta=3), 4 / 5),
    ("sigma2", dict(resid=[1.0, -1.0], a_sigma=2.0, b_sigma=1.0), 1.0),
    ("s2", dict(n_gamma=4, sum_tau2=2.0, t=1.0), 1.0),
    ("t", dict(s2=[1.0, 2.0]), 2.0),
])
def test_conjugate_examples(kind, inputs, mean):
    m = oracle.oracle_conjugate_moments(kind, inputs, 10**5, make_rng(4))
    assert m.analytic_mean == pytest.approx(mean)
    assert abs(m.z) < 3

