import numpy as np
import pytest

from tailrisk.estimator import FitResult, complete_estimation
from tailrisk.inference import CovarianceReport, InferenceError, \
     cov_joint, cov_pure_var, estimate_covariance, moment_loading_tests, \
     pure_var_order_statistic, sandwich_joint, wald_test
from tailrisk.models import ModelSpec, ParamVector


def identity_report(names):
    n = len(names)
    return CovarianceReport(np.eye(n), None, None, None, names=list(names))


def test_pure_var_order_statistic():
    assert pure_var_order_statistic(0.01) == 40
    assert pure_var_order_statistic(0.025) == 50
    assert pure_var_order_statistic(0.05) == 60
    assert pure_var_order_statistic(0.001) == 40
    assert pure_var_order_statistic(0.1) == 60


def test_cov_pure_var_constant_quantile(rng):
    t = 2000
    returns = rng.standard_normal(t)
    q = np.quantile(returns, 0.05)
    v = np.full(t, q)
    grad_v = np.ones((t, 1))
    cov = cov_pure_var(v, grad_v, returns, 0.05, bandwidth=0.5)
    d = np.sum(np.abs(returns - q) < 0.5) / (2.0 * t * 0.5)
    expected = 0.05 * 0.95 / (d * d * t)
    assert cov.sigma[0, 0] == pytest.approx(expected, rel=1e-10)
    assert cov.se[0] == pytest.approx(np.sqrt(expected), rel=1e-10)
    assert cov.bandwidth == 0.5

    printed = cov_pure_var(v, grad_v, returns, 0.05, bandwidth=0.5,
                           printed_alpha_factor=True)
    assert printed.sigma[0, 0] == pytest.approx(expected * 0.05 * 0.95,
                                                rel=1e-10)

    ranked = cov_pure_var(v, grad_v, returns, 0.05)
    resid = np.sort(np.abs(returns - q))
    assert ranked.bandwidth == resid[59]


def test_cov_pure_var_singular_hessian(rng):
    returns = rng.standard_normal(100)
    v = np.full(100, -1.6)
    grad_v = np.column_stack([np.ones(100), np.ones(100)])
    with pytest.raises(InferenceError) as exc:
        cov_pure_var(v, grad_v, returns, 0.05, bandwidth=0.5)
    assert exc.value.condition > 1e12


def test_joint_default_bandwidth(rng):
    t = 1000
    returns = rng.standard_normal(t)
    q = np.quantile(returns, 0.05)
    es = np.mean(returns[returns <= q])
    ones = np.ones(t)
    zeros = np.zeros(t)
    cov = sandwich_joint(returns, np.full(t, q), np.full(t, es),
                         np.column_stack([ones, zeros]),
                         np.column_stack([zeros, ones]), 0.05, 'FZ0',
                         names=['v', 'e'], hessian='quantile')
    assert cov.bandwidth == pytest.approx(0.1)
    assert np.all(cov.se > 0.0)
    assert cov.positive_definite
    assert cov.to_json()['names'] == ['v', 'e']
    with pytest.raises(InferenceError):
        sandwich_joint(returns, np.full(t, q), np.full(t, es),
                       np.column_stack([ones, zeros]),
                       np.column_stack([zeros, ones]), 0.05, 'FZ0',
                       hessian='other')


def test_cov_joint_needs_joint_loss():
    with pytest.raises(InferenceError):
        cov_joint(None, None, None, None, None, 0.05, 'EM')


def test_wald_test():
    cov = identity_report(['a', 'b', 'c'])
    theta = np.array([1.0, 2.0, 3.0])
    res = wald_test(theta, cov, ['a', 'b', 'c'])
    assert res.statistic == pytest.approx(14.0)
    assert res.df == 3
    res = wald_test(theta, cov, ['b', 'c'])
    assert res.statistic == pytest.approx(13.0)
    assert res.df == 2
    assert 0.0 < res.p_value < 0.01
    res = wald_test(np.array([1.0, 0.0, 0.0]), cov, [1, 2])
    assert res.statistic == 0.0 and res.p_value == 1.0 and res.df == 2
    with pytest.raises(InferenceError):
        wald_test(theta, cov, ['d'])
    with pytest.raises(InferenceError):
        wald_test(theta, cov, [5])
    with pytest.raises(InferenceError):
        wald_test(theta, cov, [])


def test_moment_loading_tests():
    spec = ModelSpec('mlt_skk', 'skk', 'ALS', 0.05)
    values = {'d0': 0.05, 'd1': 0.1, 'd2': 0.85, 'a1': 0.1, 'a2': 0.2,
              'a3': 0.2, 'b0': -0.5, 'b1': 0.3, 'b2': 0.4}
    params = ParamVector.from_dict(spec, values)
    fit = FitResult(spec, params, 0.0, 1, 0, True, 0.0)
    rv = moment_loading_tests(fit, identity_report(spec.param_names))
    assert rv['var_moments'].df == 3
    assert rv['var_moments'].statistic == pytest.approx(0.09)
    assert rv['es_moments'].df == 2
    assert rv['es_moments'].statistic == pytest.approx(0.25)

    spec = ModelSpec('add_sim', 'no', 'EM', 0.05)
    fit = FitResult(spec, ParamVector(spec, [-1.0, 0.0, 0.5]), 0.0, 1, 0,
                    True, 0.0)
    assert moment_loading_tests(fit, identity_report(spec.param_names)) \
        == {}


def test_estimate_covariance_of_fit(daily_sim, fast_options):
    spec = ModelSpec('add_sim', 'no', 'EM', 0.05)
    fit = complete_estimation(spec, daily_sim.returns, daily_sim.measures,
                              fast_options)
    cov = estimate_covariance(fit, daily_sim.returns, daily_sim.measures,
                              burn_in=fast_options.burn_in)
    assert cov.sigma.shape == (3, 3)
    assert cov.names == ['d0', 'd1', 'd2']
    assert np.all(cov.se > 0.0)
    assert np.array_equal(cov.sigma, cov.sigma.T)
