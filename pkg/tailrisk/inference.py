"""Asymptotic covariance of the score-minimizing estimators and Wald tests
on their coefficients.
"""
import numpy as np
from scipy.stats import chi2

from tailrisk.models import filter_path, gradient_path, DEFAULT_BURN_IN
from tailrisk.scoring import score_gradient
from tailrisk.utils import TailriskError


#: bandwidth order statistics of pure VaR models at the study levels
PURE_VAR_BANDWIDTH = ((0.01, 40), (0.025, 50), (0.05, 60))

#: condition number above which a matrix is treated as singular
MAX_CONDITION = 1e12


class InferenceError(TailriskError):

    def __init__(self, message, condition=None):
        TailriskError.__init__(self, message)
        self.condition = condition


class CovarianceReport(object):

    def __init__(self, sigma, bandwidth, a_hat, d_hat, names=None):
        sigma = 0.5 * (sigma + sigma.T)
        self.sigma = sigma
        self.se = np.sqrt(np.maximum(np.diag(sigma), 0.0))
        self.bandwidth = bandwidth
        self.a_hat = a_hat
        self.d_hat = d_hat
        self.names = names

    @property
    def positive_definite(self):
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            return False
        return True

    def to_json(self):
        return {
            'names': self.names,
            'sigma': self.sigma.tolist(),
            'se': self.se.tolist(),
            'bandwidth': self.bandwidth,
        }


class WaldResult(object):

    def __init__(self, statistic, df, p_value, restriction):
        self.statistic = statistic
        self.df = df
        self.p_value = p_value
        self.restriction = restriction

    def to_json(self):
        return {
            'restriction': self.restriction,
            'statistic': self.statistic,
            'df': self.df,
            'p_value': self.p_value,
        }


def _checked_inverse(matrix, what):
    """Inverse of a square matrix.  The condition number is judged after
    scaling to unit diagonal so differently scaled parameters do not count
    as singularity.
    """
    scale = np.sqrt(np.abs(np.diag(matrix)))
    if not np.all(np.isfinite(matrix)) or not np.all(scale > 0.0):
        raise InferenceError('%s is singular (zero or non-finite diagonal)'
                             % what, condition=np.inf)
    outer = np.outer(scale, scale)
    scaled = matrix / outer
    try:
        cond = float(np.linalg.cond(scaled))
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise InferenceError('%s is singular (condition number %.3g)'
                             % (what, cond), condition=cond)
    return np.linalg.inv(scaled) / outer


def pure_var_order_statistic(alpha):
    """Rank of the absolute residual used as the kernel bandwidth,
    interpolated piecewise linearly between the anchor levels and held
    constant outside them.
    """
    levels = [x[0] for x in PURE_VAR_BANDWIDTH]
    ranks = [x[1] for x in PURE_VAR_BANDWIDTH]
    return int(np.floor(np.interp(alpha, levels, ranks) + 0.5))


def cov_pure_var(v, grad_v, returns, alpha, bandwidth=None,
                 printed_alpha_factor=False, names=None):
    """Sandwich covariance of a quantile-loss estimator.  ``bandwidth``
    overrides the order statistic rule.
    """
    returns = np.asarray(returns, dtype=np.float64)
    t = returns.size
    resid = np.abs(returns - v)
    if bandwidth is None:
        k = min(max(pure_var_order_statistic(alpha), 1), t)
        bandwidth = float(np.partition(resid, k - 1)[k - 1])
    if not bandwidth > 0.0:
        raise InferenceError('Kernel bandwidth is not positive')

    a_hat = alpha * (1.0 - alpha) * (grad_v.T @ grad_v) / t
    inside = (resid < bandwidth).astype(np.float64)
    d_hat = (grad_v * inside[:, None]).T @ grad_v / (2.0 * t * bandwidth)
    d_inv = _checked_inverse(d_hat, 'Kernel Hessian')
    sigma = d_inv @ a_hat @ d_inv / t
    if printed_alpha_factor:
        sigma = sigma * alpha * (1.0 - alpha)
    return CovarianceReport(sigma, bandwidth, a_hat, d_hat, names)


def sandwich_joint(returns, v, e, grad_v, grad_e, alpha, loss,
                   bandwidth=None, names=None, hessian='cross'):
    """Sandwich covariance of a joint (VaR, ES) score minimizer given the
    filtered paths and their parameter gradients.

    With ``hessian='cross'`` the kernel term pairs the ES and VaR
    gradients.  ``'quantile'`` pairs the VaR gradient with itself instead;
    use it when the VaR and ES parameters are disjoint (regressions) since
    the cross term then has empty rows.
    """
    if hessian not in ('cross', 'quantile'):
        raise InferenceError('Unknown Hessian form "%s"' % hessian)
    returns = np.asarray(returns, dtype=np.float64)
    t = returns.size
    if bandwidth is None:
        bandwidth = t ** (-1.0 / 3.0)
    dv, de = score_gradient(returns, v, e, alpha, loss)
    lam = grad_v * dv[:, None] + grad_e * de[:, None]
    a_hat = lam.T @ lam / t

    inside = (np.abs(returns - v) < bandwidth).astype(np.float64)
    w1 = inside / (2.0 * bandwidth * -alpha * e)
    left = grad_e if hessian == 'cross' else grad_v
    d_hat = ((left * w1[:, None]).T @ grad_v +
             (grad_e / (e * e)[:, None]).T @ grad_e) / t
    d_sym = 0.5 * (d_hat + d_hat.T)
    d_inv = _checked_inverse(d_sym, 'Joint Hessian')
    sigma = d_inv @ a_hat @ d_inv / t
    return CovarianceReport(sigma, bandwidth, a_hat, d_hat, names)


def cov_joint(v, e, grad_v, grad_e, returns, alpha, loss, bandwidth=None,
              names=None):
    if loss not in ('ALS', 'FZ0'):
        raise InferenceError('Joint covariance needs an ALS or FZ0 fit')
    return sandwich_joint(returns, v, e, grad_v, grad_e, alpha, loss,
                          bandwidth, names)


def estimate_covariance(fit, returns, measures, burn_in=DEFAULT_BURN_IN,
                        rbar=None, init=None, printed_alpha_factor=False):
    """Covariance report of a fitted model on its estimation sample.  The
    burn-in prefix is left out as it is in the objective.
    """
    spec = fit.spec
    path = filter_path(spec, fit.params, returns, measures, rbar, init)
    grad_v, grad_e = gradient_path(spec, fit.params, returns, measures,
                                   rbar, init)
    b = burn_in
    returns = np.asarray(returns, dtype=np.float64)[b:]
    names = list(spec.param_names)
    if spec.loss == 'EM':
        return cov_pure_var(path.v[b:], grad_v[b:], returns, spec.alpha,
                            printed_alpha_factor=printed_alpha_factor,
                            names=names)
    return cov_joint(path.v[b:], path.e[b:], grad_v[b:], grad_e[b:],
                     returns, spec.alpha, spec.loss, names=names)


def _restriction_indices(restriction, names):
    rv = []
    for item in restriction:
        if isinstance(item, str):
            if names is None or item not in names:
                raise InferenceError('Unknown parameter "%s"' % item)
            rv.append(names.index(item))
        else:
            rv.append(int(item))
    return rv


def wald_test(theta, cov, restriction):
    """Wald test that the restricted coordinates are jointly zero.
    ``restriction`` holds indices or parameter names.
    """
    theta = np.asarray(getattr(theta, 'values', theta), dtype=np.float64)
    idx = _restriction_indices(restriction, cov.names)
    if not idx or any(i < 0 or i >= theta.size for i in idx):
        raise InferenceError('Restriction %r is outside the parameter '
                             'vector' % (list(restriction),))
    sub = theta[idx]
    df = len(idx)
    if not np.any(sub):
        return WaldResult(0.0, df, 1.0, list(restriction))
    middle = cov.sigma[np.ix_(idx, idx)]
    inv = _checked_inverse(middle, 'Restricted covariance')
    stat = float(max(sub @ inv @ sub, 0.0))
    return WaldResult(stat, df, float(chi2.sf(stat, df)), list(restriction))


def moment_loading_tests(fit, cov):
    """Wald tests of the realized skewness/kurtosis loadings present in a
    model: ``a1 = a2 = a3 = 0`` for the VaR and ``b1 = b2 = 0`` for the ES.
    """
    rv = {}
    names = fit.spec.param_names
    if 'a1' in names:
        rv['var_moments'] = wald_test(fit.params, cov, ['a1', 'a2', 'a3'])
    if 'b1' in names:
        rv['es_moments'] = wald_test(fit.params, cov, ['b1', 'b2'])
    return rv
