"""Backtests of VaR and (VaR, ES) forecast paths.

Every test returns a :class:`BacktestReport`.  Numerical trouble such as a
singular design is not raised but turned into a report flagged invalid so
that tables can count it separately from rejections.
"""
import numpy as np
from scipy.stats import chi2

from tailrisk.estimator import EstimationError, EstimatorOptions, \
     multistart_minimize, PENALTY
from tailrisk.inference import InferenceError, \
     _checked_inverse, pure_var_order_statistic, sandwich_joint
from tailrisk.scoring import ScoreError, score_path
from tailrisk.utils import TailriskError, stable_sum


DQ_VARIANTS = ('CC', 'ID')
ESR_VARIANTS = ('auxiliary', 'strict', 'strict_intercept')
PZC_TARGETS = ('VaR', 'ES')

#: number of random perturbations tried around the ESR starting point
ESR_PERTURBATIONS = 1000


class BacktestError(TailriskError):
    pass


class HitSeries(object):
    """Centered exceedance indicators ``I(r <= v) - alpha``."""

    def __init__(self, returns, v, alpha):
        returns = np.asarray(returns, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if returns.shape != v.shape:
            raise BacktestError('Got %d returns but %d VaR forecasts'
                                % (returns.size, v.size))
        self.alpha = alpha
        self.hits = (returns <= v).astype(np.int8)
        self.values = self.hits - alpha

    def __len__(self):
        return self.values.size

    @property
    def count(self):
        return int(self.hits.sum())

    def lagged(self, q):
        """Matrix of the ``q`` lagged values for every day from ``q`` on."""
        t = len(self)
        return np.column_stack([self.values[q - j:t - j]
                                for j in range(1, q + 1)])


class BacktestReport(object):

    def __init__(self, test_name, statistic=None, df=None, p_value=None,
                 valid=True, failure_reason=None, meta=None):
        self.test_name = test_name
        self.statistic = statistic
        self.df = df
        self.p_value = p_value
        self.valid = valid
        self.failure_reason = failure_reason
        self.meta = meta or {}

    @classmethod
    def invalid(cls, test_name, reason, meta=None):
        return cls(test_name, valid=False, failure_reason=reason, meta=meta)

    @classmethod
    def from_chi2(cls, test_name, statistic, df, meta=None):
        statistic = float(max(statistic, 0.0))
        if not np.isfinite(statistic):
            return cls.invalid(test_name, 'non-finite statistic', meta)
        return cls(test_name, statistic, df, float(chi2.sf(statistic, df)),
                   meta=meta)

    def rejects(self, level=0.05):
        return self.valid and self.p_value < level

    def to_json(self):
        return {
            'test': self.test_name,
            'statistic': self.statistic,
            'df': self.df,
            'p_value': self.p_value,
            'valid': self.valid,
            'failure_reason': self.failure_reason,
            'meta': self.meta,
        }

    def __repr__(self):
        if not self.valid:
            return '<BacktestReport %s invalid: %s>' % (
                self.test_name, self.failure_reason)
        return '<BacktestReport %s stat=%.4g p=%.4g>' % (
            self.test_name, self.statistic, self.p_value)


def _check_variant(variant, allowed):
    if variant not in allowed:
        raise BacktestError('Unknown variant "%s", expected one of %s'
                            % (variant, ', '.join(allowed)))


def _dq_design(hits, q, instruments, variant):
    t = len(hits)
    cols = [hits.lagged(q)]
    if instruments is not None:
        inst = np.asarray(instruments, dtype=np.float64)
        if inst.ndim == 1:
            inst = inst[:, None]
        if inst.shape[0] != t:
            raise BacktestError('Instruments must have one row per day')
        cols.append(inst[q:])
    x = np.column_stack(cols)
    if variant == 'CC':
        x = np.column_stack([np.ones(t - q), x])
    return x


def dq_in_sample(v, grad_v, returns, alpha, variant='CC', q=4,
                 instruments=None, bandwidth=None):
    """Dynamic quantile test on the estimation sample of a quantile-loss
    fit.  The moment covariance accounts for the estimated parameters
    through the VaR gradients ``grad_v``.  ``instruments`` default to the
    VaR forecast of the same day.
    """
    _check_variant(variant, DQ_VARIANTS)
    name = 'DQ_IS_%s' % variant
    returns = np.asarray(returns, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    grad_v = np.asarray(grad_v, dtype=np.float64)
    hits = HitSeries(returns, v, alpha)
    t = len(hits)
    if t <= q + 1:
        return BacktestReport.invalid(name, 'too few observations')
    if instruments is None:
        instruments = v
    x = _dq_design(hits, q, instruments, variant)
    h = hits.values[q:]
    df = x.shape[1]
    meta = {'q': q, 'hits': hits.count, 'observations': t - q}

    if not np.any(h):
        return BacktestReport(name, 0.0, df, 1.0, meta=meta)

    resid = np.abs(returns - v)
    if bandwidth is None:
        k = min(max(pure_var_order_statistic(alpha), 1), t)
        bandwidth = float(np.partition(resid, k - 1)[k - 1])
    if not bandwidth > 0.0:
        return BacktestReport.invalid(name, 'kernel bandwidth is not '
                                      'positive', meta)
    inside = (resid < bandwidth).astype(np.float64)
    d_hat = (grad_v * inside[:, None]).T @ grad_v / (2.0 * t * bandwidth)
    g = grad_v[q:]
    cross = (x * inside[q:, None]).T @ g / (2.0 * t * bandwidth)
    try:
        d_inv = _checked_inverse(d_hat, 'Kernel Hessian')
        m = x.T - cross @ d_inv @ g.T
        mm_inv = _checked_inverse(m @ m.T, 'Moment covariance')
    except InferenceError as e:
        return BacktestReport.invalid(name, str(e), meta)
    xh = x.T @ h
    stat = xh @ mm_inv @ xh / (alpha * (1.0 - alpha))
    return BacktestReport.from_chi2(name, stat, df, meta)


def dq_out_of_sample(v, returns, alpha, variant='CC', q=4):
    """Dynamic quantile test of out-of-sample VaR forecasts.  Regressors
    are the lagged centered hits and the forecast itself; the projection
    uses a pseudo-inverse so collinear hit lags (no hits at all) still
    give a statistic.
    """
    _check_variant(variant, DQ_VARIANTS)
    name = 'DQ_OOS_%s' % variant
    returns = np.asarray(returns, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(returns)) and np.all(np.isfinite(v))):
        return BacktestReport.invalid(name, 'non-finite forecasts or '
                                      'returns')
    hits = HitSeries(returns, v, alpha)
    t = len(hits)
    if t <= q + 2:
        return BacktestReport.invalid(name, 'too few observations')
    x = _dq_design(hits, q, v, variant)
    h = hits.values[q:]
    df = q + 2 if variant == 'CC' else q + 1
    meta = {'q': q, 'hits': hits.count, 'observations': t - q}
    if not np.any(h):
        return BacktestReport(name, 0.0, df, 1.0, meta=meta)

    xtx = x.T @ x
    if not np.any(xtx):
        return BacktestReport.invalid(name, 'degenerate design', meta)
    rank = int(np.linalg.matrix_rank(xtx))
    if rank < x.shape[1]:
        meta['rank'] = rank
    xh = x.T @ h
    stat = xh @ np.linalg.pinv(xtx) @ xh / (alpha * (1.0 - alpha))
    return BacktestReport.from_chi2(name, stat, df, meta)


def newey_west(moments, lags):
    """Long-run covariance of mean-zero moment rows with Bartlett weights
    ``1 - j / (lags + 1)``.  With ``lags = 0`` this is the
    heteroskedasticity-robust outer product.
    """
    g = np.asarray(moments, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    t = g.shape[0]
    if lags < 0:
        raise BacktestError('Newey-West lags must be non-negative')
    s = g.T @ g / t
    for j in range(1, min(lags, t - 1) + 1):
        gamma = g[j:].T @ g[:-j] / t
        s += (1.0 - j / (lags + 1.0)) * (gamma + gamma.T)
    return s


def _identification_functions(returns, v, e, alpha):
    hit = (returns <= v).astype(np.float64)
    lam_v = hit - alpha
    lam_e = None
    if e is not None:
        lam_e = hit * returns / (alpha * e) - 1.0
    return lam_v, lam_e


def pzc_test(returns, v, e=None, alpha=0.05, target='VaR', nw_lags=20):
    """Regression test on the standardized identification function of the
    VaR or the ES.  It is regressed on a constant, the lagged VaR
    identification value and the forecast; all three coefficients are
    zero under correct specification.
    """
    _check_variant(target, PZC_TARGETS)
    name = 'PZC_%s' % target
    returns = np.asarray(returns, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if target == 'ES' and e is None:
        raise BacktestError('The ES regression test needs ES forecasts')
    if e is not None:
        e = np.asarray(e, dtype=np.float64)
    lam_v, lam_e = _identification_functions(returns, v, e, alpha)
    if target == 'VaR':
        y, forecast = lam_v[1:], v[1:]
    else:
        y, forecast = lam_e[1:], e[1:]
    t = y.size
    meta = {'nw_lags': nw_lags, 'observations': t}
    if t < 4:
        return BacktestReport.invalid(name, 'too few observations', meta)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(forecast))):
        return BacktestReport.invalid(name, 'non-finite forecasts', meta)

    x = np.column_stack([np.ones(t), lam_v[:-1], forecast])
    try:
        q_inv = _checked_inverse(x.T @ x / t, 'Regressor moment matrix')
    except InferenceError as exc:
        return BacktestReport.invalid(name, str(exc), meta)
    coef = q_inv @ (x.T @ y) / t
    u = y - x @ coef
    s = newey_west(x * u[:, None], nw_lags)
    cov = q_inv @ s @ q_inv / t
    meta['coefficients'] = coef.tolist()
    if not np.any(coef):
        return BacktestReport(name, 0.0, 3, 1.0, meta=meta)
    try:
        cov_inv = _checked_inverse(cov, 'Coefficient covariance')
    except InferenceError as exc:
        return BacktestReport.invalid(name, str(exc), meta)
    return BacktestReport.from_chi2(name, coef @ cov_inv @ coef, 3, meta)


class _ESRegression(object):
    """Joint quantile and expected shortfall regression of the returns on
    the forecasts for one of the ESR variants.
    """

    def __init__(self, returns, v, e, alpha, variant, loss):
        self.returns = returns
        self.v = v
        self.e = e
        self.alpha = alpha
        self.variant = variant
        self.loss = loss
        ones = np.ones(returns.size)
        zeros = np.zeros(returns.size)
        if variant == 'strict_intercept':
            self.grad_v = np.column_stack([ones, zeros])
            self.grad_e = np.column_stack([zeros, ones])
            self.names = ['beta0', 'gamma0']
            self.start = np.zeros(2)
        else:
            quantile_reg = v if variant == 'auxiliary' else e
            self.grad_v = np.column_stack([ones, quantile_reg, zeros, zeros])
            self.grad_e = np.column_stack([zeros, zeros, ones, e])
            self.names = ['beta0', 'beta1', 'gamma0', 'gamma1']
            self.start = np.array([0.0, 1.0, 0.0, 1.0])

    def fitted(self, theta):
        if self.variant == 'strict_intercept':
            return self.e + theta[0], self.e + theta[1]
        return self.grad_v @ theta, self.grad_e @ theta

    def __call__(self, theta):
        q, es = self.fitted(theta)
        if not np.all(es < 0.0):
            return PENALTY
        try:
            scores = score_path(self.loss, self.returns, q, es, self.alpha)
        except ScoreError:
            return PENALTY
        value = stable_sum(scores) / scores.size
        if not np.isfinite(value):
            return PENALTY
        return value

    def perturbed_starts(self, n, seed):
        rng = np.random.Generator(np.random.Philox(key=seed))
        scale = np.where(self.start == 1.0, 0.5,
                         0.5 * float(np.std(self.returns)))
        draws = self.start + scale * rng.standard_normal((n, self.start.size))
        return np.vstack([self.start, draws])


def esr_test(returns, v, e, alpha, variant='auxiliary', loss='FZ0',
             perturbations=ESR_PERTURBATIONS, seed=1, bandwidth=None,
             options=None):
    """Expected shortfall regression backtest.

    ``auxiliary`` regresses on the VaR and ES forecasts, ``strict`` on the
    ES forecast only; both test that the ES equation has intercept 0 and
    slope 1.  ``strict_intercept`` regresses ``r - e`` on a constant and
    tests that its ES intercept is zero.
    """
    _check_variant(variant, ESR_VARIANTS)
    name = 'ESR_%s' % variant
    returns = np.asarray(returns, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    meta = {'loss': loss, 'observations': int(returns.size)}
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(e))):
        return BacktestReport.invalid(name, 'non-finite forecasts', meta)
    if not np.all(e < 0.0):
        return BacktestReport.invalid(name, 'ES forecasts must be '
                                      'negative', meta)

    reg = _ESRegression(returns, v, e, alpha, variant, loss)
    options = (options or EstimatorOptions()).replace(seed=seed)
    try:
        res = multistart_minimize(reg, reg.perturbed_starts(perturbations,
                                                            seed),
                                  options=options)
    except EstimationError as exc:
        return BacktestReport.invalid(name, 'regression failed: %s' % exc,
                                      meta)
    theta = res.x
    meta['coefficients'] = dict(zip(reg.names, theta.tolist()))
    q_fit, e_fit = reg.fitted(theta)
    try:
        cov = sandwich_joint(returns, q_fit, e_fit, reg.grad_v, reg.grad_e,
                             alpha, loss, bandwidth, reg.names,
                             hessian='quantile')
    except (InferenceError, ScoreError) as exc:
        return BacktestReport.invalid(name, str(exc), meta)

    if variant == 'strict_intercept':
        gamma = theta[1]
        se = cov.se[1]
        if gamma == 0.0:
            return BacktestReport(name, 0.0, 1, 1.0, meta=meta)
        if not se > 0.0:
            return BacktestReport.invalid(name, 'zero standard error', meta)
        tstat = gamma / se
        meta['t'] = float(tstat)
        return BacktestReport.from_chi2(name, tstat * tstat, 1, meta)

    diff = theta[2:] - np.array([0.0, 1.0])
    if not np.any(diff):
        return BacktestReport(name, 0.0, 2, 1.0, meta=meta)
    try:
        inv = _checked_inverse(cov.sigma[2:, 2:], 'ES coefficient covariance')
    except InferenceError as exc:
        return BacktestReport.invalid(name, str(exc), meta)
    return BacktestReport.from_chi2(name, diff @ inv @ diff, 2, meta)


def _guarded(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except (TailriskError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return BacktestReport.invalid(name, str(exc))


def run_backtests(returns, v, e=None, alpha=0.05, grad_v=None, q=4,
                  nw_lags=20, loss='FZ0', out_of_sample=True, seed=1,
                  perturbations=ESR_PERTURBATIONS, options=None):
    """Runs every backtest that applies to the forecasts.  In-sample DQ
    tests need the VaR gradients of a quantile-loss fit; ES tests need ES
    forecasts.
    """
    reports = []
    for variant in DQ_VARIANTS:
        if out_of_sample:
            reports.append(_guarded('DQ_OOS_%s' % variant, dq_out_of_sample,
                                    v, returns, alpha, variant, q))
        elif grad_v is not None:
            reports.append(_guarded('DQ_IS_%s' % variant, dq_in_sample,
                                    v, grad_v, returns, alpha, variant, q))
    reports.append(_guarded('PZC_VaR', pzc_test, returns, v, e, alpha,
                            'VaR', nw_lags))
    if e is not None:
        reports.append(_guarded('PZC_ES', pzc_test, returns, v, e, alpha,
                                'ES', nw_lags))
        for variant in ESR_VARIANTS:
            reports.append(_guarded('ESR_%s' % variant, esr_test, returns,
                                    v, e, alpha, variant, loss,
                                    perturbations, seed, options=options))
    return reports


def non_rejection_frequency(reports, level=0.05):
    """Share of valid reports that do not reject at ``level`` together
    with the number of valid reports.
    """
    valid = [r for r in reports if r.valid]
    if not valid:
        return float('nan'), 0
    kept = sum(1 for r in valid if r.p_value >= level)
    return kept / float(len(valid)), len(valid)


#: identifiers accepted by :func:`run_named_test`
TEST_NAMES = ('DQ_IS_CC', 'DQ_IS_ID', 'DQ_OOS_CC', 'DQ_OOS_ID', 'PZC_VaR',
              'PZC_ES', 'ESR_auxiliary', 'ESR_strict', 'ESR_strict_intercept')


def run_named_test(name, returns, v, e=None, alpha=0.05, grad_v=None, q=4,
                   nw_lags=20, loss='FZ0', seed=1,
                   perturbations=ESR_PERTURBATIONS, options=None):
    """Runs a single backtest selected by its report name."""
    if name not in TEST_NAMES:
        raise BacktestError('Unknown backtest "%s"' % name)
    family, variant = name.split('_', 1)
    if family == 'DQ':
        sample, variant = variant.split('_')
        if sample == 'IS':
            if grad_v is None:
                raise BacktestError('%s needs the VaR gradients of a '
                                    'quantile-loss fit' % name)
            return _guarded(name, dq_in_sample, v, grad_v, returns, alpha,
                            variant, q)
        return _guarded(name, dq_out_of_sample, v, returns, alpha, variant, q)
    if family == 'PZC':
        return _guarded(name, pzc_test, returns, v, e, alpha, variant,
                        nw_lags)
    if e is None:
        raise BacktestError('%s needs ES forecasts' % name)
    return _guarded(name, esr_test, returns, v, e, alpha, variant, loss,
                    perturbations, seed, options=options)
