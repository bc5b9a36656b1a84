"""Synthetic data with known tail risk.

Daily data follow a GARCH(1, 1) (or constant scale) model with
standardized Student-t innovations, so the true VaR and ES are available in
closed form.  Intraday grids come either from a square-root variance
diffusion or from Brownian bridges pinned at simulated daily returns.
All randomness flows from counter-based generators keyed by a seed.
"""
import os
import math

import numpy as np
import pandas as pd
from scipy.stats import t as student_t

from tailrisk.backtests import run_named_test, TEST_NAMES, BacktestError
from tailrisk.estimator import EstimatorOptions, complete_estimation
from tailrisk.models import ModelSpec, filter_path, gradient_path
from tailrisk.realized import IntradayDay, RealizedSeries
from tailrisk.reporter import reporter
from tailrisk.utils import TailriskError, atomic_open, dump_json, \
     file_checksum, parallel_map


DGP_KINDS = ('garch_t', 'constant_t', 'diffusion')

_default_params = {
    'garch_t': {'omega': 0.05, 'alpha_g': 0.10, 'beta': 0.85},
    'constant_t': {'sigma': 1.0},
    'diffusion': {'sigma': 1.0, 'kappa': 5.0, 'xi': 0.0},
}

#: smallest number of replications a size study accepts
MIN_REPLICATIONS = 100

#: first simulated trading day
START_DATE = '2000-01-03'


class SimulationError(TailriskError):
    pass


def make_rng(seed):
    """Counter-based generator.  ``seed`` is an integer or a sequence of
    integers (for example ``(seed, replication)``).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(
        seed)))


def business_dates(n, start=START_DATE):
    return [d.strftime('%Y-%m-%d') for d in pd.bdate_range(start, periods=n)]


def standardized_t_quantile(alpha, nu):
    """Quantile of the unit variance Student-t distribution."""
    return float(student_t.ppf(alpha, nu) * math.sqrt((nu - 2.0) / nu))


def standardized_t_es(alpha, nu):
    """Expected shortfall (lower tail mean) of the unit variance Student-t
    distribution.
    """
    q = student_t.ppf(alpha, nu)
    es = -(nu + q * q) / (nu - 1.0) * student_t.pdf(q, nu) / alpha
    return float(es * math.sqrt((nu - 2.0) / nu))


def t_kurtosis(nu):
    return 3.0 + 6.0 / (nu - 4.0)


class DgpSpec(object):
    """A data generating process: its kind, named coefficients, the
    innovation degrees of freedom and the seed.
    """

    def __init__(self, kind='garch_t', params=None, nu=8.0, seed=1):
        if kind not in DGP_KINDS:
            raise SimulationError('Unknown data generating process "%s"'
                                  % kind)
        merged = dict(_default_params[kind])
        unknown = set(params or ()) - set(merged)
        if unknown:
            raise SimulationError('Unknown %s parameters: %s' % (
                kind, ', '.join(sorted(unknown))))
        merged.update(params or {})
        self.kind = kind
        self.params = dict((k, float(v)) for k, v in merged.items())
        self.nu = float(nu)
        self.seed = seed
        self.validate()

    def validate(self):
        p = self.params
        if self.kind == 'garch_t':
            if not (p['omega'] > 0.0 and p['alpha_g'] >= 0.0 and
                    p['beta'] >= 0.0 and p['alpha_g'] + p['beta'] < 1.0):
                raise SimulationError('GARCH needs omega > 0, alpha_g >= 0, '
                                      'beta >= 0 and alpha_g + beta < 1')
        elif not p['sigma'] > 0.0:
            raise SimulationError('sigma must be positive')
        if self.kind == 'diffusion':
            if p['kappa'] < 0.0 or p['xi'] < 0.0:
                raise SimulationError('kappa and xi must be non-negative')
        elif not self.nu > 4.0:
            raise SimulationError('Innovations need nu > 4 for a finite '
                                  'kurtosis')

    @classmethod
    def from_config(cls, section, seed=None):
        kind = section['kind']
        params = dict((key, section[key]) for key in _default_params[kind])
        return cls(kind, params, nu=section['nu'],
                   seed=section.get('seed', 1) if seed is None else seed)

    @property
    def unconditional_variance(self):
        p = self.params
        if self.kind == 'garch_t':
            return p['omega'] / (1.0 - p['alpha_g'] - p['beta'])
        return p['sigma'] ** 2

    def to_json(self):
        return {
            'kind': self.kind,
            'params': self.params,
            'nu': self.nu,
            'seed': self.seed,
        }


class DailySimulation(object):

    def __init__(self, returns, sigma2, true_v, true_e, measures, alpha):
        self.returns = returns
        self.sigma2 = sigma2
        self.true_v = true_v
        self.true_e = true_e
        self.measures = measures
        self.alpha = alpha

    def __len__(self):
        return self.returns.size

    def to_frame(self):
        return pd.DataFrame({
            'date': self.measures.dates,
            'return': self.returns,
            'true_v': self.true_v,
            'true_e': self.true_e,
        }, columns=['date', 'return', 'true_v', 'true_e'])


def simulate_daily(dgp, n_days, alpha=0.05, seed=None):
    """Returns with their true VaR and ES at level ``alpha``.  The attached
    realized series is a daily proxy (squared return, zero skewness and the
    innovation kurtosis) so every model can be fitted on the output.
    """
    if dgp.kind == 'diffusion':
        raise SimulationError('The diffusion process only generates '
                              'intraday grids')
    if n_days < 1:
        raise SimulationError('Need at least one day')
    rng = make_rng(dgp.seed if seed is None else seed)
    nu = dgp.nu
    z = rng.standard_t(nu, n_days) * math.sqrt((nu - 2.0) / nu)

    if dgp.kind == 'garch_t':
        omega = dgp.params['omega']
        alpha_g = dgp.params['alpha_g']
        beta = dgp.params['beta']
        sigma2 = np.empty(n_days)
        returns = np.empty(n_days)
        s2 = dgp.unconditional_variance
        for t in range(n_days):
            sigma2[t] = s2
            returns[t] = math.sqrt(s2) * z[t]
            s2 = omega + alpha_g * returns[t] ** 2 + beta * s2
    else:
        sigma2 = np.full(n_days, dgp.unconditional_variance)
        returns = np.sqrt(sigma2) * z

    scale = np.sqrt(sigma2)
    true_v = scale * standardized_t_quantile(alpha, nu)
    true_e = scale * standardized_t_es(alpha, nu)
    measures = RealizedSeries.constant_moments(
        returns * returns, 0.0, t_kurtosis(nu),
        dates=business_dates(n_days))
    return DailySimulation(returns, sigma2, true_v, true_e, measures, alpha)


class IntradaySimulation(object):

    def __init__(self, days, integrated_variance, daily=None):
        self.days = days
        self.integrated_variance = integrated_variance
        self.daily = daily

    def __len__(self):
        return len(self.days)

    @property
    def daily_returns(self):
        """Close-to-close returns from the second day on."""
        closes = np.array([day.close for day in self.days])
        return np.diff(closes)


def _variance_path(dgp, var, n_steps, dt, rng):
    """Full-truncation Euler steps of the square-root variance starting at
    ``var``.  Returns the path and the state after the last step.
    """
    p = dgp.params
    theta = p['sigma'] ** 2
    kappa = p['kappa']
    xi = p['xi']
    if xi == 0.0 and var == theta:
        return np.full(n_steps, theta), theta
    shocks = rng.standard_normal(n_steps) * math.sqrt(dt)
    out = np.empty(n_steps)
    for i in range(n_steps):
        out[i] = var
        var = max(var + kappa * (theta - var) * dt +
                  xi * math.sqrt(var) * shocks[i], 0.0)
    return out, var


def _diffusion_days(dgp, n_days, n_slots, fine_ratio, rng, dates, start):
    n_fine = n_slots * fine_ratio
    dt = 1.0 / n_fine
    days = []
    iv = np.empty(n_days)
    close = start
    state = dgp.params['sigma'] ** 2
    for d in range(n_days):
        var, state = _variance_path(dgp, state, n_fine, dt, rng)
        steps = np.sqrt(var * dt) * rng.standard_normal(n_fine)
        path = close + np.concatenate([[0.0], np.cumsum(steps)])
        iv[d] = math.fsum(var) * dt
        days.append(IntradayDay(d, path[::fine_ratio],
                                prior_close=close if d else None,
                                date=dates[d]))
        close = path[-1]
    return days, iv


def _bridge_days(daily, n_slots, rng, dates, start):
    """Intraday grids whose slot returns are a Gaussian bridge with the
    day's conditional variance, pinned at the simulated daily return.
    """
    days = []
    close = start
    for d, (ret, s2) in enumerate(zip(daily.returns, daily.sigma2)):
        steps = rng.standard_normal(n_slots) * math.sqrt(s2 / n_slots)
        walk = np.concatenate([[0.0], np.cumsum(steps)])
        frac = np.arange(n_slots + 1) / float(n_slots)
        path = close + walk - frac * (walk[-1] - ret)
        path[-1] = close + ret
        days.append(IntradayDay(d, path, prior_close=close if d else None,
                                date=dates[d]))
        close = path[-1]
    return days


def simulate_intraday(dgp, n_days, n_slots=78, fine_ratio=10, seed=None,
                      alpha=0.05, start=0.0):
    """Regular grids of ``n_slots + 1`` log-prices per day.

    For the diffusion every observation interval is split into
    ``fine_ratio`` Euler steps and the integrated variance is summed over
    the fine grid.  For the daily processes the close-to-close returns are
    exactly the simulated daily returns and the returned variance is the
    conditional one.
    """
    if n_slots < 2:
        raise SimulationError('Need at least two intraday slots')
    if fine_ratio < 1:
        raise SimulationError('fine_ratio must be at least one')
    rng = make_rng(dgp.seed if seed is None else seed)
    dates = business_dates(n_days)
    if dgp.kind == 'diffusion':
        days, iv = _diffusion_days(dgp, n_days, n_slots, fine_ratio, rng,
                                   dates, start)
        return IntradaySimulation(days, iv)
    daily = simulate_daily(dgp, n_days, alpha, seed=rng)
    days = _bridge_days(daily, n_slots, rng, dates, start)
    return IntradaySimulation(days, daily.sigma2, daily)


def intraday_frame(days, scale=1.0):
    """The ingestion table (``date, slot_index, log_price``) of a list of
    days.  Log-prices are divided by ``scale``.
    """
    frames = []
    for day in days:
        frames.append(pd.DataFrame({
            'date': day.date,
            'slot_index': np.arange(day.log_prices.size),
            'log_price': day.log_prices / scale,
        }, columns=['date', 'slot_index', 'log_price']))
    return pd.concat(frames, ignore_index=True)


def write_intraday_csv(days, filename, scale=1.0):
    intraday_frame(days, scale).to_csv(filename, index=False,
                                       float_format='%.17g')


class StudyResult(object):

    def __init__(self, test, reps, valid, rejections, level):
        self.test = test
        self.reps = reps
        self.valid = valid
        self.rejections = rejections
        self.level = level

    @property
    def rate(self):
        if not self.valid:
            return float('nan')
        return self.rejections / float(self.valid)

    @property
    def standard_error(self):
        if not self.valid:
            return float('nan')
        rate = self.rate
        return math.sqrt(rate * (1.0 - rate) / self.valid)

    def to_json(self):
        return {
            'test': self.test,
            'reps': self.reps,
            'valid': self.valid,
            'rejections': self.rejections,
            'level': self.level,
            'rate': self.rate,
            'standard_error': self.standard_error,
        }


def _constant_forecasts(returns, alpha):
    v = float(np.quantile(returns, alpha))
    tail = returns[returns <= v]
    e = float(np.mean(tail)) if tail.size else v
    if not e < v:
        e = v - abs(v) * 1e-6 - 1e-12
    n = returns.size
    return np.full(n, v), np.full(n, e)


def _replication(test, dgp, n_days, alpha, forecaster, scale, options,
                 seed, rep, kwargs):
    sim = simulate_daily(dgp, n_days, alpha, seed=(seed, rep))
    returns = sim.returns
    grad_v = None
    if isinstance(forecaster, ModelSpec):
        spec = forecaster.with_alpha(alpha)
        fit = complete_estimation(spec, returns, sim.measures,
                                  options.replace(seed=seed + rep))
        path = filter_path(spec, fit.params, returns, sim.measures)
        grad_v, _ = gradient_path(spec, fit.params, returns, sim.measures)
        b = options.burn_in
        returns = returns[b:]
        v = path.v[b:]
        e = None if path.e is None else path.e[b:]
        grad_v = grad_v[b:]
    elif forecaster == 'constant':
        v, e = _constant_forecasts(returns, alpha)
    else:
        v = sim.true_v * scale
        e = sim.true_e * scale
    return run_named_test(test, returns, v, e, alpha, grad_v,
                          seed=seed + rep, options=options, **kwargs)


def size_study(test, dgp, reps=300, level=0.05, n_days=2000, alpha=0.05,
               forecaster='true', scale=1.0, options=None, seed=1,
               threads=None, **kwargs):
    """Rejection frequency of a backtest over simulated samples.

    ``forecaster`` is ``'true'`` (the DGP's own VaR and ES, multiplied by
    ``scale``), ``'constant'`` (the unconditional sample quantile and tail
    mean) or a :class:`ModelSpec` fitted in-sample on each replication.
    Extra keyword arguments are passed to the backtest.
    """
    if test not in TEST_NAMES:
        raise BacktestError('Unknown backtest "%s"' % test)
    if reps < MIN_REPLICATIONS:
        raise SimulationError('A size study needs at least %d '
                              'replications' % MIN_REPLICATIONS)
    if not isinstance(forecaster, ModelSpec) and \
       forecaster not in ('true', 'constant'):
        raise SimulationError('Unknown forecaster %r' % (forecaster,))
    options = (options or EstimatorOptions()).replace(threads=1)

    def _run(rep):
        return _replication(test, dgp, n_days, alpha, forecaster, scale,
                            options, seed, rep, kwargs)

    with reporter.stage('size study %s' % test):
        reports = parallel_map(_run, range(reps), threads)
    valid = [r for r in reports if r.valid]
    rejections = sum(1 for r in valid if r.p_value < level)
    result = StudyResult(test, reps, len(valid), rejections, level)
    reporter.report_generic('%s: rejection rate %.3f (%d valid of %d)' % (
        test, result.rate, result.valid, reps))
    return result


def truth_frame(sim, nu, alphas=(0.05,)):
    """The per-day truth behind an intraday simulation: the integrated (or
    conditional) variance and, for the daily processes, the return and its
    true VaR and ES at every level in ``alphas``.
    """
    columns = ['date', 'variance']
    data = {'date': [day.date for day in sim.days],
            'variance': sim.integrated_variance}
    if sim.daily is not None:
        scale = np.sqrt(sim.daily.sigma2)
        data['return'] = sim.daily.returns
        columns.append('return')
        for alpha in alphas:
            key = ('%g' % alpha).replace('.', 'p')
            data['true_v_' + key] = scale * standardized_t_quantile(
                alpha, nu)
            data['true_e_' + key] = scale * standardized_t_es(
                alpha, nu)
            columns.extend(['true_v_' + key, 'true_e_' + key])
    return pd.DataFrame(data, columns=columns)


def write_simulation(config, path):
    """Simulates ``simulate.assets`` assets from the configured process and
    writes ``intraday/<asset>.csv`` (log-prices divided by
    ``measures.scale``), ``truth/<asset>.csv`` and ``simulation.json`` into
    ``path``.  Asset ``i`` draws from the seed ``(run.seed, i)``.
    """
    from tailrisk import __version__

    section = config['SIMULATE']
    seed = config['RUN']['seed']
    scale = config['MEASURES']['scale']
    if section['assets'] < 1 or section['days'] < 2:
        raise SimulationError('Need at least one asset and two days')
    dgp = DgpSpec.from_config(section, seed=seed)
    width = max(2, len(str(section['assets'])))
    outputs = {}
    names = []
    for idx in range(section['assets']):
        name = 'asset%0*d' % (width, idx + 1)
        with reporter.process_asset(name):
            sim = simulate_intraday(dgp, section['days'],
                                    n_slots=section['slots'],
                                    fine_ratio=section['fine_ratio'],
                                    seed=(seed, idx))
            for folder, frame in (
                    ('intraday', intraday_frame(sim.days, scale)),
                    ('truth', truth_frame(sim, dgp.nu,
                                           config['RUN']['alphas']))):
                fn = os.path.join(path, folder, name + '.csv')
                try:
                    os.makedirs(os.path.dirname(fn))
                except OSError:
                    pass
                with atomic_open(fn, 'w') as f:
                    frame.to_csv(f, index=False, float_format='%.17g')
                outputs['%s/%s.csv' % (folder, name)] = file_checksum(fn)
        names.append(name)
    manifest = {
        'version': __version__,
        'config': config.to_json(),
        'seed': seed,
        'dgp': dgp.to_json(),
        'assets': names,
        'outputs': outputs,
    }
    with atomic_open(os.path.join(path, 'simulation.json'), 'w') as f:
        dump_json(manifest, f)
    return manifest
