"""Rolling one-step-ahead forecasting and the tables built from it."""
import sys

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from tailrisk.estimator import EstimationError, EstimatorOptions, \
     complete_estimation, warm_update
from tailrisk.inference import InferenceError, estimate_covariance, \
     moment_loading_tests
from tailrisk.models import InfeasibleParams, ModelArtifact, ModelSpec, \
     filter_path, forecast_next
from tailrisk.reporter import reporter
from tailrisk.scoring import em_score, als_score, fz0_score
from tailrisk.utils import TailriskError


#: quantile loss is shown multiplied by this in written tables
EM_DISPLAY_FACTOR = 1000.0

RECORD_COLUMNS = ['asset', 'model', 'alpha', 'window', 'date', 'return',
                  'v', 'e', 'hit', 'em', 'als', 'fz0', 'failed', 'carried',
                  'update']


class ForecastError(TailriskError):
    pass


class RollingConfig(object):

    def __init__(self, window=1000, full_refit_every=500,
                 warm_update_every=50, alphas=(0.01, 0.025, 0.05)):
        if window < 1:
            raise ForecastError('The window must hold at least one day')
        if warm_update_every < 1 or full_refit_every < 1 or \
           full_refit_every % warm_update_every != 0:
            raise ForecastError('warm_update_every must divide '
                                'full_refit_every')
        self.window = int(window)
        self.full_refit_every = int(full_refit_every)
        self.warm_update_every = int(warm_update_every)
        self.alphas = tuple(alphas)

    def update_kind(self, step):
        """``'full'``, ``'warm'`` or ``None`` for the forecast ``step``
        days after the first one.
        """
        if step % self.full_refit_every == 0:
            return 'full'
        if step % self.warm_update_every == 0:
            return 'warm'
        return None

    def to_json(self):
        return {
            'window': self.window,
            'full_refit_every': self.full_refit_every,
            'warm_update_every': self.warm_update_every,
            'alphas': list(self.alphas),
        }


class ForecastRecord(object):
    """Out-of-sample forecasts of one model for one asset, level and
    window, aligned with the realized returns.
    """

    def __init__(self, asset, spec, window, dates, returns, v, e=None,
                 failed=None, updates=None, carried=None):
        self.asset = asset
        self.spec = spec
        self.window = window
        self.dates = list(dates)
        self.returns = np.asarray(returns, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.e = None if e is None else np.asarray(e, dtype=np.float64)
        n = self.returns.size
        self.failed = np.zeros(n, dtype=bool) if failed is None \
            else np.asarray(failed, dtype=bool)
        self.carried = np.zeros(n, dtype=bool) if carried is None \
            else np.asarray(carried, dtype=bool)
        self.updates = list(updates) if updates is not None else [''] * n
        if self.v.shape != (n,) or len(self.dates) != n:
            raise ForecastError('Forecast record columns are not aligned')
        self.hits = np.where(self.failed, 0,
                             (self.returns <= self.v)).astype(np.int8)
        self.scores = self._compute_scores()

    @property
    def alpha(self):
        return self.spec.alpha

    @property
    def valid(self):
        return ~(self.failed | self.carried)

    def __len__(self):
        return self.returns.size

    def _compute_scores(self):
        n = len(self)
        rv = {'em': np.full(n, np.nan), 'als': np.full(n, np.nan),
              'fz0': np.full(n, np.nan)}
        ok = self.valid
        r = self.returns[ok]
        v = self.v[ok]
        rv['em'][ok] = em_score(r, v, self.alpha)
        if self.e is not None:
            e = self.e[ok]
            rv['als'][ok] = als_score(r, v, e, self.alpha)
            rv['fz0'][ok] = fz0_score(r, v, e, self.alpha)
        return rv

    def valid_part(self):
        """Returns, VaR and ES forecasts of the days that have forecasts."""
        ok = self.valid
        return (self.returns[ok], self.v[ok],
                None if self.e is None else self.e[ok])

    def mean_loss(self, loss):
        values = self.scores[loss.lower()][self.valid]
        if values.size == 0 or np.all(np.isnan(values)):
            return np.nan
        return float(np.mean(values))

    def to_frame(self):
        n = len(self)
        return pd.DataFrame({
            'asset': [self.asset] * n,
            'model': [self.spec.key] * n,
            'alpha': np.full(n, self.alpha),
            'window': np.full(n, self.window, dtype=np.int64),
            'date': self.dates,
            'return': self.returns,
            'v': self.v,
            'e': np.full(n, np.nan) if self.e is None else self.e,
            'hit': self.hits,
            'em': self.scores['em'],
            'als': self.scores['als'],
            'fz0': self.scores['fz0'],
            'failed': self.failed.astype(np.int8),
            'carried': self.carried.astype(np.int8),
            'update': self.updates,
        }, columns=RECORD_COLUMNS)

    @classmethod
    def from_frame(cls, frame):
        missing = set(RECORD_COLUMNS) - set(frame.columns)
        if missing:
            raise ForecastError('Forecast table lacks columns: %s'
                                % ', '.join(sorted(missing)))
        if len(frame) == 0:
            raise ForecastError('Empty forecast table')
        first = frame.iloc[0]
        spec = ModelSpec.from_key(first['model'], float(first['alpha']))
        e = frame['e'].values if spec.has_es else None
        return cls(first['asset'], spec, int(first['window']),
                   [str(x) for x in frame['date']], frame['return'].values,
                   frame['v'].values, e,
                   frame['failed'].values.astype(bool),
                   frame['update'].fillna('').astype(str).tolist(),
                   frame['carried'].values.astype(bool))

    def to_csv(self, filename):
        self.to_frame().to_csv(filename, index=False, float_format='%.17g')

    @classmethod
    def from_csv(cls, filename):
        return cls.from_frame(pd.read_csv(filename, dtype={
            'date': str, 'asset': str, 'model': str, 'update': str}))


def _estimate(kind, spec, previous, returns, measures, options):
    if kind == 'full' or previous is None:
        return complete_estimation(spec, returns, measures, options)
    return warm_update(spec, previous, returns, measures, options)


def rolling_forecast(spec, returns, measures, config, options=None,
                     asset=None, dates=None):
    """One-step-ahead forecasts for every day after the first window.

    The forecast for day ``t`` is computed from the ``config.window`` days
    before it only.  Parameters are fully re-estimated on the first window
    and every ``full_refit_every`` days, warm updated every
    ``warm_update_every`` days and held fixed in between while the
    recursion keeps filtering the moving window.  When an estimation fails
    the last parameters are carried forward and every day until the next
    successful estimation is flagged as carried; days without any usable
    parameters are flagged as failed.  Both are left out of the aggregates.
    """
    options = options or EstimatorOptions()
    returns = np.asarray(returns, dtype=np.float64)
    n = returns.size
    window = config.window
    if len(measures) != n:
        raise ForecastError('Returns and realized measures are not aligned')
    if n < window + 1:
        raise ForecastError('Rolling forecasts need more than %d days, got '
                            '%d' % (window, n))
    if dates is None:
        dates = measures.dates
    horizon = n - window
    v = np.full(horizon, np.nan)
    e = np.full(horizon, np.nan) if spec.has_es else None
    failed = np.zeros(horizon, dtype=bool)
    carried = np.zeros(horizon, dtype=bool)
    updates = [''] * horizon
    fit = None
    carrying = False

    for step in range(horizon):
        t = window + step
        win_returns = returns[t - window:t]
        win_measures = measures[t - window:t]
        kind = config.update_kind(step)
        if kind is not None:
            try:
                fit = _estimate(kind, spec, fit, win_returns, win_measures,
                                options.replace(seed=options.seed + step))
                updates[step] = 'full' if fit.fell_back else kind
                carrying = False
                reporter.report_refit(dates[t], updates[step])
            except (EstimationError, InfeasibleParams):
                updates[step] = 'failed'
                carrying = True
                reporter.report_failure('%s at %s' % (spec.label, dates[t]),
                                        sys.exc_info())
        if fit is None:
            failed[step] = True
            continue
        carried[step] = carrying
        try:
            v[step], es = forecast_next(spec, fit.params, win_returns,
                                        win_measures)
        except InfeasibleParams:
            failed[step] = True
            continue
        if e is not None:
            e[step] = es
        reporter.report_forecast_step(dates[t], v[step],
                                      None if e is None else e[step])

    if carried.any():
        reporter.report_generic('%s: %d day(s) on carried parameters'
                                % (spec.label, int(carried.sum())))
    return ForecastRecord(asset, spec, window, dates[window:],
                          returns[window:], v, e, failed, updates, carried)


def empirical_coverage(record):
    """Share of days (with a forecast) on which the return breached the
    VaR.  Accepts a :class:`ForecastRecord`, a :class:`RiskPath` or a plain
    hit sequence.
    """
    if isinstance(record, ForecastRecord):
        hits = record.hits[record.valid]
    else:
        hits = np.asarray(getattr(record, 'hits', record))
    if hits.size == 0:
        raise ForecastError('Coverage of an empty record')
    return float(np.mean(hits))


class InSampleResult(object):
    """Full-sample estimate of one model: in-sample coverage, mean scores,
    covariance and moment-loading tests, or the failure that prevented
    them.
    """

    def __init__(self, asset, spec, fit=None, coverage=None, scores=None,
                 covariance=None, wald=None, failure=None,
                 window_meta=None):
        self.asset = asset
        self.spec = spec
        self.fit = fit
        self.coverage = coverage
        self.scores = scores or {}
        self.covariance = covariance
        self.wald = wald or {}
        self.failure = failure
        self.window_meta = window_meta or {}

    @property
    def failed(self):
        return self.fit is None

    def artifact(self):
        """The fitted parameters in the model exchange format."""
        if self.fit is None:
            return None
        return ModelArtifact(self.spec, self.fit.params, self.window_meta)

    def to_json(self):
        return {
            'asset': self.asset,
            'model': self.spec.key,
            'alpha': self.spec.alpha,
            'fit': None if self.fit is None else self.fit.to_json(),
            'coverage': self.coverage,
            'scores': self.scores,
            'covariance': None if self.covariance is None
            else self.covariance.to_json(),
            'wald': dict((k, w.to_json()) for k, w in self.wald.items()),
            'failure': self.failure,
            'artifact': None if self.fit is None
            else self.artifact().to_json(),
        }


def in_sample_analysis(spec, returns, measures, options=None, asset=None):
    """Estimates a model on the whole sample and evaluates it there.
    Estimation failures are reported in the result, covariance failures
    leave the fit in place.
    """
    options = options or EstimatorOptions()
    returns = np.asarray(returns, dtype=np.float64)
    meta = {'days': int(returns.size), 'burn_in': options.burn_in}
    if len(measures.dates):
        meta.update(start=measures.dates[0], end=measures.dates[-1])
    try:
        fit = complete_estimation(spec, returns, measures, options)
    except (EstimationError, InfeasibleParams) as exc:
        reporter.report_failure(spec.label, sys.exc_info())
        return InSampleResult(asset, spec, failure=str(exc),
                              window_meta=meta)
    reporter.report_fit(spec.label, fit)

    b = options.burn_in
    path = filter_path(spec, fit.params, returns, measures)
    r = returns[b:]
    scores = {'em': float(np.mean(em_score(r, path.v[b:], spec.alpha)))}
    if spec.has_es:
        scores['als'] = float(np.mean(als_score(r, path.v[b:], path.e[b:],
                                                spec.alpha)))
        scores['fz0'] = float(np.mean(fz0_score(r, path.v[b:], path.e[b:],
                                                spec.alpha)))
    rv = InSampleResult(asset, spec, fit, float(np.mean(path.hits[b:])),
                        scores, window_meta=meta)
    try:
        rv.covariance = estimate_covariance(fit, returns, measures, b)
        rv.wald = moment_loading_tests(fit, rv.covariance)
    except InferenceError as exc:
        rv.failure = 'covariance: %s' % exc
    return rv


def _record_key(record):
    return (record.spec.key, record.alpha, record.window)


def loss_table(records, loss):
    """One row per asset, model, level and window with the mean loss of
    the record.  Models without the loss (pure VaR models for the joint
    scores) are left out.
    """
    rows = []
    for record in records:
        value = record.mean_loss(loss)
        if np.isnan(value):
            continue
        rows.append({
            'asset': record.asset,
            'model': record.spec.key,
            'alpha': record.alpha,
            'window': record.window,
            'loss': value,
            'days': int(record.valid.sum()),
            'failed_days': int(record.failed.sum()),
            'carried_days': int(record.carried.sum()),
        })
    return pd.DataFrame(rows, columns=['asset', 'model', 'alpha', 'window',
                                       'loss', 'days', 'failed_days',
                                       'carried_days'])


def _check_comparable(records):
    spans = {}
    for record in records:
        key = (record.asset, record.alpha, record.window)
        span = (record.dates[0], record.dates[-1], len(record))
        if spans.setdefault(key, span) != span:
            raise ForecastError('Forecasts of asset "%s" cover different '
                                'dates across models' % record.asset)


def summarize_loss_table(table):
    """Median loss across assets and average rank across assets for every
    model, level and window of a :func:`loss_table`.  Ranks are taken per
    asset among the models present; ties share the mean rank.
    """
    if len(table) == 0:
        raise ForecastError('No losses to summarize')
    table = table.copy()
    ranks = np.empty(len(table))
    for _, idx in table.groupby(['asset', 'alpha', 'window']).groups.items():
        ranks[table.index.get_indexer(idx)] = rankdata(
            table.loc[idx, 'loss'].values, method='average')
    table['rank'] = ranks
    grouped = table.groupby(['model', 'alpha', 'window'], sort=True)
    medians = grouped['loss'].median().rename('median_loss')
    avg_ranks = grouped['rank'].mean().rename('average_rank')
    counts = grouped['asset'].count().rename('assets')
    median_table = pd.concat([medians, counts], axis=1).reset_index()
    rank_table = pd.concat([avg_ranks, counts], axis=1).reset_index()
    return median_table, rank_table


def loss_summary(records, loss, display=True):
    """Median-loss and average-rank tables over forecast records.  With
    ``display`` the quantile loss is multiplied by 1000 in the median
    table.
    """
    records = list(records)
    if not records:
        raise ForecastError('No forecast records given')
    _check_comparable(records)
    median_table, rank_table = summarize_loss_table(loss_table(records,
                                                               loss))
    if display and loss.upper() == 'EM':
        median_table['median_loss'] *= EM_DISPLAY_FACTOR
    return median_table, rank_table


def coverage_table(records):
    """Plot data of the coverage distributions: one row per record."""
    rows = []
    for record in records:
        ok = record.valid
        rows.append({
            'asset': record.asset,
            'model': record.spec.key,
            'alpha': record.alpha,
            'window': record.window,
            'coverage': float(np.mean(record.hits[ok])) if ok.any()
            else np.nan,
            'days': int(ok.sum()),
            'failed_days': int(record.failed.sum()),
            'carried_days': int(record.carried.sum()),
        })
    return pd.DataFrame(rows, columns=['asset', 'model', 'alpha', 'window',
                                       'coverage', 'days', 'failed_days',
                                       'carried_days'])


def loss_distribution_table(records, loss, display=True):
    """Plot data of the loss distributions across assets."""
    table = loss_table(records, loss)
    if display and loss.upper() == 'EM':
        table['loss'] *= EM_DISPLAY_FACTOR
    return table
