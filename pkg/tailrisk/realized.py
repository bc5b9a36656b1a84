"""Daily realized measures computed from regular intraday log-price grids:
variance estimators, Neuberger-Payne third and fourth moments, their
standardization into skewness and kurtosis and the outlier filter.
"""
import math

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from tailrisk.utils import TailriskError


VARIANCE_KINDS = ('RV', 'BPV', 'SV_POS', 'SV_NEG', 'MED')

MED_CONSTANT = math.pi / (6.0 - 4.0 * math.sqrt(3.0) + math.pi)
BPV_CONSTANT = math.pi / 2.0

SK_BOUNDS = (-15.0, 15.0)
KU_BOUNDS = (0.0, 20.0)

MEASURE_COLUMNS = ['date', 'rv', 'mu3', 'mu4', 'sk', 'sk_neg', 'sk_pos',
                   'ku', 'filtered']

_min_returns = {
    'RV': 2,
    'SV_POS': 2,
    'SV_NEG': 2,
    'BPV': 2,
    'MED': 3,
}


class MeasureError(TailriskError):
    pass


class IntradayDay(object):
    """One trading day on a regular grid of ``N + 1`` log-prices."""

    def __init__(self, day_index, log_prices, prior_close=None, date=None):
        log_prices = np.asarray(log_prices, dtype=np.float64)
        if log_prices.ndim != 1 or log_prices.size < 3:
            raise MeasureError('A trading day needs at least three '
                               'log-prices (two returns), got %d'
                               % log_prices.size)
        if not np.all(np.isfinite(log_prices)):
            raise MeasureError('Non-finite log-price on day %s'
                               % (date or day_index))
        self.day_index = day_index
        self.log_prices = log_prices
        self.prior_close = prior_close
        self.date = date

    @property
    def n(self):
        return self.log_prices.size - 1

    @property
    def returns(self):
        return np.diff(self.log_prices)

    @property
    def close(self):
        return self.log_prices[-1]

    @classmethod
    def from_returns(cls, returns, day_index=0, start=0.0, date=None):
        prices = np.concatenate([[start], start + np.cumsum(returns)])
        return cls(day_index, prices, date=date)

    def __repr__(self):
        return '<IntradayDay %s N=%d>' % (self.date or self.day_index,
                                          self.n)


def realized_variance(day, kind='RV'):
    """Daily variance estimate of the given kind."""
    if kind not in _min_returns:
        raise MeasureError('Unknown variance estimator "%s"' % kind)
    r = day.returns
    n = r.size
    if n < _min_returns[kind]:
        raise MeasureError('%s needs at least %d intraday returns, got %d'
                           % (kind, _min_returns[kind], n))

    if kind == 'RV':
        return float(np.sum(r * r))
    elif kind == 'SV_POS':
        return float(np.sum(np.where(r > 0.0, r * r, 0.0)))
    elif kind == 'SV_NEG':
        return float(np.sum(np.where(r < 0.0, r * r, 0.0)))
    elif kind == 'BPV':
        a = np.abs(r)
        return float(BPV_CONSTANT * n / (n - 1.0) * np.sum(a[1:] * a[:-1]))
    a = np.abs(r)
    med = np.median(sliding_window_view(a, 3), axis=1)
    return float(MED_CONSTANT * n / (n - 2.0) * np.sum(med * med))


def acjv_moment(day, k):
    """Raw realized moment of order 3 or 4."""
    if k not in (3, 4):
        raise MeasureError('Realized moments are defined for k in {3, 4}, '
                           'got %r' % (k,))
    return float(np.sum(day.returns ** k))


def _trend_terms(day):
    """Returns the local trend terms (y*, z*) evaluated at every i - 1 for
    i = 1..N.  Grid points before the open are padded with the previous
    close (or the opening price).
    """
    x = day.log_prices
    n = day.n
    pad = x[0] if day.prior_close is None else float(day.prior_close)
    # deviations from the pad value keep the squares well conditioned
    dev = x[:-1] - pad
    s1 = np.cumsum(dev)
    s2 = np.cumsum(dev * dev)
    y = dev - s1 / n
    z = dev * dev - 2.0 * dev * s1 / n + s2 / n
    return y, np.maximum(z, 0.0)


def np_day_sums(day):
    """Per-day inner sums of the Neuberger-Payne estimators."""
    r = day.returns
    y, z = _trend_terms(day)
    r2 = r * r
    r3 = r2 * r
    mu3 = np.sum(r3 + 3.0 * y * r2)
    mu4 = np.sum(r2 * r2 + 4.0 * y * r3 + 6.0 * z * r2)
    return float(mu3), float(mu4)


def np_moments(days, tau=5):
    """Third and fourth realized moments averaged over a window of exactly
    ``tau`` days.  Trend terms restart every day.
    """
    days = list(days)
    if tau < 1:
        raise MeasureError('tau must be at least 1')
    if len(days) != tau:
        raise MeasureError('Incomplete moment window: expected %d days, '
                           'got %d' % (tau, len(days)))
    sums = np.array([np_day_sums(day) for day in days])
    return float(np.sum(sums[:, 0]) / tau), float(np.sum(sums[:, 1]) / tau)


def standardize_moments(mu2, mu3, mu4, mu1=None):
    """Converts raw conditional moments into skewness and kurtosis.  By
    default the conditional mean is taken as zero; passing ``mu1`` switches
    to the mean-corrected formulas.
    """
    if mu1 is None:
        if not mu2 > 0.0:
            raise MeasureError('Variance must be positive to standardize, '
                               'got %r' % (mu2,))
        return mu3 / mu2 ** 1.5, mu4 / (mu2 * mu2)
    var = mu2 - mu1 * mu1
    if not var > 0.0:
        raise MeasureError('Centered variance must be positive, got %r'
                           % (var,))
    sk = (mu3 - 3.0 * mu1 * mu2 + 2.0 * mu1 ** 3) / var ** 1.5
    ku = (mu4 - 4.0 * mu3 * mu1 + 6.0 * mu2 * mu1 ** 2
          - 3.0 * mu1 ** 4) / (var * var)
    return sk, ku


def split_skewness(sk):
    sk = np.asarray(sk, dtype=np.float64)
    sk_neg = np.where(sk < 0.0, -sk, 0.0)
    sk_pos = np.where(sk > 0.0, sk, 0.0)
    return sk_neg, sk_pos


class RealizedSeries(object):
    """Per-day realized measures aligned with a list of dates."""

    def __init__(self, rv, sk, ku, mu3=None, mu4=None, filtered=None,
                 dates=None):
        self.rv = np.asarray(rv, dtype=np.float64)
        n = self.rv.size
        self.sk = np.asarray(sk, dtype=np.float64)
        self.ku = np.asarray(ku, dtype=np.float64)
        self.mu3 = np.full(n, np.nan) if mu3 is None \
            else np.asarray(mu3, dtype=np.float64)
        self.mu4 = np.full(n, np.nan) if mu4 is None \
            else np.asarray(mu4, dtype=np.float64)
        self.filtered = np.zeros(n, dtype=bool) if filtered is None \
            else np.asarray(filtered, dtype=bool)
        self.dates = list(dates) if dates is not None \
            else [str(x) for x in range(n)]
        for name in ('sk', 'ku', 'mu3', 'mu4', 'filtered'):
            if getattr(self, name).shape != (n,):
                raise MeasureError('Realized series column "%s" has the '
                                   'wrong length' % name)
        if len(self.dates) != n:
            raise MeasureError('Realized series has %d dates for %d rows'
                               % (len(self.dates), n))
        self.sk_neg, self.sk_pos = split_skewness(self.sk)

    def __len__(self):
        return self.rv.size

    def __getitem__(self, idx):
        if not isinstance(idx, slice):
            raise TypeError('Realized series only support slicing')
        return RealizedSeries(self.rv[idx], self.sk[idx], self.ku[idx],
                              self.mu3[idx], self.mu4[idx],
                              self.filtered[idx], self.dates[idx])

    @classmethod
    def constant_moments(cls, rv, sk=0.0, ku=3.0, dates=None):
        rv = np.asarray(rv, dtype=np.float64)
        return cls(rv, np.full(rv.size, float(sk)),
                   np.full(rv.size, float(ku)), dates=dates)

    def to_frame(self):
        return pd.DataFrame({
            'date': self.dates,
            'rv': self.rv,
            'mu3': self.mu3,
            'mu4': self.mu4,
            'sk': self.sk,
            'sk_neg': self.sk_neg,
            'sk_pos': self.sk_pos,
            'ku': self.ku,
            'filtered': self.filtered.astype(int),
        }, columns=MEASURE_COLUMNS)

    @classmethod
    def from_frame(cls, frame):
        missing = set(MEASURE_COLUMNS) - set(frame.columns)
        if missing:
            raise MeasureError('Measure table lacks columns: %s'
                               % ', '.join(sorted(missing)))
        return cls(frame['rv'].values, frame['sk'].values,
                   frame['ku'].values, frame['mu3'].values,
                   frame['mu4'].values,
                   frame['filtered'].values.astype(bool),
                   [str(x) for x in frame['date']])

    def to_csv(self, filename):
        self.to_frame().to_csv(filename, index=False, float_format='%.17g')

    @classmethod
    def from_csv(cls, filename):
        return cls.from_frame(pd.read_csv(filename, dtype={'date': str}))


def _flag(values, bounds):
    lo, hi = bounds
    with np.errstate(invalid='ignore'):
        return ~(np.isfinite(values) & (values > lo) & (values < hi))


def _fit_ar1(values, good):
    pairs = good[1:] & good[:-1]
    if np.count_nonzero(pairs) < 3:
        return None
    prev = values[:-1][pairs]
    cur = values[1:][pairs]
    mu = np.mean(values[good])
    dp = prev - mu
    denom = np.dot(dp, dp)
    if denom <= 0.0:
        return None
    phi = np.dot(dp, cur - mu) / denom
    if not np.isfinite(phi) or abs(phi) >= 0.999:
        return None
    return mu, phi


def _runs(mask):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return list(zip(starts.tolist(), ends.tolist()))


def interpolate_flagged(values, flagged, bounds):
    """Replaces the flagged entries of ``values`` by the conditional
    expectation of an AR(1) fitted on the unflagged entries, given the
    nearest unflagged anchors.  Falls back to linear interpolation when no
    stationary AR(1) can be fitted.
    """
    values = np.array(values, dtype=np.float64)
    good = ~flagged
    if not np.any(good):
        raise MeasureError('All values are outside %r; nothing to '
                           'interpolate from' % (bounds,))
    if not np.any(flagged):
        return values

    fit = _fit_ar1(values, good)
    positions = np.arange(values.size)
    linear = np.interp(positions, positions[good], values[good])
    n_total = values.size

    for start, end in _runs(flagged):
        left = start - 1
        right = end + 1
        has_left = left >= 0
        has_right = right < n_total
        if fit is None:
            values[start:end + 1] = linear[start:end + 1]
            continue
        mu, phi = fit
        if has_left and has_right:
            gap = right - left
            k = np.arange(1, gap, dtype=np.float64)
            a = values[left] - mu
            b = values[right] - mu
            denom = 1.0 - phi ** (2 * gap)
            values[start:end + 1] = mu + (
                (phi ** k - phi ** (2 * gap - k)) * a +
                (phi ** (gap - k) - phi ** (gap + k)) * b) / denom
        elif has_left:
            k = np.arange(1, end - left + 1, dtype=np.float64)
            values[start:end + 1] = mu + phi ** k * (values[left] - mu)
        else:
            k = np.arange(right - start, 0, -1, dtype=np.float64)
            values[start:end + 1] = mu + phi ** k * (values[right] - mu)

    lo, hi = bounds
    eps = 1e-8 * (hi - lo)
    values[flagged] = np.clip(values[flagged], lo + eps, hi - eps)
    return values


def filter_and_interpolate(series, sk_bounds=SK_BOUNDS, ku_bounds=KU_BOUNDS):
    """Flags skewness and kurtosis values outside their admissible ranges
    (or non-finite) and smooths them out.  Unflagged values pass through
    untouched, so applying the filter twice changes nothing.
    """
    if len(series) == 0:
        raise MeasureError('Cannot filter an empty realized series')
    sk_flag = _flag(series.sk, sk_bounds)
    ku_flag = _flag(series.ku, ku_bounds)
    sk = interpolate_flagged(series.sk, sk_flag, sk_bounds)
    ku = interpolate_flagged(series.ku, ku_flag, ku_bounds)
    return RealizedSeries(series.rv, sk, ku, series.mu3, series.mu4,
                          series.filtered | sk_flag | ku_flag,
                          series.dates)


def realized_series(days, kind='MED', tau=5, mean_correction=False):
    """Builds the filtered realized series for a stream of consecutive
    days.  The variance column uses estimator ``kind``; moments are the
    ``tau``-day Neuberger-Payne averages standardized with the matching
    average of the plain realized variance.  The first ``tau - 1`` days have
    no complete moment window and are interpolated by the filter.
    """
    days = list(days)
    if not days:
        raise MeasureError('No trading days given')
    if kind not in VARIANCE_KINDS:
        raise MeasureError('Unknown variance estimator "%s"' % kind)

    n_days = len(days)
    rv = np.array([realized_variance(day, kind) for day in days])
    plain_rv = rv if kind == 'RV' else \
        np.array([realized_variance(day, 'RV') for day in days])
    sums = np.array([np_day_sums(day) for day in days])
    means = np.array([np.sum(day.returns) for day in days])

    mu3 = np.full(n_days, np.nan)
    mu4 = np.full(n_days, np.nan)
    sk = np.full(n_days, np.nan)
    ku = np.full(n_days, np.nan)
    for t in range(tau - 1, n_days):
        window = slice(t - tau + 1, t + 1)
        mu3[t] = np.sum(sums[window, 0]) / tau
        mu4[t] = np.sum(sums[window, 1]) / tau
        mu2 = np.sum(plain_rv[window]) / tau
        mu1 = np.sum(means[window]) / tau if mean_correction else None
        try:
            sk[t], ku[t] = standardize_moments(mu2, mu3[t], mu4[t], mu1)
        except MeasureError:
            pass

    dates = [day.date if day.date is not None else str(day.day_index)
             for day in days]
    return filter_and_interpolate(RealizedSeries(rv, sk, ku, mu3, mu4,
                                                 dates=dates))
