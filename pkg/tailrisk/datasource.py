"""Reading intraday price files.

Every asset is one CSV file with the columns ``date, slot_index,
log_price`` and a header row.  The asset name is the file name without its
extension.
"""
import os

import numpy as np
import pandas as pd

from tailrisk.realized import IntradayDay, MeasureError, realized_series
from tailrisk.reporter import reporter
from tailrisk.utils import TailriskError


INTRADAY_COLUMNS = ['date', 'slot_index', 'log_price']

#: the minimum number of daily returns an asset must provide
MIN_DAYS = 500


class IngestError(TailriskError):

    def __init__(self, message, path=None, lines=None):
        if path is not None:
            message = '%s: %s' % (path, message)
        if lines:
            shown = ', '.join(str(x) for x in lines[:10])
            if len(lines) > 10:
                shown += ', ...'
            message = '%s (line %s)' % (message, shown)
        TailriskError.__init__(self, message)
        self.path = path
        self.lines = list(lines or ())


def _lines(mask):
    # header is line 1
    return [int(x) + 2 for x in np.flatnonzero(np.asarray(mask))]


class AssetData(object):
    """Validated intraday grids of one asset.  ``returns[i]`` is the
    close-to-close return into ``days[i + 1]``.
    """

    def __init__(self, name, days, gaps=None, source=None):
        self.name = name
        self.days = days
        self.gaps = list(gaps or ())
        self.source = source
        closes = np.array([day.close for day in days])
        self.returns = np.diff(closes)

    @property
    def dates(self):
        return [day.date for day in self.days[1:]]

    def __len__(self):
        return len(self.days)

    def measures(self, kind='MED', tau=5, mean_correction=False):
        """Realized measures aligned with :attr:`returns`."""
        if len(self.days) < 2:
            raise IngestError('Asset "%s" has no daily return' % self.name)
        try:
            series = realized_series(self.days, kind, tau, mean_correction)
        except MeasureError as e:
            raise IngestError('Realized measures of "%s" failed: %s'
                              % (self.name, e))
        return series[1:]

    def returns_frame(self):
        return pd.DataFrame({'date': self.dates, 'return': self.returns},
                            columns=['date', 'return'])


def _numeric_column(frame, column, path):
    values = pd.to_numeric(frame[column], errors='coerce')
    bad = values.isna() | ~np.isfinite(values.fillna(0.0))
    if bad.any():
        raise IngestError('Malformed %s' % column, path, _lines(bad))
    return values


def read_intraday_frame(path):
    """Reads and validates one intraday file.  Returns the table with
    parsed columns in file order.
    """
    try:
        frame = pd.read_csv(path, dtype={'date': str})
    except (IOError, OSError, ValueError, pd.errors.ParserError) as e:
        raise IngestError('Could not read file: %s' % e, path)
    missing = [c for c in INTRADAY_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestError('Missing columns: %s' % ', '.join(missing), path)
    if len(frame) == 0:
        raise IngestError('No rows', path)

    no_date = frame['date'].isna()
    if no_date.any():
        raise IngestError('Missing date', path, _lines(no_date))
    parsed = pd.to_datetime(frame['date'], errors='coerce')
    if parsed.isna().any():
        raise IngestError('Malformed date', path, _lines(parsed.isna()))
    slots = _numeric_column(frame, 'slot_index', path)
    not_int = (slots != np.floor(slots)) | (slots < 0)
    if not_int.any():
        raise IngestError('Slot index must be a non-negative integer', path,
                          _lines(not_int))
    prices = _numeric_column(frame, 'log_price', path)

    frame = pd.DataFrame({
        'date': frame['date'].str.strip(),
        'when': parsed,
        'slot_index': slots.astype(np.int64),
        'log_price': prices.astype(np.float64),
    })
    dup = frame.duplicated(['when', 'slot_index'], keep='first')
    if dup.any():
        raise IngestError('Duplicate (date, slot_index) row', path,
                          _lines(dup))
    backwards = frame['when'].diff() < pd.Timedelta(0)
    if backwards.any():
        raise IngestError('Dates are not in increasing order', path,
                          _lines(backwards))
    same_day = frame['when'].diff() == pd.Timedelta(0)
    slot_back = same_day & (frame['slot_index'].diff() <= 0)
    if slot_back.any():
        raise IngestError('Slots are not in increasing order', path,
                          _lines(slot_back))
    return frame


def read_asset(path, scale=1.0, name=None):
    """Builds the trading days of one file.  Days with a hole in their
    slot grid are kept and listed in ``gaps``; days with fewer than three
    prices cannot carry realized measures and are dropped (also listed).
    """
    frame = read_intraday_frame(path)
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    days = []
    gaps = []
    prior = None
    for date, group in frame.groupby('when', sort=True):
        label = group['date'].iloc[0]
        slot_idx = group['slot_index'].values
        if slot_idx[0] != 0 or np.any(np.diff(slot_idx) != 1):
            gaps.append(label)
        prices = group['log_price'].values * scale
        if prices.size < 3:
            if label not in gaps:
                gaps.append(label)
            continue
        days.append(IntradayDay(len(days), prices, prior_close=prior,
                                date=label))
        prior = days[-1].close
    if gaps:
        reporter.report_generic('%s: %d day(s) with gaps' % (name,
                                                             len(gaps)))
    return AssetData(name, days, gaps, source=path)


def find_intraday_files(paths):
    rv = []
    for path in paths:
        if os.path.isdir(path):
            rv.extend(sorted(os.path.join(path, x) for x in os.listdir(path)
                             if x.endswith('.csv')))
        elif os.path.isfile(path):
            rv.append(path)
        else:
            raise IngestError('No such file or directory', path)
    if not rv:
        raise IngestError('No intraday files found')
    return rv


class IngestResult(object):

    def __init__(self, assets, excluded):
        self.assets = assets
        self.excluded = excluded

    def __iter__(self):
        return iter(self.assets)

    def __len__(self):
        return len(self.assets)


def ingest(paths, scale=1.0, min_days=MIN_DAYS):
    """Reads every intraday file under ``paths``.  Assets with fewer than
    ``min_days`` daily returns are excluded with the reason ``min-length``.
    """
    if isinstance(paths, str):
        paths = [paths]
    assets = []
    excluded = {}
    for path in find_intraday_files(paths):
        asset = read_asset(path, scale)
        if asset.returns.size < min_days:
            excluded[asset.name] = 'min-length'
            reporter.report_excluded(asset.name, 'min-length')
            continue
        assets.append(asset)
    return IngestResult(assets, excluded)
