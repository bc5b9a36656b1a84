"""The staged pipeline behind the command line.

Stages run in a fixed order (measures, fits, forecasts, backtests,
report).  Each writes its files into the artifact directory and records
their checksums together with the hash of the configuration it depends on
and the checksums of its inputs in ``manifest.json``.  A stage whose
record still matches is skipped.
"""
import os
import sys
import json
import errno

import numpy as np
import pandas as pd

from tailrisk import __version__
from tailrisk.backtests import dq_in_sample, run_backtests
from tailrisk.datasource import IngestError, find_intraday_files, ingest
from tailrisk.environment import ConfigError
from tailrisk.failures import FailureController
from tailrisk.forecasting import ForecastRecord, coverage_table, \
     in_sample_analysis, loss_distribution_table, loss_summary, \
     rolling_forecast
from tailrisk.models import ModelArtifact, gradient_path, filter_path
from tailrisk.realized import RealizedSeries
from tailrisk.reporter import reporter
from tailrisk.utils import TailriskError, atomic_open, dump_json, \
     file_checksum, get_structure_hash


STAGES = ('measures', 'fits', 'forecasts', 'backtests', 'report')

# configuration sections every stage depends on (on top of the earlier
# stages' outputs)
_stage_sections = {
    'measures': ('MEASURES',),
    'fits': ('RUN', 'ESTIMATOR', 'BACKTEST'),
    'forecasts': ('RUN', 'ESTIMATOR', 'FORECAST'),
    'backtests': ('RUN', 'BACKTEST'),
    'report': ('BACKTEST',),
}

# run settings that do not change results
_volatile_keys = ('out', 'threads', 'cache', 'intraday')

# only the summary tables read the significance level
_report_keys = ('level',)

LOSS_NAMES = ('EM', 'ALS', 'FZ0')


class PipelineError(TailriskError):

    def __init__(self, message, stage=None):
        TailriskError.__init__(self, message)
        self.stage = stage


def _model_filename(spec):
    return '%s_%s' % (spec.key, ('%g' % spec.alpha).replace('.', 'p'))


class Pipeline(object):

    def __init__(self, config, output_path=None, inputs=None):
        self.config = config
        self.output_path = os.path.abspath(
            output_path or config['RUN']['out'])
        self.inputs = list(inputs or ())
        if not self.inputs and config['RUN']['intraday']:
            self.inputs = [config['RUN']['intraday']]
        self.manifest_filename = os.path.join(self.output_path,
                                              'manifest.json')
        self.failure_controller = FailureController(self.output_path)
        self.manifest = self.load_manifest()

    # -- bookkeeping --------------------------------------------------

    def load_manifest(self):
        try:
            with open(self.manifest_filename, 'r') as f:
                data = json.load(f)
        except IOError as e:
            if e.errno != errno.ENOENT:
                raise
            data = {}
        except ValueError:
            data = {}
        data.setdefault('stages', {})
        return data

    def write_manifest(self):
        self.manifest['version'] = __version__
        self.manifest['config'] = self.config.to_json()
        self.manifest['seed'] = self.config['RUN']['seed']
        self.ensure_dir(self.output_path)
        with atomic_open(self.manifest_filename, 'w') as f:
            dump_json(self.manifest, f)

    def ensure_dir(self, path):
        try:
            os.makedirs(path)
        except OSError:
            pass

    def path(self, *parts):
        return os.path.join(self.output_path, *parts)

    def relpath(self, filename):
        return os.path.relpath(filename, self.output_path).replace(
            os.sep, '/')

    def stage_config_hash(self, stage):
        values = {}
        for section in _stage_sections[stage]:
            items = dict(self.config[section])
            if section == 'RUN':
                for key in _volatile_keys:
                    items.pop(key, None)
            elif section == 'BACKTEST' and stage != 'report':
                for key in _report_keys:
                    items.pop(key, None)
            values[section] = items
        return get_structure_hash(values)

    def hash_files(self, filenames):
        return dict((self.relpath(fn), file_checksum(fn))
                    for fn in sorted(filenames))

    def stage_input_hashes(self, stage):
        if stage == 'measures':
            if not self.inputs:
                raise PipelineError('No intraday input given', stage)
            files = find_intraday_files(self.inputs)
            return dict((os.path.abspath(fn), file_checksum(fn))
                        for fn in files)
        previous = STAGES[STAGES.index(stage) - 1]
        record = self.manifest['stages'].get(previous)
        if record is None or record.get('status') != 'ok':
            raise PipelineError('Stage "%s" needs stage "%s" to have run'
                                % (stage, previous), stage)
        rv = dict(record['outputs'])
        if stage == 'report':
            for name in ('fits', 'forecasts'):
                rv.update(self.manifest['stages'][name]['outputs'])
        return rv

    def is_current(self, stage, config_hash, input_hashes):
        if not self.config['RUN']['cache']:
            return False
        record = self.manifest['stages'].get(stage)
        if record is None or record.get('status') != 'ok':
            return False
        if record.get('config_hash') != config_hash or \
           record.get('inputs') != input_hashes:
            return False
        for rel, checksum in record['outputs'].items():
            fn = self.path(rel)
            if not os.path.isfile(fn) or file_checksum(fn) != checksum:
                return False
        return True

    def run_stage(self, stage):
        config_hash = self.stage_config_hash(stage)
        input_hashes = self.stage_input_hashes(stage)
        if self.is_current(stage, config_hash, input_hashes):
            reporter.report_cached(stage)
            return False
        with reporter.stage(stage):
            try:
                outputs = getattr(self, 'build_%s' % stage)()
            except Exception as e:
                exc_info = sys.exc_info()
                self.failure_controller.store_failure(
                    stage, exc_info, {'config_hash': config_hash})
                self.manifest['stages'][stage] = {
                    'status': 'failed',
                    'config_hash': config_hash,
                    'inputs': input_hashes,
                    'outputs': {},
                    'error': str(e),
                }
                self.manifest['failed_stage'] = stage
                self.write_manifest()
                if isinstance(e, TailriskError) and \
                   not isinstance(e, (IngestError, ConfigError)):
                    raise PipelineError('Stage "%s" failed: %s'
                                        % (stage, e), stage)
                raise
        self.failure_controller.clear_failure(stage)
        self.manifest['stages'][stage] = {
            'status': 'ok',
            'config_hash': config_hash,
            'inputs': input_hashes,
            'outputs': self.hash_files(outputs),
        }
        self.manifest.pop('failed_stage', None)
        self.write_manifest()
        return True

    def run(self, until='report'):
        """Runs all stages up to and including ``until``.  Returns the
        names of the stages that were (re)computed.
        """
        if until not in STAGES:
            raise PipelineError('Unknown stage "%s"' % until)
        self.config.get_models()
        rv = []
        for stage in STAGES[:STAGES.index(until) + 1]:
            if self.run_stage(stage):
                rv.append(stage)
        return rv

    # -- loading artifacts ----------------------------------------------

    def iter_assets(self):
        with open(self.path('measures', 'assets.json'), 'r') as f:
            data = json.load(f)
        for name in data['assets']:
            yield name

    def load_asset(self, name):
        measures = RealizedSeries.from_csv(self.path('measures',
                                                     name + '.csv'))
        frame = pd.read_csv(self.path('returns', name + '.csv'),
                            dtype={'date': str})
        returns = frame['return'].values.astype(np.float64)
        if len(measures) != returns.size:
            raise PipelineError('Measures and returns of "%s" are not '
                                'aligned' % name)
        return returns, measures

    def iter_specs(self):
        for alpha in self.config['RUN']['alphas']:
            for spec in self.config.get_models(alpha):
                yield spec

    def load_records(self):
        record = self.manifest['stages'].get('forecasts')
        if record is None:
            raise PipelineError('No forecasts available')
        for rel in sorted(record['outputs']):
            if rel.endswith('.csv'):
                yield ForecastRecord.from_csv(self.path(rel))

    def load_artifacts(self):
        """The fitted models of the fits stage, failed fits left out."""
        record = self.manifest['stages'].get('fits')
        if record is None:
            raise PipelineError('No fits available')
        for rel in sorted(record['outputs']):
            with open(self.path(rel), 'r') as f:
                data = json.load(f)
            if data.get('artifact') is not None:
                yield data['asset'], ModelArtifact.from_json(data['artifact'])

    def write_frame(self, frame, *parts):
        fn = self.path(*parts)
        self.ensure_dir(os.path.dirname(fn))
        with atomic_open(fn, 'w') as f:
            frame.to_csv(f, index=False, float_format='%.17g')
        return fn

    def write_json(self, data, *parts):
        fn = self.path(*parts)
        self.ensure_dir(os.path.dirname(fn))
        with atomic_open(fn, 'w') as f:
            dump_json(data, f)
        return fn

    # -- stages ---------------------------------------------------------

    def build_measures(self):
        m = self.config['MEASURES']
        result = ingest(self.inputs, scale=m['scale'],
                        min_days=m['min_days'])
        outputs = []
        names = []
        for asset in result:
            with reporter.process_asset(asset.name):
                measures = asset.measures(m['kind'], m['tau'],
                                          m['mean_correction'])
                fn = self.path('measures', asset.name + '.csv')
                self.ensure_dir(os.path.dirname(fn))
                with atomic_open(fn, 'w') as f:
                    measures.to_frame().to_csv(f, index=False,
                                               float_format='%.17g')
                outputs.append(fn)
                outputs.append(self.write_frame(asset.returns_frame(),
                                                'returns',
                                                asset.name + '.csv'))
                names.append(asset.name)
        outputs.append(self.write_json({
            'assets': names,
            'excluded': result.excluded,
        }, 'measures', 'assets.json'))
        return outputs

    def build_fits(self):
        options = self.config.get_estimator_options()
        lags = self.config['BACKTEST']['lags']
        outputs = []
        for name in self.iter_assets():
            returns, measures = self.load_asset(name)
            with reporter.process_asset(name):
                for spec in self.iter_specs():
                    result = in_sample_analysis(spec, returns, measures,
                                                options, asset=name)
                    data = result.to_json()
                    data['backtests'] = self._in_sample_backtests(
                        result, returns, measures, options.burn_in, lags)
                    outputs.append(self.write_json(
                        data, 'fits', name, _model_filename(spec) + '.json'))
        return outputs

    def _in_sample_backtests(self, result, returns, measures, burn_in,
                             lags):
        spec = result.spec
        if result.failed or spec.loss != 'EM':
            return []
        path = filter_path(spec, result.fit.params, returns, measures)
        grad_v, _ = gradient_path(spec, result.fit.params, returns,
                                  measures)
        b = burn_in
        rv = []
        for variant in ('CC', 'ID'):
            report = dq_in_sample(path.v[b:], grad_v[b:], returns[b:],
                                  spec.alpha, variant, lags)
            reporter.report_backtest(report)
            rv.append(report.to_json())
        return rv

    def build_forecasts(self):
        options = self.config.get_estimator_options()
        outputs = []
        for window in self.config['FORECAST']['windows']:
            rolling = self.config.get_rolling_config(window)
            for name in self.iter_assets():
                returns, measures = self.load_asset(name)
                if returns.size < window + 1:
                    reporter.report_excluded(name, 'shorter than window %d'
                                             % window)
                    continue
                with reporter.process_asset(name):
                    for spec in self.iter_specs():
                        record = rolling_forecast(spec, returns, measures,
                                                  rolling, options,
                                                  asset=name)
                        fn = self.path('forecasts', str(window), name,
                                       _model_filename(spec) + '.csv')
                        self.ensure_dir(os.path.dirname(fn))
                        with atomic_open(fn, 'w') as f:
                            record.to_frame().to_csv(f, index=False,
                                                     float_format='%.17g')
                        outputs.append(fn)
        return outputs

    def build_backtests(self):
        bt = self.config['BACKTEST']
        options = self.config.get_estimator_options()
        rows = []
        for record in self.load_records():
            returns, v, e = record.valid_part()
            reports = run_backtests(
                returns, v, e, record.alpha, q=bt['lags'],
                nw_lags=bt['nw_lags'], loss=bt['esr_loss'],
                seed=self.config['RUN']['seed'],
                perturbations=bt['esr_perturbations'], options=options)
            for report in reports:
                reporter.report_backtest(report)
                row = report.to_json()
                row.pop('meta')
                row.update(asset=record.asset, model=record.spec.key,
                           alpha=record.alpha, window=record.window)
                rows.append(row)
        columns = ['asset', 'model', 'alpha', 'window', 'test', 'statistic',
                   'df', 'p_value', 'valid', 'failure_reason']
        frame = pd.DataFrame(rows, columns=columns)
        return [self.write_frame(frame, 'backtests', 'backtests.csv'),
                self.write_json(rows, 'backtests', 'backtests.json')]

    def build_report(self):
        records = list(self.load_records())
        if not records:
            raise PipelineError('No forecast records to report on',
                                'report')
        outputs = []
        for loss in LOSS_NAMES:
            table = loss_distribution_table(records, loss)
            if len(table) == 0:
                continue
            medians, ranks = loss_summary(records, loss)
            key = loss.lower()
            outputs.append(self.write_frame(medians, 'summary',
                                            'median_loss_%s.csv' % key))
            outputs.append(self.write_frame(ranks, 'summary',
                                            'average_rank_%s.csv' % key))
            outputs.append(self.write_frame(table, 'summary',
                                            'loss_%s.csv' % key))
        outputs.append(self.write_frame(coverage_table(records), 'summary',
                                        'coverage.csv'))
        outputs.append(self.write_frame(self.non_rejection_table(),
                                        'summary', 'non_rejection.csv'))
        outputs.append(self.write_frame(self.parameter_table(), 'summary',
                                        'parameters.csv'))
        return outputs

    def parameter_table(self):
        rows = []
        for asset, artifact in self.load_artifacts():
            for name, value in zip(artifact.params.names,
                                   artifact.params.values):
                rows.append({
                    'asset': asset,
                    'model': artifact.spec.key,
                    'alpha': artifact.spec.alpha,
                    'param': name,
                    'value': float(value),
                    'days': artifact.window_meta.get('days'),
                })
        return pd.DataFrame(rows, columns=['asset', 'model', 'alpha', 'param',
                                           'value', 'days'])

    def non_rejection_table(self):
        level = self.config['BACKTEST']['level']
        frame = pd.read_csv(self.path('backtests', 'backtests.csv'),
                            dtype={'asset': str, 'model': str})
        rows = []
        for key, group in frame.groupby(['model', 'alpha', 'window', 'test'],
                                        sort=True):
            valid = group[group['valid'].astype(bool)]
            rows.append({
                'model': key[0],
                'alpha': key[1],
                'window': key[2],
                'test': key[3],
                'non_rejection': float(np.mean(valid['p_value'] >= level))
                if len(valid) else np.nan,
                'valid': len(valid),
                'invalid': len(group) - len(valid),
            })
        return pd.DataFrame(rows, columns=['model', 'alpha', 'window', 'test',
                                           'non_rejection', 'valid',
                                           'invalid'])


def run_pipeline(config, inputs=None, output_path=None, until='report'):
    """Runs the pipeline for a resolved configuration and returns the
    :class:`Pipeline` (its manifest lists every artifact).
    """
    pipeline = Pipeline(config, output_path, inputs)
    pipeline.run(until)
    return pipeline
