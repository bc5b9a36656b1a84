import os
import json

import numpy as np
import pandas as pd
import pytest

from tailrisk.datasource import IngestError
from tailrisk.environment import Config
from tailrisk.pipeline import STAGES, Pipeline, PipelineError, run_pipeline
from tailrisk.reporter import RecordingReporter
from tailrisk.simulation import write_simulation


@pytest.fixture(scope='function')
def simulated(request, toy_config, tmpdir_path):
    path = os.path.join(tmpdir_path, 'sim')
    write_simulation(toy_config, path)
    return os.path.join(path, 'intraday')


def test_full_pipeline(toy_config, simulated):
    with RecordingReporter() as recorder:
        pipeline = Pipeline(toy_config, inputs=[simulated])
        assert pipeline.run() == list(STAGES)
    assert [e['stage'] for e in recorder.events_of('start-stage')] == \
        list(STAGES)

    out = pipeline.output_path
    for rel in ('measures/asset01.csv', 'returns/asset02.csv',
                'measures/assets.json',
                'fits/asset01/add_sim.no.EM_0p05.json',
                'fits/asset02/mlt_sim.sim.ALS_0p05.json',
                'forecasts/300/asset01/mlt_sim.sim.ALS_0p05.csv',
                'backtests/backtests.csv', 'summary/median_loss_em.csv',
                'summary/average_rank_als.csv', 'summary/coverage.csv',
                'summary/non_rejection.csv', 'summary/parameters.csv',
                'manifest.json'):
        assert os.path.isfile(os.path.join(out, rel)), rel

    with open(os.path.join(out, 'fits', 'asset01',
                           'add_sim.no.EM_0p05.json')) as f:
        fit = json.load(f)
    assert [x['test'] for x in fit['backtests']] == ['DQ_IS_CC', 'DQ_IS_ID']
    assert fit['fit']['spec'] == 'add_sim.no.EM'
    assert fit['artifact']['spec'] == 'add_sim.no.EM'
    assert fit['artifact']['loss'] == 'EM'
    assert fit['artifact']['params'] == fit['fit']['params']
    assert fit['artifact']['window_meta']['days'] == 419
    artifacts = list(pipeline.load_artifacts())
    assert sorted(set(a for a, _ in artifacts)) == ['asset01', 'asset02']
    params = pd.read_csv(os.path.join(out, 'summary', 'parameters.csv'))
    assert sorted(params['model'].unique()) == ['add_sim.no.EM',
                                                'mlt_sim.sim.ALS']
    assert len(params) == sum(len(x.params.names) for _, x in artifacts)

    forecasts = pd.read_csv(os.path.join(
        out, 'forecasts', '300', 'asset01', 'add_sim.no.EM_0p05.csv'))
    assert len(forecasts) == 419 - 300

    backtests = pd.read_csv(os.path.join(out, 'backtests', 'backtests.csv'))
    assert len(backtests) == 2 * (3 + 7)

    with open(os.path.join(out, 'manifest.json')) as f:
        manifest = json.load(f)
    assert manifest['seed'] == 11
    assert sorted(manifest['stages']) == sorted(STAGES)
    assert all(x['status'] == 'ok' for x in manifest['stages'].values())

    again = Pipeline(toy_config, inputs=[simulated])
    assert again.run() == []
    assert again.manifest['stages'] == manifest['stages']

    changed = Config(toy_config.filename, {('BACKTEST', 'level'): '0.1'})
    assert Pipeline(changed, inputs=[simulated]).run() == \
        ['report']


def test_pipeline_records_failures(toy_config, simulated, tmpdir_path):
    config = Config(toy_config.filename, {('FORECAST', 'windows'): '1000',
                                          ('RUN', 'models'): 'add_sim.no.EM'})
    out = os.path.join(tmpdir_path, 'failing')
    with pytest.raises(PipelineError) as exc:
        run_pipeline(config, [simulated], out)
    assert exc.value.stage == 'report'

    pipeline = Pipeline(config, out, [simulated])
    assert pipeline.manifest['failed_stage'] == 'report'
    assert pipeline.manifest['stages']['report']['status'] == 'failed'
    assert pipeline.manifest['stages']['backtests']['status'] == 'ok'
    failure = pipeline.failure_controller.lookup_failure('report')
    assert failure.stage == 'report'
    assert 'No forecast records' in failure.data['exception']


def test_stage_order_is_enforced(toy_config, simulated, tmpdir_path):
    pipeline = Pipeline(toy_config, os.path.join(tmpdir_path, 'fresh'),
                        [simulated])
    with pytest.raises(PipelineError):
        pipeline.run_stage('fits')
    with pytest.raises(PipelineError):
        pipeline.run('publish')


def test_missing_input(toy_config, tmpdir_path):
    with pytest.raises(IngestError):
        run_pipeline(toy_config, [os.path.join(tmpdir_path, 'nothing')],
                     until='measures')
    with pytest.raises(PipelineError) as exc:
        run_pipeline(toy_config, until='measures')
    assert exc.value.stage == 'measures'


def test_simulated_files_ingest_back(toy_config, tmpdir_path):
    from tailrisk.datasource import ingest
    path = os.path.join(tmpdir_path, 'sim')
    write_simulation(toy_config, path)
    scale = toy_config['MEASURES']['scale']
    result = ingest(os.path.join(path, 'intraday'), scale)
    assert [a.name for a in result] == ['asset01', 'asset02']
    for asset in result:
        truth = pd.read_csv(os.path.join(path, 'truth', asset.name + '.csv'),
                            dtype={'date': str})
        assert asset.gaps == []
        assert asset.dates == truth['date'].tolist()[1:]
        assert np.allclose(asset.returns, truth['return'].values[1:],
                           rtol=0.0, atol=1e-9)


def test_artifacts_do_not_depend_on_threads(toy_config, simulated,
                                            tmpdir_path):
    checksums = []
    for threads in (1, 3):
        config = Config(toy_config.filename, {('RUN', 'threads'): threads})
        out = os.path.join(tmpdir_path, 'threads%d' % threads)
        pipeline = run_pipeline(config, [simulated], out)
        checksums.append(dict((stage, record['outputs']) for stage, record
                              in pipeline.manifest['stages'].items()))
    assert sorted(checksums[0]) == sorted(STAGES)
    assert checksums[0] == checksums[1]
