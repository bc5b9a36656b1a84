import os
import json

import pytest
from click.testing import CliRunner

from tailrisk import __version__
from tailrisk.cli import cli


@pytest.fixture(scope='function')
def runner(request):
    return CliRunner()


def test_version(runner):
    result = runner.invoke(cli, ['--version'])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_help_lists_commands(runner):
    result = runner.invoke(cli, ['--help'])
    assert result.exit_code == 0
    for name in ('measures', 'fit', 'forecast', 'backtest', 'report',
                 'simulate', 'dev'):
        assert name in result.output


def test_simulate(runner, toy_config, tmpdir_path):
    path = os.path.join(tmpdir_path, 'sim')
    result = runner.invoke(cli, ['--config', toy_config.filename,
                                 'simulate', path, '--assets', '1',
                                 '--days', '30'])
    assert result.exit_code == 0, result.output
    assert 'Simulated 1 asset(s)' in result.output
    with open(os.path.join(path, 'simulation.json')) as f:
        manifest = json.load(f)
    assert manifest['assets'] == ['asset01']
    assert manifest['config']['SIMULATE']['days'] == 30


def test_bad_input_exits_with_two(runner, toy_config, tmpdir_path):
    result = runner.invoke(cli, ['--config', toy_config.filename,
                                 'measures',
                                 os.path.join(tmpdir_path, 'missing')])
    assert result.exit_code == 2
    assert 'Error:' in result.output

    result = runner.invoke(cli, ['--config',
                                 os.path.join(tmpdir_path, 'none.ini'),
                                 'report'])
    assert result.exit_code == 2

    result = runner.invoke(cli, ['--config', toy_config.filename,
                                 'fit', '--model', 'add_sim.no.XX'])
    assert result.exit_code == 2

    result = runner.invoke(cli, ['--config', toy_config.filename,
                                 'simulate', '--days', '1'])
    assert result.exit_code == 2


def test_failed_stage_exits_with_three(runner, toy_config, tmpdir_path):
    with open(toy_config.filename) as f:
        ini = f.read()
    ini = ini.replace('windows = 300', 'windows = 1000').replace(
        'models = add_sim.no.EM, mlt_sim.sim.ALS', 'models = add_sim.no.EM')
    fn = os.path.join(tmpdir_path, 'long.ini')
    with open(fn, 'w') as f:
        f.write(ini)
    sim = os.path.join(tmpdir_path, 'sim')
    result = runner.invoke(cli, ['--config', fn, 'simulate', sim])
    assert result.exit_code == 0, result.output
    result = runner.invoke(cli, ['--config', fn, 'report',
                                 os.path.join(sim, 'intraday')])
    assert result.exit_code == 3
    assert 'report' in result.output


def test_size_study_arguments(runner, toy_config):
    result = runner.invoke(cli, ['--config', toy_config.filename, 'dev',
                                 'size-study', 'XYZ'])
    assert result.exit_code == 2
    assert 'Unknown backtest' in result.output
    result = runner.invoke(cli, ['--config', toy_config.filename, 'dev',
                                 'size-study', 'DQ_OOS_CC', '--forecaster',
                                 'nonsense'])
    assert result.exit_code == 2
    result = runner.invoke(cli, ['--config', toy_config.filename, 'dev',
                                 'size-study', 'DQ_OOS_CC', '--reps', '10'])
    assert result.exit_code == 2
    assert 'replications' in result.output


def test_size_study_json(runner, toy_config):
    result = runner.invoke(cli, ['--config', toy_config.filename, 'dev',
                                 'size-study', 'DQ_OOS_ID', '--reps', '100',
                                 '--days', '250', '--json'])
    assert result.exit_code == 0, result.output
    # progress lines go to stderr which the runner may mix in
    text = result.output
    data = json.loads(text[text.index('{\n'):])
    assert data['test'] == 'DQ_OOS_ID'
    assert data['reps'] == 100
    assert 0.0 <= data['rate'] <= 1.0


def test_estimator_flags_reach_the_config(runner, toy_config, monkeypatch):
    from tailrisk import pipeline
    seen = []

    class Finished(object):
        def path(self, stage):
            return stage

    def fake_run(config, inputs=None, until=None):
        seen.append((until, config['ESTIMATOR']))
        return Finished()
    monkeypatch.setattr(pipeline, 'run_pipeline', fake_run)

    result = runner.invoke(cli, ['--config', toy_config.filename, 'fit',
                                 '--starts', '30', '--keep', '3'])
    assert result.exit_code == 0, result.output
    result = runner.invoke(cli, ['--config', toy_config.filename,
                                 'forecast', '--starts', '40', '--keep',
                                 '4'])
    assert result.exit_code == 0, result.output
    assert [(until, est['starts'], est['keep'])
            for until, est in seen] == [('fits', 30, 3),
                                        ('forecasts', 40, 4)]

    result = runner.invoke(cli, ['--config', toy_config.filename,
                                 'forecast', '--keep', '0'])
    assert result.exit_code == 2
    assert 'estimator.keep' in result.output


def test_measures_help(runner):
    result = runner.invoke(cli, ['measures', '--help'])
    assert result.exit_code == 0
    assert 'Days the higher moments are averaged over' in result.output
