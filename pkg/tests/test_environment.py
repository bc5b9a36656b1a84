import os

import pytest

from tailrisk.environment import Config, ConfigError, coerce_value


def write_ini(tmpdir_path, *lines):
    fn = os.path.join(tmpdir_path, 'test.ini')
    with open(fn, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    return fn


def test_defaults():
    config = Config()
    assert config['RUN']['alphas'] == [0.01, 0.025, 0.05]
    assert config['MEASURES']['scale'] == 100.0
    assert config['MEASURES']['kind'] == 'MED'
    assert config['ESTIMATOR']['starts'] == 50000
    assert config['BACKTEST']['esr_perturbations'] == 1000
    assert len(config.get_models(0.05)) == 18


def test_coerce_value():
    assert coerce_value('RUN', 'alphas', '0.01, 0.05') == [0.01, 0.05]
    assert coerce_value('RUN', 'models', ('all',)) == ['all']
    assert coerce_value('RUN', 'cache', 'off') is False
    assert coerce_value('RUN', 'seed', '17') == 17
    assert coerce_value('MEASURES', 'kind', 'RV') == 'RV'
    assert coerce_value('BACKTEST', 'level', '0.1') == 0.1
    assert coerce_value('RUN', 'threads', None) is None
    with pytest.raises(ConfigError):
        coerce_value('RUN', 'nope', '1')
    with pytest.raises(ConfigError):
        coerce_value('RUN', 'seed', 'abc')
    with pytest.raises(ConfigError):
        coerce_value('RUN', 'cache', 'maybe')


def test_ini_and_overrides(tmpdir_path):
    fn = write_ini(tmpdir_path, '[run]', 'seed = 3', 'alphas = 0.05',
                   '[forecast]', 'windows = 500, 1000')
    config = Config(fn)
    assert config['RUN']['seed'] == 3
    assert config['FORECAST']['windows'] == [500, 1000]
    config = Config(fn, {('RUN', 'seed'): 9, ('RUN', 'threads'): None})
    assert config['RUN']['seed'] == 9
    assert config['RUN']['threads'] is None


def test_invalid_configurations(tmpdir_path):
    with pytest.raises(ConfigError):
        Config(os.path.join(tmpdir_path, 'missing.ini'))
    with pytest.raises(ConfigError):
        Config(overrides={('RUN', 'models'): ''})
    with pytest.raises(ConfigError):
        Config(overrides={('RUN', 'alphas'): '1.5'})
    with pytest.raises(ConfigError):
        Config(overrides={('RUN', 'losses'): 'EM'})
    with pytest.raises(ConfigError):
        Config(overrides={('FORECAST', 'full_refit_every'): '120'})
    with pytest.raises(ConfigError):
        Config(overrides={('MEASURES', 'kind'): 'XYZ'})
    with pytest.raises(ConfigError):
        Config(overrides={('MEASURES', 'scale'): '0'})
    with pytest.raises(ConfigError):
        Config(write_ini(tmpdir_path, '[run]', 'colour = blue'))
    with pytest.raises(ConfigError):
        Config(overrides={('RUN', 'models'): 'bogus'}).get_models()


def test_derived_objects():
    config = Config(overrides={('RUN', 'seed'): 4, ('RUN', 'threads'): 2,
                               ('ESTIMATOR', 'starts'): 10})
    options = config.get_estimator_options()
    assert options.n_starts == 10 and options.seed == 4
    assert options.threads == 2
    rolling = config.get_rolling_config(750)
    assert rolling.window == 750
    assert rolling.full_refit_every == 500
    assert rolling.alphas == (0.01, 0.025, 0.05)


def test_section_hash():
    a = Config()
    b = Config(overrides={('BACKTEST', 'lags'): 5})
    assert a.section_hash('RUN') == b.section_hash('RUN')
    assert a.section_hash('BACKTEST') != b.section_hash('BACKTEST')
    assert a.to_json()['RUN']['seed'] == 1
