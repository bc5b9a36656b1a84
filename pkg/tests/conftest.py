import os
import shutil
import tempfile

import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='Run the long Monte Carlo studies.')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long Monte Carlo study')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='function')
def rng(request):
    return np.random.Generator(np.random.Philox(key=1234))


@pytest.fixture(scope='function')
def tmpdir_path(request):
    path = tempfile.mkdtemp()
    def cleanup():
        try:
            shutil.rmtree(path)
        except (OSError, IOError):
            pass
    request.addfinalizer(cleanup)
    return path


@pytest.fixture(scope='function')
def garch_dgp(request):
    from tailrisk.simulation import DgpSpec
    return DgpSpec('garch_t', nu=8.0, seed=3)


@pytest.fixture(scope='function')
def daily_sim(request, garch_dgp):
    from tailrisk.simulation import simulate_daily
    return simulate_daily(garch_dgp, 600, alpha=0.05)


@pytest.fixture(scope='function')
def fast_options(request):
    from tailrisk.estimator import EstimatorOptions
    return EstimatorOptions(n_starts=300, m_keep=3, max_alternations=3,
                            maxiter=300, seed=5, threads=1)


@pytest.fixture(scope='function')
def write_intraday(request, tmpdir_path):
    """Writes rows of ``(date, slot_index, log_price)`` into a CSV in the
    temporary directory and returns its path.
    """
    def write(name, rows, header='date,slot_index,log_price'):
        fn = os.path.join(tmpdir_path, name)
        with open(fn, 'w') as f:
            f.write(header + '\n')
            for row in rows:
                f.write(','.join(str(x) for x in row) + '\n')
        return fn
    return write


@pytest.fixture(scope='function')
def toy_config(request, tmpdir_path):
    """A small configuration that runs the full pipeline in seconds."""
    from tailrisk.environment import Config
    ini = os.path.join(tmpdir_path, 'toy.ini')
    with open(ini, 'w') as f:
        f.write('\n'.join([
            '[run]',
            'seed = 11',
            'out = %s' % os.path.join(tmpdir_path, 'out'),
            'threads = 1',
            'alphas = 0.05',
            'models = add_sim.no.EM, mlt_sim.sim.ALS',
            '',
            '[measures]',
            'min_days = 300',
            '',
            '[estimator]',
            'starts = 200',
            'keep = 2',
            'max_alternations = 2',
            'maxiter = 200',
            '',
            '[forecast]',
            'windows = 300',
            'full_refit_every = 100',
            'warm_update_every = 50',
            '',
            '[backtest]',
            'esr_perturbations = 5',
            '',
            '[simulate]',
            'assets = 2',
            'days = 420',
            'slots = 12',
            '',
        ]))
    return Config(ini)
