import os
import copy

from inifile import IniFile

from tailrisk.utils import TailriskError, bool_from_string, \
     get_structure_hash


DEFAULT_CONFIG = {
    'RUN': {
        'seed': 1,
        'out': 'tailrisk-out',
        'threads': None,
        'alphas': [0.01, 0.025, 0.05],
        'models': ['all'],
        'cache': True,
        'intraday': None,
        'losses': ['ALS'],
    },
    'MEASURES': {
        # variance fed to the models; the moments are standardized with RV
        'kind': 'MED',
        'tau': 5,
        'mean_correction': False,
        'min_days': 500,
        # log-prices are multiplied by this before anything is computed
        'scale': 100.0,
    },
    'ESTIMATOR': {
        'starts': 50000,
        'keep': 10,
        'max_alternations': 20,
        'ftol': 1e-8,
        'xtol': 1e-6,
        'maxiter': 500,
        'burn_in': 50,
    },
    'FORECAST': {
        'windows': [1000],
        'full_refit_every': 500,
        'warm_update_every': 50,
    },
    'BACKTEST': {
        'lags': 4,
        'nw_lags': 20,
        'level': 0.05,
        'esr_perturbations': 1000,
        'esr_loss': 'FZ0',
    },
    'SIMULATE': {
        'kind': 'garch_t',
        'assets': 2,
        'days': 1200,
        'slots': 78,
        'fine_ratio': 10,
        'omega': 0.05,
        'alpha_g': 0.10,
        'beta': 0.85,
        'nu': 8.0,
        'sigma': 1.0,
        'kappa': 5.0,
        'xi': 0.0,
    },
}

_INT_KEYS = set([
    ('RUN', 'seed'), ('RUN', 'threads'), ('MEASURES', 'tau'),
    ('MEASURES', 'min_days'), ('ESTIMATOR', 'starts'), ('ESTIMATOR', 'keep'),
    ('ESTIMATOR', 'max_alternations'), ('ESTIMATOR', 'maxiter'),
    ('ESTIMATOR', 'burn_in'), ('FORECAST', 'full_refit_every'),
    ('FORECAST', 'warm_update_every'), ('BACKTEST', 'lags'),
    ('BACKTEST', 'nw_lags'), ('BACKTEST', 'esr_perturbations'),
    ('SIMULATE', 'assets'), ('SIMULATE', 'days'), ('SIMULATE', 'slots'),
    ('SIMULATE', 'fine_ratio'),
])
_BOOL_KEYS = set([('RUN', 'cache'), ('MEASURES', 'mean_correction')])
_LIST_KEYS = {
    ('RUN', 'alphas'): float,
    ('RUN', 'models'): str,
    ('RUN', 'losses'): str,
    ('FORECAST', 'windows'): int,
}
_STRING_KEYS = set([('RUN', 'out'), ('RUN', 'intraday'),
                    ('MEASURES', 'kind'), ('SIMULATE', 'kind'),
                    ('BACKTEST', 'esr_loss')])


class ConfigError(TailriskError):
    pass


def coerce_value(section, key, value):
    """Converts a raw string (from an INI file or the command line) into
    the type the default for this key has.
    """
    ident = (section, key)
    if value is None:
        return None
    if section not in DEFAULT_CONFIG or key not in DEFAULT_CONFIG[section]:
        raise ConfigError('Unknown configuration key "%s.%s"' % (
            section.lower(), key))
    try:
        if ident in _LIST_KEYS:
            if isinstance(value, str):
                value = [x.strip() for x in value.split(',') if x.strip()]
            return [_LIST_KEYS[ident](x) for x in value]
        if ident in _BOOL_KEYS:
            rv = bool_from_string(value)
            if rv is None:
                raise ValueError(value)
            return rv
        if ident in _INT_KEYS:
            return int(value)
        if ident in _STRING_KEYS:
            return str(value)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError('Invalid value for "%s.%s": %r' % (
            section.lower(), key, value))


def update_config_from_ini(config, inifile):
    for section in config:
        for key, value in inifile.section_as_dict(section.lower()).items():
            config[section][key] = coerce_value(section, key, value)


class Config(object):
    """The layered configuration: defaults, then an optional INI file, then
    explicit overrides (usually from the command line).
    """

    def __init__(self, filename=None, overrides=None):
        self.filename = filename
        self.values = copy.deepcopy(DEFAULT_CONFIG)

        if filename is not None:
            if not os.path.isfile(filename):
                raise ConfigError('Config file "%s" does not exist' %
                                  filename)
            update_config_from_ini(self.values, IniFile(filename))

        for (section, key), value in (overrides or {}).items():
            if value is not None:
                self.values[section][key] = coerce_value(section, key, value)
        self.validate()

    def __getitem__(self, name):
        return self.values[name]

    def validate(self):
        run = self.values['RUN']
        for alpha in run['alphas']:
            if not 0.0 < alpha < 1.0:
                raise ConfigError('Probability level out of range: %r'
                                  % alpha)
        if not run['models']:
            raise ConfigError('No models selected.')
        for loss in run['losses']:
            if loss not in ('ALS', 'FZ0'):
                raise ConfigError('run.losses only takes ALS and FZ0, '
                                  'got "%s"' % loss)
        if self.values['BACKTEST']['esr_loss'] not in ('ALS', 'FZ0'):
            raise ConfigError('backtest.esr_loss must be ALS or FZ0')
        if not self.values['MEASURES']['scale'] > 0.0:
            raise ConfigError('measures.scale must be positive')
        fc = self.values['FORECAST']
        if fc['warm_update_every'] <= 0 or fc['full_refit_every'] <= 0 or \
           fc['full_refit_every'] % fc['warm_update_every'] != 0:
            raise ConfigError('forecast.warm_update_every must divide '
                              'forecast.full_refit_every')
        if self.values['MEASURES']['kind'] not in \
           ('RV', 'BPV', 'SV_POS', 'SV_NEG', 'MED'):
            raise ConfigError('Unknown variance estimator "%s"' %
                              self.values['MEASURES']['kind'])
        est = self.values['ESTIMATOR']
        if est['starts'] < 1 or est['keep'] < 1:
            raise ConfigError('estimator.starts and estimator.keep must '
                              'be positive')

    def get_models(self, alpha=0.05):
        from tailrisk.models import parse_model_selection
        run = self.values['RUN']
        try:
            return parse_model_selection(run['models'], alpha,
                                         tuple(run['losses']))
        except TailriskError as e:
            raise ConfigError(str(e))

    def get_rolling_config(self, window):
        from tailrisk.forecasting import RollingConfig
        fc = self.values['FORECAST']
        return RollingConfig(window=window,
                             full_refit_every=fc['full_refit_every'],
                             warm_update_every=fc['warm_update_every'],
                             alphas=tuple(self.values['RUN']['alphas']))

    def get_estimator_options(self):
        est = self.values['ESTIMATOR']
        from tailrisk.estimator import EstimatorOptions
        return EstimatorOptions(
            n_starts=est['starts'], m_keep=est['keep'],
            max_alternations=est['max_alternations'], ftol=est['ftol'],
            xtol=est['xtol'], maxiter=est['maxiter'],
            burn_in=est['burn_in'], seed=self.values['RUN']['seed'],
            threads=self.values['RUN']['threads'])

    def section_hash(self, *sections):
        return get_structure_hash(dict((s, self.values[s])
                                       for s in sections))

    def to_json(self):
        return copy.deepcopy(self.values)


RunConfig = Config
