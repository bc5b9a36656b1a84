import os
import sys
import json
import click

from contextlib import contextmanager

from tailrisk import __version__
from tailrisk.utils import TailriskError


def echo_json(data):
    from tailrisk.utils import JSONEncoder
    click.echo(json.dumps(data, indent=2, cls=JSONEncoder).rstrip())


def verbosity_option(cli):
    return click.option('-v', '--verbose', 'verbosity', count=True,
                        help='Increases the verbosity of the logging.')(cli)


def inputs_argument(cli):
    return click.argument('inputs', nargs=-1, type=click.Path())(cli)


def selection_options(cli):
    cli = click.option('--loss', 'losses', multiple=True,
                       type=click.Choice(['ALS', 'FZ0']),
                       help='Joint loss the ES models are estimated with.  '
                       'Can be given more than once.')(cli)
    cli = click.option('--model', 'models', multiple=True,
                       help='A model key like "add_skk.no.EM" or "all".  '
                       'Can be given more than once.')(cli)
    cli = click.option('--alpha', 'alphas', multiple=True, type=float,
                       help='Probability level.  Can be given more than '
                       'once.')(cli)
    return cli


def estimator_options(cli):
    cli = click.option('--keep', type=int, default=None,
                       help='Best start vectors that are refined.')(cli)
    cli = click.option('--starts', type=int, default=None,
                       help='Uniform start vectors of the multistart '
                       'search.')(cli)
    return cli


class Context(object):
    """Collects the global command line settings and resolves them into a
    configuration on demand.
    """

    def __init__(self):
        self._config_path = None
        self._config = None
        self.overrides = {}

    def set_config_path(self, value):
        self._config_path = value
        self._config = None

    def set_override(self, section, key, value):
        if value is None or value == ():
            return
        self.overrides[section, key] = value
        self._config = None

    def get_config(self):
        if self._config is not None:
            return self._config
        from tailrisk.environment import Config
        self._config = Config(self._config_path, self.overrides)
        return self._config

    def get_output_path(self):
        return self.get_config()['RUN']['out']


pass_context = click.make_pass_decorator(Context, ensure=True)


def _validation_errors():
    from tailrisk.datasource import IngestError
    from tailrisk.environment import ConfigError
    from tailrisk.simulation import SimulationError
    return (IngestError, ConfigError, SimulationError)


@contextmanager
def exit_codes():
    """Maps library failures to the exit codes of the command line:
    2 for bad input or configuration and 3 for numerical failures.
    """
    validation = _validation_errors()
    try:
        yield
    except validation as e:
        click.echo('Error: %s' % e, err=True)
        sys.exit(2)
    except TailriskError as e:
        click.echo('Error: %s' % e, err=True)
        sys.exit(3)


@click.group()
@click.option('--config', 'config_path', type=click.Path(),
              help='An INI file with settings.  Command line flags win '
              'over it.')
@click.option('--seed', type=int, default=None,
              help='The master seed every random draw derives from.')
@click.option('--threads', type=int, default=None,
              help='Worker threads.  Defaults to TAILRISK_THREADS or the '
              'number of CPUs.')
@click.option('--out', type=click.Path(), default=None,
              help='The artifact directory.')
@click.version_option(prog_name='tailrisk', version=__version__)
@pass_context
def cli(ctx, config_path=None, seed=None, threads=None, out=None):
    """Dynamic Value at Risk and Expected Shortfall models.

    The commands form a pipeline (measures, fit, forecast, backtest,
    report).  Every command runs the stages it needs and skips the ones
    whose artifacts are still current.
    """
    if config_path is not None:
        ctx.set_config_path(config_path)
    ctx.set_override('RUN', 'seed', seed)
    ctx.set_override('RUN', 'threads', threads)
    ctx.set_override('RUN', 'out', out)


def run_stages(ctx, until, inputs, verbosity):
    from tailrisk.pipeline import run_pipeline
    from tailrisk.reporter import CliReporter
    with exit_codes():
        config = ctx.get_config()
        with CliReporter(verbosity=verbosity):
            pipeline = run_pipeline(config, inputs or None, until=until)
    return pipeline


@cli.command('measures', short_help='Computes realized measures.')
@inputs_argument
@click.option('--kind', type=click.Choice(['RV', 'BPV', 'SV_POS', 'SV_NEG',
                                           'MED']),
              default=None, help='The realized variance estimator.')
@click.option('--tau', type=int, default=None,
              help='Days the higher moments are averaged over.')
@verbosity_option
@pass_context
def measures_cmd(ctx, inputs, kind, tau, verbosity):
    """Reads intraday price files (or directories of them) and writes the
    daily realized variance, skewness and kurtosis of every asset that
    passes the length screen.
    """
    ctx.set_override('MEASURES', 'kind', kind)
    ctx.set_override('MEASURES', 'tau', tau)
    pipeline = run_stages(ctx, 'measures', inputs, verbosity)
    click.echo('Measures written to %s' % pipeline.path('measures'))


@cli.command('fit', short_help='Fits models in-sample.')
@inputs_argument
@selection_options
@estimator_options
@verbosity_option
@pass_context
def fit_cmd(ctx, inputs, alphas, models, losses, starts, keep, verbosity):
    """Estimates every selected model on the full sample of every asset
    and writes parameters, standard errors and in-sample diagnostics.
    """
    ctx.set_override('RUN', 'alphas', alphas)
    ctx.set_override('RUN', 'models', models)
    ctx.set_override('RUN', 'losses', losses)
    ctx.set_override('ESTIMATOR', 'starts', starts)
    ctx.set_override('ESTIMATOR', 'keep', keep)
    pipeline = run_stages(ctx, 'fits', inputs, verbosity)
    click.echo('Fits written to %s' % pipeline.path('fits'))


@cli.command('forecast', short_help='Rolling one-day-ahead forecasts.')
@inputs_argument
@selection_options
@click.option('--window', 'windows', multiple=True, type=int,
              help='Estimation window length in days.  Can be given more '
              'than once.')
@click.option('--refit-every', type=int, default=None,
              help='Days between complete re-estimations.')
@click.option('--update-every', type=int, default=None,
              help='Days between warm-started updates.')
@estimator_options
@verbosity_option
@pass_context
def forecast_cmd(ctx, inputs, alphas, models, losses, windows, refit_every,
                 update_every, starts, keep, verbosity):
    """Produces rolling out-of-sample VaR and ES forecasts together with
    their hits and losses.
    """
    ctx.set_override('RUN', 'alphas', alphas)
    ctx.set_override('RUN', 'models', models)
    ctx.set_override('RUN', 'losses', losses)
    ctx.set_override('FORECAST', 'windows', windows)
    ctx.set_override('FORECAST', 'full_refit_every', refit_every)
    ctx.set_override('FORECAST', 'warm_update_every', update_every)
    ctx.set_override('ESTIMATOR', 'starts', starts)
    ctx.set_override('ESTIMATOR', 'keep', keep)
    pipeline = run_stages(ctx, 'forecasts', inputs, verbosity)
    click.echo('Forecasts written to %s' % pipeline.path('forecasts'))


@cli.command('backtest', short_help='Backtests the forecasts.')
@inputs_argument
@click.option('--lags', type=int, default=None,
              help='Hit lags of the dynamic quantile tests.')
@click.option('--nw-lags', type=int, default=None,
              help='Newey-West lags of the calibration tests.')
@click.option('--level', type=float, default=None,
              help='Significance level of the summary.')
@verbosity_option
@pass_context
def backtest_cmd(ctx, inputs, lags, nw_lags, level, verbosity):
    """Runs the VaR and ES backtests on every forecast record."""
    ctx.set_override('BACKTEST', 'lags', lags)
    ctx.set_override('BACKTEST', 'nw_lags', nw_lags)
    ctx.set_override('BACKTEST', 'level', level)
    pipeline = run_stages(ctx, 'backtests', inputs, verbosity)
    click.echo('Backtests written to %s' % pipeline.path('backtests'))


@cli.command('report', short_help='Writes the summary tables.')
@inputs_argument
@click.option('as_json', '--json', is_flag=True,
              help='Prints the manifest as json.')
@verbosity_option
@pass_context
def report_cmd(ctx, inputs, as_json, verbosity):
    """Runs the whole pipeline and writes the median-loss, average-rank,
    coverage and non-rejection tables.
    """
    pipeline = run_stages(ctx, 'report', inputs, verbosity)
    if as_json:
        echo_json(pipeline.manifest)
        return
    outputs = pipeline.manifest['stages']['report']['outputs']
    for rel in sorted(outputs):
        click.echo(pipeline.path(rel))


@cli.command('simulate', short_help='Simulates intraday price files.')
@click.argument('path', type=click.Path(), required=False)
@click.option('--kind', type=click.Choice(['garch_t', 'constant_t',
                                           'diffusion']),
              default=None, help='The data generating process.')
@click.option('--assets', type=int, default=None,
              help='Number of simulated assets.')
@click.option('--days', type=int, default=None,
              help='Trading days per asset.')
@click.option('--slots', type=int, default=None,
              help='Intraday returns per day.')
@verbosity_option
@pass_context
def simulate_cmd(ctx, path, kind, assets, days, slots, verbosity):
    """Writes simulated intraday files in the ingestion format, plus the
    true daily series, into PATH (defaults to `simulated` inside the
    artifact directory).  The files can be fed straight back into the
    other commands.
    """
    from tailrisk.reporter import CliReporter
    from tailrisk.simulation import write_simulation
    ctx.set_override('SIMULATE', 'kind', kind)
    ctx.set_override('SIMULATE', 'assets', assets)
    ctx.set_override('SIMULATE', 'days', days)
    ctx.set_override('SIMULATE', 'slots', slots)
    with exit_codes():
        config = ctx.get_config()
        if path is None:
            path = os.path.join(config['RUN']['out'], 'simulated')
        with CliReporter(verbosity=verbosity):
            manifest = write_simulation(config, path)
    click.echo('Simulated %d asset(s) into %s' % (
        len(manifest['assets']), path))


from tailrisk.devcli import cli as devcli
cli.add_command(devcli, 'dev')


def main(args=None):
    cli.main(args=args, prog_name='tailrisk')
