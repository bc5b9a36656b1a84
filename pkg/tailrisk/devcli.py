import os
import sys
import click

from tailrisk.cli import pass_context, echo_json, exit_codes


@click.group(short_help='Development commands.')
def cli():
    """Development commands for tailrisk.

    These are mostly useful when working on the library itself: Monte Carlo
    studies of the backtests and an interactive shell with the modules
    preloaded.
    """


@cli.command('shell', short_help='Starts a python shell.')
@pass_context
def shell_cmd(ctx):
    """Starts a Python shell with the resolved configuration loaded.

    \b
    - `config`: the resolved configuration.
    - `realized`, `scoring`, `models`, `estimator`, `inference`,
      `backtests`, `forecasting`, `simulation`: the library modules.
    - `pipeline`: a pipeline over the configured artifact directory.
    """
    import code
    from tailrisk import backtests, estimator, forecasting, inference, \
         models, realized, scoring, simulation
    from tailrisk.pipeline import Pipeline
    with exit_codes():
        config = ctx.get_config()
    banner = 'Python %s on %s\nArtifacts: %s' % (
        sys.version,
        sys.platform,
        os.path.abspath(config['RUN']['out']),
    )
    ns = {}
    startup = os.environ.get('PYTHONSTARTUP')
    if startup and os.path.isfile(startup):
        with open(startup, 'r') as f:
            eval(compile(f.read(), startup, 'exec'), ns)
    ns.update(
        config=config,
        realized=realized,
        scoring=scoring,
        models=models,
        estimator=estimator,
        inference=inference,
        backtests=backtests,
        forecasting=forecasting,
        simulation=simulation,
        pipeline=Pipeline(config),
    )
    code.interact(banner=banner, local=ns)


@cli.command('size-study', short_help='Rejection rates of a backtest.')
@click.argument('test')
@click.option('--reps', type=int, default=300, show_default=True,
              help='Monte Carlo replications.')
@click.option('--days', type=int, default=2000, show_default=True,
              help='Days per replication.')
@click.option('--alpha', type=float, default=0.05, show_default=True,
              help='Probability level of the forecasts.')
@click.option('--level', type=float, default=0.05, show_default=True,
              help='Significance level of the test.')
@click.option('--forecaster', default='true', show_default=True,
              help='"true", "constant" or a model key that is fitted on '
              'every replication.')
@click.option('--scale', type=float, default=1.0, show_default=True,
              help='Multiplies the true forecasts.  Values other than one '
              'measure power.')
@click.option('--starts', type=int, default=None,
              help='Multistart size when a model is fitted.')
@click.option('as_json', '--json', is_flag=True,
              help='Prints the result as json.')
@click.option('-v', '--verbose', 'verbosity', count=True,
              help='Increases the verbosity of the logging.')
@pass_context
def size_study_cmd(ctx, test, reps, days, alpha, level, forecaster, scale,
                   starts, as_json, verbosity):
    """Simulates REPS samples from the process in the `[simulate]`
    section, computes forecasts and reports how often TEST rejects.

    TEST is one of DQ_IS_CC, DQ_IS_ID, DQ_OOS_CC, DQ_OOS_ID, PZC_VaR,
    PZC_ES, ESR_auxiliary, ESR_strict and ESR_strict_intercept.
    """
    from tailrisk.backtests import TEST_NAMES
    from tailrisk.models import ModelSpec
    from tailrisk.reporter import CliReporter
    from tailrisk.simulation import DgpSpec, size_study
    from tailrisk.utils import TailriskError

    if test not in TEST_NAMES:
        raise click.BadParameter('Unknown backtest "%s"' % test,
                                 param_hint='TEST')
    if forecaster not in ('true', 'constant'):
        try:
            forecaster = ModelSpec.from_key(forecaster, alpha)
        except TailriskError as e:
            raise click.BadParameter(str(e), param_hint='--forecaster')
    ctx.set_override('ESTIMATOR', 'starts', starts)
    with exit_codes():
        config = ctx.get_config()
        dgp = DgpSpec.from_config(config['SIMULATE'],
                                  seed=config['RUN']['seed'])
        with CliReporter(verbosity=verbosity):
            result = size_study(test, dgp, reps=reps, level=level,
                                n_days=days, alpha=alpha,
                                forecaster=forecaster, scale=scale,
                                options=config.get_estimator_options(),
                                seed=config['RUN']['seed'],
                                threads=config['RUN']['threads'])
    if as_json:
        echo_json(result.to_json())
        return
    click.echo('%s: rejected %d of %d valid replications (rate %.3f, '
               'se %.3f)' % (result.test, result.rejections, result.valid,
                             result.rate, result.standard_error))
