import time
import click
import traceback

from click import style

from werkzeug.local import LocalProxy, LocalStack
from contextlib import contextmanager


_reporter_stack = LocalStack()


def describe_exception(exc_info):
    return ' '.join(''.join(traceback.format_exception_only(
        *exc_info[:2])).splitlines()).strip()


class Reporter(object):
    """Receives progress events from the library.  The base class ignores
    all of them; subclasses decide what to render.
    """

    def __init__(self, verbosity=0):
        self.verbosity = verbosity

        self.stage_stack = []
        self.asset_stack = []

    def push(self):
        _reporter_stack.push(self)

    def pop(self):
        _reporter_stack.pop()

    def __enter__(self):
        self.push()
        return self

    def __exit__(self, exc_type, exc_value, tb):
        self.pop()

    @property
    def current_stage(self):
        if self.stage_stack:
            return self.stage_stack[-1]

    @property
    def current_asset(self):
        if self.asset_stack:
            return self.asset_stack[-1]

    @property
    def show_asset_info(self):
        return self.verbosity >= 1

    @property
    def show_fit_details(self):
        return self.verbosity >= 2

    @property
    def show_debug_info(self):
        return self.verbosity >= 3

    @contextmanager
    def stage(self, name):
        now = time.time()
        self.stage_stack.append(name)
        self.start_stage(name)
        try:
            yield
        finally:
            self.stage_stack.pop()
            self.finish_stage(name, now)

    def start_stage(self, name):
        pass

    def finish_stage(self, name, start_time):
        pass

    @contextmanager
    def process_asset(self, asset):
        now = time.time()
        self.asset_stack.append(asset)
        self.enter_asset()
        try:
            yield
        finally:
            self.asset_stack.pop()
            self.leave_asset(now)

    def enter_asset(self):
        pass

    def leave_asset(self, start_time):
        pass

    def report_fit(self, label, fit):
        pass

    def report_refit(self, day, kind):
        pass

    def report_forecast_step(self, day, v, e):
        pass

    def report_failure(self, what, exc_info):
        pass

    def report_excluded(self, asset, reason):
        pass

    def report_backtest(self, report):
        pass

    def report_cached(self, stage):
        pass

    def report_debug_info(self, key, value):
        pass

    def report_generic(self, message):
        pass


class NullReporter(Reporter):
    pass


class RecordingReporter(Reporter):
    """Keeps every event in a list.  Handy for tests and for callers that
    want to inspect what happened after the fact.
    """

    def __init__(self, verbosity=0):
        Reporter.__init__(self, verbosity)
        self.events = []

    def _record(self, kind, **data):
        self.events.append(dict(kind=kind, **data))

    def start_stage(self, name):
        self._record('start-stage', stage=name)

    def finish_stage(self, name, start_time):
        self._record('finish-stage', stage=name)

    def report_fit(self, label, fit):
        self._record('fit', label=label, objective=fit.objective)

    def report_refit(self, day, kind):
        self._record('refit', day=day, refit=kind)

    def report_failure(self, what, exc_info):
        self._record('failure', what=what, error=describe_exception(exc_info))

    def report_excluded(self, asset, reason):
        self._record('excluded', asset=asset, reason=reason)

    def report_backtest(self, report):
        self._record('backtest', test=report.test_name, valid=report.valid)

    def report_cached(self, stage):
        self._record('cached', stage=stage)

    def report_generic(self, message):
        self._record('generic', message=message)

    def events_of(self, kind):
        return [x for x in self.events if x['kind'] == kind]


class CliReporter(Reporter):

    def __init__(self, verbosity=0):
        Reporter.__init__(self, verbosity)
        self.indentation = 0

    def indent(self):
        self.indentation += 1

    def outdent(self):
        self.indentation -= 1

    def _write_line(self, text):
        click.echo(' ' * (self.indentation * 2) + text, err=True)

    def _write_kv_info(self, key, value):
        self._write_line('%s: %s' % (key, style(str(value), fg='yellow')))

    def start_stage(self, name):
        self._write_line(style('Started %s' % name, fg='cyan'))
        self.indent()

    def finish_stage(self, name, start_time):
        self.outdent()
        self._write_line(style('Finished %s in %.2f sec' % (
            name, time.time() - start_time), fg='cyan'))

    def enter_asset(self):
        if not self.show_asset_info:
            return
        self._write_line('%s %s' % (style('A', fg='green'),
                                    self.current_asset))
        self.indent()

    def leave_asset(self, start_time):
        if self.show_asset_info:
            self.outdent()

    def report_fit(self, label, fit):
        if not self.show_fit_details:
            return
        self._write_kv_info(label, 'objective=%.6g starts=%d%s' % (
            fit.objective, fit.starts_tried,
            fit.fell_back and ' (fallback)' or ''))

    def report_refit(self, day, kind):
        if self.show_fit_details:
            self._write_kv_info('%s at day' % kind, day)

    def report_forecast_step(self, day, v, e):
        if self.show_debug_info:
            self._write_kv_info('forecast %s' % day, 'v=%.6g e=%s' % (
                v, e is None and '-' or '%.6g' % e))

    def report_failure(self, what, exc_info):
        sign = style('E', fg='red')
        self._write_line('%s %s (%s)' % (sign, what,
                                         describe_exception(exc_info)))

    def report_excluded(self, asset, reason):
        self._write_line('%s %s (%s)' % (style('X', fg='yellow'),
                                         asset, reason))

    def report_backtest(self, report):
        if not self.show_fit_details:
            return
        if report.valid:
            self._write_kv_info(report.test_name, 'stat=%.4g p=%.4g' % (
                report.statistic, report.p_value))
        else:
            self._write_kv_info(report.test_name, 'invalid: %s' %
                                report.failure_reason)

    def report_cached(self, stage):
        self._write_line('%s %s' % (style('C', fg='cyan'), stage))

    def report_debug_info(self, key, value):
        if self.show_debug_info:
            self._write_kv_info(key, value)

    def report_generic(self, message):
        self._write_line(style(str(message), fg='cyan'))


null_reporter = NullReporter()


@LocalProxy
def reporter():
    rv = _reporter_stack.top
    if rv is None:
        rv = null_reporter
    return rv
