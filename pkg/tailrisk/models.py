"""VaR recursions (additive and multiplicative), ES couplings, their
recursive parameter gradients and the validity constraints of the
coefficient vectors.
"""
import numpy as np
from scipy.signal import lfilter
from scipy.stats import norm

from tailrisk.scoring import score_path, LOSSES
from tailrisk.utils import TailriskError


VAR_FORMS = ('add_sim', 'add_skk', 'add_lev', 'mlt_sim', 'mlt_skk',
             'mlt_lev')
ES_FORMS = ('no', 'sim', 'skk')

_var_params = {
    'add_sim': ('d0', 'd1', 'd2'),
    'add_skk': ('d0', 'd1', 'd2', 'a1', 'a2', 'a3'),
    'add_lev': ('d0', 'd1', 'd2', 'd3', 'a1', 'a2', 'a3'),
    'mlt_sim': ('d0', 'd1', 'd2'),
    'mlt_skk': ('d0', 'd1', 'd2', 'a1', 'a2', 'a3'),
    'mlt_lev': ('d0', 'd1', 'd2', 'd3', 'a1', 'a2', 'a3'),
}
_es_params = {
    'no': (),
    'sim': ('b0',),
    'skk': ('b0', 'b1', 'b2'),
}

#: observations used to initialize the recursions
INIT_OBSERVATIONS = 50
#: leading observations excluded from the objective
DEFAULT_BURN_IN = 50


class InfeasibleParams(TailriskError):
    """Raised when a parameter vector violates a model constraint.  The
    index is the first offending day, or ``None`` for constraints on the
    coefficients themselves.
    """

    def __init__(self, message, index=None, violation=1.0):
        TailriskError.__init__(self, message)
        self.index = index
        self.violation = float(violation)


class ModelSpec(object):

    def __init__(self, var_form, es_form, loss, alpha):
        if var_form not in VAR_FORMS:
            raise TailriskError('Unknown VaR form "%s"' % var_form)
        if es_form not in ES_FORMS:
            raise TailriskError('Unknown ES form "%s"' % es_form)
        if loss not in LOSSES:
            raise TailriskError('Unknown loss "%s"' % loss)
        if (es_form == 'no') != (loss == 'EM'):
            raise TailriskError('The quantile loss (EM) goes with pure VaR '
                                'models (ES=no) and only with those')
        alpha = float(alpha)
        if not 0.0 < alpha < 1.0:
            raise TailriskError('Probability level must be in (0, 1)')
        self.var_form = var_form
        self.es_form = es_form
        self.loss = loss
        self.alpha = alpha

    @property
    def additive(self):
        return self.var_form.startswith('add_')

    @property
    def has_es(self):
        return self.es_form != 'no'

    @property
    def param_names(self):
        return _var_params[self.var_form] + _es_params[self.es_form]

    @property
    def key(self):
        return '%s.%s.%s' % (self.var_form, self.es_form, self.loss)

    @property
    def label(self):
        return 'VaR=%s, ES=%s, Loss=%s' % (self.var_form, self.es_form,
                                           self.loss)

    def with_alpha(self, alpha):
        return ModelSpec(self.var_form, self.es_form, self.loss, alpha)

    def to_json(self):
        return {
            'var_form': self.var_form,
            'es_form': self.es_form,
            'loss': self.loss,
            'alpha': self.alpha,
        }

    @classmethod
    def from_json(cls, data):
        return cls(data['var_form'], data['es_form'], data['loss'],
                   data['alpha'])

    @classmethod
    def from_key(cls, key, alpha):
        try:
            var_form, es_form, loss = key.split('.')
        except ValueError:
            raise TailriskError('Model keys look like "mlt_sim.sim.ALS", '
                                'got "%s"' % key)
        return cls(var_form, es_form, loss, alpha)

    def __eq__(self, other):
        return isinstance(other, ModelSpec) and \
            self.to_json() == other.to_json()

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash((self.var_form, self.es_form, self.loss, self.alpha))

    def __repr__(self):
        return '<ModelSpec %s alpha=%g>' % (self.key, self.alpha)


def iter_model_universe(alpha=0.05, joint_losses=('ALS',)):
    """Yields every VaR form combined with every ES form.  With the default
    loss choice this is the 18 model universe.
    """
    for var_form in VAR_FORMS:
        yield ModelSpec(var_form, 'no', 'EM', alpha)
        for es_form in ('sim', 'skk'):
            for loss in joint_losses:
                yield ModelSpec(var_form, es_form, loss, alpha)


def parse_model_selection(items, alpha=0.05, joint_losses=('ALS',)):
    """Resolves model keys; ``all`` stands for the universe built with
    ``joint_losses``.
    """
    rv = []
    for item in items:
        if item == 'all':
            rv.extend(iter_model_universe(alpha, joint_losses))
        else:
            rv.append(ModelSpec.from_key(item, alpha))
    seen = set()
    unique = []
    for spec in rv:
        if spec.key not in seen:
            seen.add(spec.key)
            unique.append(spec)
    if not unique:
        raise TailriskError('No models selected')
    return unique


class ParamVector(object):
    """Coefficients of one model in the order of ``spec.param_names``."""

    def __init__(self, spec, values):
        values = np.array(values, dtype=np.float64).ravel()
        if values.size != len(spec.param_names):
            raise TailriskError('%s takes %d parameters, got %d' % (
                spec.key, len(spec.param_names), values.size))
        self.spec = spec
        self.values = values

    def __getitem__(self, name):
        return self.values[self.spec.param_names.index(name)]

    def get(self, name, default=0.0):
        if name in self.spec.param_names:
            return float(self[name])
        return default

    @property
    def names(self):
        return self.spec.param_names

    def index_of(self, names):
        return [self.spec.param_names.index(x) for x in names]

    def to_dict(self):
        return dict(zip(self.names, self.values.tolist()))

    def to_json(self):
        return self.to_dict()

    @classmethod
    def from_dict(cls, spec, data):
        missing = [x for x in spec.param_names if x not in data]
        if missing:
            raise TailriskError('Missing parameters: %s' % ', '.join(missing))
        return cls(spec, [data[x] for x in spec.param_names])

    def __repr__(self):
        return '<ParamVector %s>' % ', '.join(
            '%s=%.6g' % x for x in zip(self.names, self.values))


class RiskPath(object):

    def __init__(self, v, e=None, h2=None, hits=None, scores=None):
        self.v = v
        self.e = e
        self.h2 = h2
        self.hits = hits
        self.scores = scores

    def __len__(self):
        return self.v.size

    @property
    def coverage(self):
        return float(np.mean(self.hits))


class ModelArtifact(object):
    """The exchange format for fitted models."""

    def __init__(self, spec, params, window_meta=None):
        self.spec = spec
        self.params = params
        self.window_meta = window_meta or {}

    def to_json(self):
        return {
            'spec': self.spec.key,
            'alpha': self.spec.alpha,
            'loss': self.spec.loss,
            'params': self.params.to_dict(),
            'window_meta': self.window_meta,
        }

    @classmethod
    def from_json(cls, data):
        spec = ModelSpec.from_key(data['spec'], data['alpha'])
        if spec.loss != data['loss']:
            raise TailriskError('Artifact loss does not match its spec')
        return cls(spec, ParamVector.from_dict(spec, data['params']),
                   data.get('window_meta'))


def cf_quantile(alpha, sk, ku, classical=False):
    """Cornish-Fisher adjusted quantile.  The default keeps the kurtosis
    term with divisor 2 applied to the raw kurtosis; ``classical`` uses the
    textbook divisor 24 on excess kurtosis.
    """
    z = norm.ppf(alpha)
    if classical:
        kurt_term = (z ** 3 - 3.0 * z) / 24.0 * (ku - 3.0)
    else:
        kurt_term = (z ** 3 - 3.0 * z) / 2.0 * ku
    return z + (z * z - 1.0) / 6.0 * sk + kurt_term - \
        (2.0 * z ** 3 - 5.0 * z) / 36.0 * sk * sk


class _Inputs(object):
    """Lagged regressors for ``n`` filtered positions.  Position ``t`` uses
    day ``t - 1`` (day 0 for the first position).
    """

    def __init__(self, returns, measures, n, rbar):
        returns = np.asarray(returns, dtype=np.float64)
        if len(measures) != returns.size:
            raise TailriskError('Returns and realized measures are not '
                                'aligned (%d vs %d days)' % (
                                    returns.size, len(measures)))
        lag = np.maximum(np.arange(n) - 1, 0)
        self.n = n
        self.rv = measures.rv[lag]
        self.sqrt_rv = np.sqrt(self.rv)
        self.sk = measures.sk[lag]
        self.sk_neg = measures.sk_neg[lag]
        self.sk_pos = measures.sk_pos[lag]
        self.ku = measures.ku[lag]
        self.lev = (returns[lag] <= rbar).astype(np.float64)


def initial_state(spec, returns):
    """The starting value of the recursion: the empirical quantile of the
    first observations (additive) or their variance (multiplicative).
    """
    returns = np.asarray(returns, dtype=np.float64)
    n0 = max(2, min(INIT_OBSERVATIONS, returns.size // 10))
    head = returns[:n0]
    if spec.additive:
        q = float(np.quantile(head, spec.alpha))
        if q >= 0.0:
            q = -float(np.sqrt(np.mean(head * head))) or -1e-8
        return q
    var = float(np.var(head))
    if var <= 0.0:
        var = float(np.mean(head * head)) or 1e-12
    return var


def _ar_filter(c, coef, init):
    """Runs ``y[t] = c[t] + coef * y[t - 1]`` with ``y[0] = init``.  ``c``
    may carry extra trailing dimensions (one per gradient column).
    """
    out = np.empty_like(c)
    out[0] = init
    if c.shape[0] > 1:
        zi = np.reshape(coef * np.asarray(init, dtype=np.float64),
                        (1,) + c.shape[1:])
        out[1:] = lfilter([1.0], [1.0, -coef], c[1:], axis=0, zi=zi)[0]
    return out


def check_static(spec, params):
    """Coefficient constraints that do not depend on the data."""
    d2 = params.get('d2')
    if spec.additive:
        if not abs(d2) < 1.0:
            raise InfeasibleParams('|d2| must be below 1 for %s'
                                   % spec.var_form,
                                   violation=abs(d2) - 1.0 + 1e-8)
    else:
        excess = 0.0
        d0 = params.get('d0')
        if not d0 > 0.0:
            excess += 1e-8 - d0
        for name in ('d1', 'd2', 'd3'):
            value = params.get(name)
            if value < 0.0:
                excess -= value
        if d2 >= 1.0:
            excess += d2 - 1.0 + 1e-8
        if excess > 0.0 or not np.all(np.isfinite(params.values)):
            raise InfeasibleParams('%s needs d0 > 0, d1, d2, d3 >= 0 and '
                                   'd2 < 1' % spec.var_form,
                                   violation=excess)
    if not np.all(np.isfinite(params.values)):
        raise InfeasibleParams('Non-finite parameters')


def _multiplier(spec, params, inp):
    if spec.var_form == 'mlt_sim':
        return np.ones(inp.n)
    return params.get('a1') * inp.sk_neg + params.get('a2') * inp.sk_pos + \
        params.get('a3') * inp.ku


def _es_exponent(spec, params, inp):
    if spec.es_form == 'sim':
        return np.full(inp.n, params.get('b0'))
    return params.get('b0') + params.get('b1') * inp.sk + \
        params.get('b2') * inp.ku


def _first_bad(mask):
    idx = np.flatnonzero(mask)
    if idx.size:
        return int(idx[0]), idx.size
    return None, 0


def _run(spec, params, returns, measures, n, rbar, init):
    returns = np.asarray(returns, dtype=np.float64)
    if rbar is None:
        rbar = float(np.mean(returns))
    if init is None:
        init = initial_state(spec, returns)
    check_static(spec, params)
    inp = _Inputs(returns, measures, n, rbar)

    d0 = params.get('d0')
    d1 = params.get('d1')
    d2 = params.get('d2')
    d3 = params.get('d3')

    h2 = m = None
    if spec.additive:
        c = d0 + d1 * inp.sqrt_rv + \
            (params.get('a1') * inp.sk_neg + params.get('a2') * inp.sk_pos +
             params.get('a3') * inp.ku) + d3 * inp.sqrt_rv * inp.lev
        v = _ar_filter(c, d2, init)
    else:
        c = d0 + d1 * inp.rv + d3 * inp.rv * inp.lev
        h2 = _ar_filter(c, d2, init)
        bad, count = _first_bad(~(h2 > 0.0))
        if bad is not None:
            raise InfeasibleParams('Non-positive scale at day %d' % bad,
                                   index=bad, violation=count / float(n))
        m = _multiplier(spec, params, inp)
        bad, count = _first_bad(~(m > 0.0))
        if bad is not None:
            raise InfeasibleParams('Non-positive skewness/kurtosis '
                                   'multiplier at day %d' % bad, index=bad,
                                   violation=count / float(n) +
                                   float(np.max(-m[~(m > 0.0)])))
        v = -np.sqrt(h2) * m

    bad, count = _first_bad(~(v < 0.0))
    if bad is not None:
        excess = np.nan_to_num(v[~(v < 0.0)], nan=1.0, posinf=1.0)
        raise InfeasibleParams('VaR is not negative at day %d' % bad,
                               index=bad, violation=count / float(n) +
                               float(np.max(excess)))

    e = s = None
    if spec.has_es:
        s = _es_exponent(spec, params, inp)
        with np.errstate(over='ignore'):
            e = (1.0 + np.exp(s)) * v
        bad, count = _first_bad(~(np.isfinite(e) & (e < v)))
        if bad is not None:
            raise InfeasibleParams('ES does not stay below VaR at day %d'
                                   % bad, index=bad,
                                   violation=count / float(n))
    return inp, v, e, h2, m, s


def filter_path(spec, params, returns, measures, rbar=None, init=None):
    """Filters the VaR (and ES) path of a model over the sample.  ``rbar``
    is the leverage threshold and defaults to the sample mean; ``init`` the
    starting state and defaults to :func:`initial_state`.
    """
    returns = np.asarray(returns, dtype=np.float64)
    n = returns.size
    if n < 2:
        raise TailriskError('Filtering needs at least two observations')
    inp, v, e, h2, m, s = _run(spec, params, returns, measures, n, rbar,
                               init)
    hits = (returns <= v).astype(np.int8)
    scores = score_path(spec.loss, returns, v, e, spec.alpha)
    return RiskPath(v, e, h2, hits, scores)


def forecast_next(spec, params, returns, measures, rbar=None, init=None):
    """One-step-ahead (v, e) for the day after the sample.  ``e`` is
    ``None`` for pure VaR models.
    """
    returns = np.asarray(returns, dtype=np.float64)
    n = returns.size + 1
    inp, v, e, h2, m, s = _run(spec, params, returns, measures, n, rbar,
                               init)
    return float(v[-1]), (None if e is None else float(e[-1]))


def gradient_path(spec, params, returns, measures, rbar=None, init=None):
    """Per-day derivatives of ``v`` and ``e`` with respect to the parameter
    vector, accumulated forward through the recursion.  Returns arrays of
    shape ``(T, p)``; the ES gradient is ``None`` for pure VaR models.
    """
    returns = np.asarray(returns, dtype=np.float64)
    n = returns.size
    inp, v, e, h2, m, s = _run(spec, params, returns, measures, n, rbar,
                               init)
    names = spec.param_names
    p = len(names)
    col = dict((name, idx) for idx, name in enumerate(names))
    d2 = params.get('d2')

    g = np.zeros((n, p))
    state = v if spec.additive else h2
    state_lag = np.concatenate([[state[0]], state[:-1]])

    if spec.additive:
        g[:, col['d0']] = 1.0
        g[:, col['d1']] = inp.sqrt_rv
        g[:, col['d2']] = state_lag
        if 'd3' in col:
            g[:, col['d3']] = inp.sqrt_rv * inp.lev
        if 'a1' in col:
            g[:, col['a1']] = inp.sk_neg
            g[:, col['a2']] = inp.sk_pos
            g[:, col['a3']] = inp.ku
        grad_v = _ar_filter(g, d2, np.zeros(p))
    else:
        g[:, col['d0']] = 1.0
        g[:, col['d1']] = inp.rv
        g[:, col['d2']] = state_lag
        if 'd3' in col:
            g[:, col['d3']] = inp.rv * inp.lev
        grad_h2 = _ar_filter(g, d2, np.zeros(p))
        sqrt_h2 = np.sqrt(h2)
        grad_v = (-m / (2.0 * sqrt_h2))[:, None] * grad_h2
        if 'a1' in col:
            grad_v[:, col['a1']] -= sqrt_h2 * inp.sk_neg
            grad_v[:, col['a2']] -= sqrt_h2 * inp.sk_pos
            grad_v[:, col['a3']] -= sqrt_h2 * inp.ku

    grad_e = None
    if spec.has_es:
        es = np.exp(s)
        grad_e = (1.0 + es)[:, None] * grad_v
        grad_e[:, col['b0']] += es * v
        if spec.es_form == 'skk':
            grad_e[:, col['b1']] += es * v * inp.sk
            grad_e[:, col['b2']] += es * v * inp.ku
    return grad_v, grad_e


class FeasibilityReport(object):

    def __init__(self, violations):
        self.violations = violations

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def to_json(self):
        return {'ok': self.ok, 'violations': self.violations}


def validate_params(spec, params, measures):
    """Checks every coefficient constraint plus the data dependent
    positivity of the skewness/kurtosis multiplier.  Never raises.
    """
    violations = []
    try:
        check_static(spec, params)
    except InfeasibleParams as e:
        violations.append({'index': None, 'reason': str(e)})
    if spec.var_form in ('mlt_skk', 'mlt_lev'):
        m = params.get('a1') * measures.sk_neg + \
            params.get('a2') * measures.sk_pos + params.get('a3') * measures.ku
        bad, count = _first_bad(~(m > 0.0))
        if bad is not None:
            violations.append({'index': bad, 'reason': 'multiplier is not '
                               'positive on %d days' % count})
    return FeasibilityReport(violations)
