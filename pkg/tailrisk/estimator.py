"""Estimation by minimizing the mean strictly consistent score.

The complete estimation evaluates the objective on a large batch of
uniformly sampled parameter vectors, keeps the best few and refines each by
alternating Nelder-Mead and BFGS rounds.  Rolling windows use the cheaper
warm update seeded at the previous estimate.
"""
import time

import numpy as np
from scipy.optimize import minimize

from tailrisk.models import InfeasibleParams, ParamVector, filter_path, \
     gradient_path, DEFAULT_BURN_IN
from tailrisk.scoring import score_gradient, em_gradient
from tailrisk.utils import TailriskError, parallel_map, stable_sum


#: objective value of parameter vectors that violate a constraint
PENALTY = 1e6


class EstimationError(TailriskError):
    pass


class EstimatorOptions(object):

    def __init__(self, n_starts=50000, m_keep=10, max_alternations=20,
                 ftol=1e-8, xtol=1e-6, maxiter=500,
                 burn_in=DEFAULT_BURN_IN, seed=1, threads=None):
        self.n_starts = int(n_starts)
        self.m_keep = int(m_keep)
        self.max_alternations = int(max_alternations)
        self.ftol = float(ftol)
        self.xtol = float(xtol)
        self.maxiter = int(maxiter)
        self.burn_in = int(burn_in)
        self.seed = int(seed)
        self.threads = threads

    def replace(self, **kwargs):
        rv = EstimatorOptions(**self.to_json())
        rv.threads = self.threads
        for key, value in kwargs.items():
            setattr(rv, key, value)
        return rv

    def to_json(self):
        return {
            'n_starts': self.n_starts,
            'm_keep': self.m_keep,
            'max_alternations': self.max_alternations,
            'ftol': self.ftol,
            'xtol': self.xtol,
            'maxiter': self.maxiter,
            'burn_in': self.burn_in,
            'seed': self.seed,
        }


class FitResult(object):

    def __init__(self, spec, params, objective, starts_tried, refinements,
                 converged, elapsed, box=None, fell_back=False):
        self.spec = spec
        self.params = params
        self.objective = objective
        self.starts_tried = starts_tried
        self.refinements = refinements
        self.converged = converged
        self.elapsed = elapsed
        self.box = box
        self.fell_back = fell_back

    def to_json(self, include_timing=False):
        rv = {
            'spec': self.spec.key,
            'alpha': self.spec.alpha,
            'params': self.params.to_dict(),
            'objective': self.objective,
            'starts_tried': self.starts_tried,
            'refinements': self.refinements,
            'converged': self.converged,
            'fell_back': self.fell_back,
            'sampling_box': self.box,
        }
        if include_timing:
            rv['elapsed'] = self.elapsed
        return rv

    def __repr__(self):
        return '<FitResult %s objective=%.6g>' % (self.spec.key,
                                                  self.objective)


class Objective(object):
    """Mean score of a model over a sample as a function of the flat
    parameter vector.  Infeasible vectors get ``PENALTY`` plus the size of
    the violation.
    """

    def __init__(self, spec, returns, measures, burn_in=DEFAULT_BURN_IN,
                 rbar=None, init=None):
        self.spec = spec
        self.returns = np.asarray(returns, dtype=np.float64)
        self.measures = measures
        self.burn_in = burn_in
        self.rbar = float(np.mean(self.returns)) if rbar is None else rbar
        self.init = init
        if self.returns.size - burn_in < 1:
            raise EstimationError('Burn-in of %d leaves no observations'
                                  % burn_in)

    def path(self, theta):
        return filter_path(self.spec, ParamVector(self.spec, theta),
                           self.returns, self.measures, self.rbar, self.init)

    def __call__(self, theta):
        try:
            path = self.path(theta)
        except InfeasibleParams as e:
            return PENALTY + e.violation
        value = stable_sum(path.scores[self.burn_in:]) / \
            (self.returns.size - self.burn_in)
        if not np.isfinite(value):
            return PENALTY + 1.0
        return value

    def gradient(self, theta):
        params = ParamVector(self.spec, theta)
        try:
            path = self.path(theta)
            grad_v, grad_e = gradient_path(self.spec, params, self.returns,
                                           self.measures, self.rbar,
                                           self.init)
        except InfeasibleParams:
            return np.zeros(len(theta))
        b = self.burn_in
        r = self.returns[b:]
        if self.spec.loss == 'EM':
            dv = em_gradient(r, path.v[b:], self.spec.alpha)
            total = dv @ grad_v[b:]
        else:
            dv, de = score_gradient(r, path.v[b:], path.e[b:],
                                    self.spec.alpha, self.spec.loss)
            total = dv @ grad_v[b:] + de @ grad_e[b:]
        return total / r.size


def sampling_box(spec, returns):
    """Bounds of the uniform start distribution for every parameter.

    Additive models sample a negative intercept between twice the empirical
    quantile and zero and negative loadings on the volatility terms, so the
    drawn paths sit in the left tail.  Skewness and kurtosis loadings of
    additive models are measured in return units and scale with the sample
    standard deviation.
    """
    returns = np.asarray(returns, dtype=np.float64)
    q = float(np.quantile(returns, spec.alpha))
    var = float(np.var(returns))
    sd = float(np.sqrt(var))
    box = {}
    for name in spec.param_names:
        if name == 'd0':
            box[name] = (2.0 * min(q, -1e-8), 0.0) if spec.additive \
                else (0.0, 2.0 * max(var, 1e-12))
        elif name in ('d1', 'd3'):
            box[name] = (-1.0, 0.0) if spec.additive else (0.0, 1.0)
        elif name == 'd2':
            box[name] = (0.0, 0.999)
        elif name.startswith('a') and spec.additive:
            box[name] = (-2.0 * sd, 2.0 * sd)
        else:
            box[name] = (-2.0, 2.0)
    return box


def draw_uniform_starts(lo, hi, n, seed):
    """Uniform draws from a box.  The generator is counter based so the
    batch only depends on the seed.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    rng = np.random.Generator(np.random.Philox(key=seed))
    return lo + (hi - lo) * rng.random((n, lo.size))


def rank_candidates(values, points):
    """Indices ordering candidates by objective value, ties broken by the
    parameter vectors' lexicographic order.
    """
    values = np.where(np.isfinite(values), values, np.inf)
    keys = tuple(points[:, j] for j in range(points.shape[1] - 1, -1, -1))
    return np.lexsort(keys + (values,))


class MultistartResult(object):

    def __init__(self, x, fun, starts_tried, refinements, converged):
        self.x = x
        self.fun = fun
        self.starts_tried = starts_tried
        self.refinements = refinements
        self.converged = converged


def refine(func, x0, grad=None, options=None, max_alternations=None):
    """Alternates Nelder-Mead and BFGS from ``x0`` until a full round
    improves the objective by less than the tolerance.  Returns
    ``(x, f, rounds, converged)``; the result is never worse than ``x0``.
    """
    options = options or EstimatorOptions()
    if max_alternations is None:
        max_alternations = options.max_alternations
    best_x = np.array(x0, dtype=np.float64)
    best_f = func(best_x)
    rounds = 0
    converged = False

    for _ in range(max_alternations):
        start_f = best_f
        rounds += 1
        res = minimize(func, best_x, method='Nelder-Mead',
                       options={'xatol': options.xtol,
                                'fatol': options.ftol,
                                'maxiter': options.maxiter})
        if res.fun < best_f:
            best_x, best_f = np.array(res.x), float(res.fun)
        res = minimize(func, best_x, jac=grad, method='BFGS',
                       options={'maxiter': options.maxiter})
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = np.array(res.x), float(res.fun)
        if start_f - best_f < options.ftol * (1.0 + abs(best_f)):
            converged = True
            break
    return best_x, best_f, rounds, converged


def evaluate_starts(func, starts, threads=None, chunk_size=256):
    """Objective values at every start.  Work is split in fixed chunks so
    the result does not depend on the thread count.
    """
    chunks = [starts[i:i + chunk_size]
              for i in range(0, len(starts), chunk_size)]
    parts = parallel_map(lambda chunk: [func(x) for x in chunk], chunks,
                         threads)
    return np.array([value for part in parts for value in part],
                    dtype=np.float64)


def multistart_minimize(func, starts, grad=None, options=None, m_keep=None):
    """Evaluates ``func`` at every start, refines the ``m_keep`` best and
    returns the best refined point.
    """
    options = options or EstimatorOptions()
    if m_keep is None:
        m_keep = options.m_keep
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    values = evaluate_starts(func, starts, options.threads)
    order = rank_candidates(values, starts)
    feasible = [idx for idx in order[:m_keep] if values[idx] < PENALTY]
    if not feasible:
        raise EstimationError('All %d starting points are infeasible'
                              % len(starts))

    refined = parallel_map(lambda idx: refine(func, starts[idx], grad,
                                              options),
                           feasible, options.threads)
    xs = np.array([x for x, _, _, _ in refined])
    fs = np.array([f for _, f, _, _ in refined])
    best = rank_candidates(fs, xs)[0]
    if not np.isfinite(fs[best]) or fs[best] >= PENALTY:
        raise EstimationError('Optimization ended at a non-finite or '
                              'infeasible objective')
    return MultistartResult(xs[best], float(fs[best]), len(starts),
                            sum(x[2] for x in refined), refined[best][3])


class Restricted(object):
    """Wraps an objective so that only the parameters not listed in
    ``fixed`` are optimized.
    """

    def __init__(self, objective, fixed=None):
        self.objective = objective
        names = objective.spec.param_names
        fixed = dict(fixed or {})
        unknown = set(fixed) - set(names)
        if unknown:
            raise EstimationError('Cannot fix unknown parameters: %s'
                                  % ', '.join(sorted(unknown)))
        self.fixed = fixed
        self.free = [idx for idx, name in enumerate(names)
                     if name not in fixed]
        self.template = np.array([fixed.get(name, 0.0) for name in names],
                                 dtype=np.float64)

    def expand(self, x):
        theta = self.template.copy()
        theta[self.free] = x
        return theta

    def reduce(self, theta):
        return np.asarray(theta, dtype=np.float64)[self.free]

    def __call__(self, x):
        return self.objective(self.expand(x))

    def gradient(self, x):
        return self.objective.gradient(self.expand(x))[self.free]


def complete_estimation(spec, returns, measures, options=None, rbar=None,
                        init=None, seed_starts=None, fixed=None):
    """Multi-start estimation of a model on one sample.  ``seed_starts``
    (full parameter vectors) are evaluated in addition to the random draws;
    parameters named in ``fixed`` keep the given values.
    """
    options = options or EstimatorOptions()
    returns = np.asarray(returns, dtype=np.float64)
    if returns.size - options.burn_in < 100:
        raise EstimationError('Estimation needs at least 100 observations '
                              'after the burn-in, got %d'
                              % (returns.size - options.burn_in))
    started = time.time()
    objective = Restricted(Objective(spec, returns, measures,
                                     options.burn_in, rbar, init), fixed)
    box = dict((k, v) for k, v in sampling_box(spec, returns).items()
               if k not in objective.fixed)
    free_names = [spec.param_names[idx] for idx in objective.free]
    if not free_names:
        raise EstimationError('All parameters are fixed')
    lo = np.array([box[x][0] for x in free_names])
    hi = np.array([box[x][1] for x in free_names])
    starts = draw_uniform_starts(lo, hi, options.n_starts, options.seed)
    if seed_starts is not None:
        seeded = np.array([objective.reduce(x)
                           for x in np.atleast_2d(seed_starts)])
        starts = np.vstack([seeded, starts])

    result = multistart_minimize(objective, starts, objective.gradient,
                                 options)
    return FitResult(spec, ParamVector(spec, objective.expand(result.x)),
                     result.fun, result.starts_tried, result.refinements,
                     result.converged, time.time() - started,
                     box=dict((k, list(v)) for k, v in box.items()))


def warm_update(spec, previous, returns, measures, options=None, rbar=None,
                init=None, fixed=None):
    """One Nelder-Mead plus BFGS round seeded at the previous estimate.
    Falls back to complete estimation when the previous parameters are not
    feasible on the new sample.
    """
    options = options or EstimatorOptions()
    started = time.time()
    objective = Restricted(Objective(spec, returns, measures,
                                     options.burn_in, rbar, init), fixed)
    x0 = objective.reduce(previous.params.values)
    if objective(x0) >= PENALTY:
        rv = complete_estimation(spec, returns, measures, options, rbar,
                                 init, fixed=fixed)
        rv.fell_back = True
        return rv
    x, f, rounds, converged = refine(objective, x0, objective.gradient,
                                     options, max_alternations=1)
    if not np.isfinite(f):
        raise EstimationError('Warm update ended at a non-finite objective')
    return FitResult(spec, ParamVector(spec, objective.expand(x)), f, 1,
                     rounds, converged, time.time() - started,
                     box=previous.box)
