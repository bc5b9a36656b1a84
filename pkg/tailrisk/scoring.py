import numpy as np

from tailrisk.utils import TailriskError, stable_sum


LOSSES = ('EM', 'ALS', 'FZ0')


class ScoreError(TailriskError):
    pass


def _check_es(e):
    e = np.asarray(e, dtype=np.float64)
    if np.any(~(e < 0.0)):
        raise ScoreError('Expected shortfall must be negative')
    return e


def _result(value):
    if np.ndim(value) == 0:
        return float(value)
    return value


def em_score(r, v, alpha):
    """Quantile (tick) loss.  The hit uses the strict inequality."""
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hit = (r < v).astype(np.float64)
    return _result((alpha - hit) * (r - v))


def fz0_score(r, v, e, alpha):
    e = _check_es(e)
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hit = (r <= v).astype(np.float64)
    return _result(-hit * (v - r) / (alpha * e) + v / e + np.log(-e) - 1.0)


def als_score(r, v, e, alpha):
    """Asymmetric-Laplace score in the simplified form where the ``r / e``
    term is dropped.
    """
    e = _check_es(e)
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hit = (r <= v).astype(np.float64)
    return _result(-np.log((1.0 - alpha) / -e) -
                   (r - v) * (alpha - hit) / (alpha * e))


def al_score(r, v, e, alpha):
    """The full Asymmetric-Laplace score, FZ0 shifted by a constant."""
    e = _check_es(e)
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hit = (r <= v).astype(np.float64)
    return _result((hit * r + v * (alpha - hit)) / (alpha * e) +
                   np.log(-e) - np.log(1.0 - alpha))


def score_path(loss, r, v, e, alpha):
    """Per-observation scores for the named loss."""
    if loss == 'EM':
        return em_score(r, v, alpha)
    elif loss == 'ALS':
        return als_score(r, v, e, alpha)
    elif loss == 'FZ0':
        return fz0_score(r, v, e, alpha)
    raise ScoreError('Unknown loss "%s"' % loss)


def score_gradient(r, v, e, alpha, loss):
    """Derivatives of a joint score with respect to ``(v, e)``.  On the
    kink ``r == v`` the subgradient with a hit is returned.
    """
    if loss not in ('ALS', 'FZ0'):
        raise ScoreError('Joint gradients exist for ALS and FZ0 only, '
                         'not "%s"' % loss)
    e = _check_es(e)
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hit = (r <= v).astype(np.float64)
    dv = (-1.0 / e) * (hit / alpha - 1.0)
    bracket = hit * (v - r) / alpha - v + e
    if loss == 'ALS':
        bracket = bracket + r
    de = bracket / (e * e)
    return _result(dv), _result(de)


def em_gradient(r, v, alpha):
    """Derivative of the quantile loss with respect to ``v``."""
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return _result((r < v).astype(np.float64) - alpha)


def aggregate_score(scores, burn_in=0):
    """Mean of per-observation scores after dropping a burn-in prefix."""
    scores = np.asarray(scores, dtype=np.float64)
    if burn_in < 0:
        raise ScoreError('Burn-in must be non-negative')
    kept = scores[burn_in:]
    if kept.size == 0:
        raise ScoreError('Burn-in of %d leaves no observations out of %d'
                         % (burn_in, scores.size))
    return stable_sum(kept) / kept.size


def aggregate_path_score(path, returns, loss, alpha, burn_in=0):
    """Mean score of a filtered path against the realized returns."""
    returns = np.asarray(returns, dtype=np.float64)
    if returns.shape != path.v.shape:
        raise ScoreError('Path has %d days but %d returns were given'
                         % (path.v.size, returns.size))
    return aggregate_score(score_path(loss, returns, path.v, path.e, alpha),
                           burn_in)
