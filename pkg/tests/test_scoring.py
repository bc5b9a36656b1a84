import math

import numpy as np
import pytest

from tailrisk.models import RiskPath
from tailrisk.scoring import ScoreError, aggregate_path_score, \
     aggregate_score, al_score, als_score, em_gradient, em_score, \
     fz0_score, score_gradient, score_path


def random_tuples(rng, n):
    v = -rng.uniform(0.1, 3.0, n)
    e = v - rng.uniform(0.01, 2.0, n)
    r = rng.standard_normal(n) * 2.0
    return r, v, e


def test_em_score():
    assert em_score(1.0, 0.0, 0.05) == pytest.approx(0.05)
    assert em_score(-1.3, -1.3, 0.05) == 0.0
    assert em_score(-2.0, -1.0, 0.05) == pytest.approx(0.95)


def test_fz0_score():
    assert fz0_score(-1.0, -1.0, -1.0, 0.05) == pytest.approx(0.0,
                                                              abs=1e-15)
    assert fz0_score(0.0, -1.0, -1.0, 0.05) == pytest.approx(0.0,
                                                             abs=1e-15)
    with pytest.raises(ScoreError):
        fz0_score(0.0, -1.0, 0.0, 0.05)


def test_fz0_homogeneity(rng):
    r, v, e = random_tuples(rng, 1000)
    c = 3.7
    base = fz0_score(r, v, e, 0.025)
    scaled = fz0_score(c * r, c * v, c * e, 0.025)
    assert np.allclose(scaled - base, math.log(c), atol=1e-10)


def test_als_score():
    assert als_score(-1.0, -1.0, -1.0, 0.05) == \
        pytest.approx(-math.log(0.95), rel=1e-12)
    assert als_score(0.0, -1.0, -1.0, 0.05) == \
        pytest.approx(1.0 - math.log(0.95), rel=1e-12)
    assert als_score(-1.0, -1.0, -1.0, 0.05) == pytest.approx(0.051293,
                                                              rel=1e-5)


def test_als_fz0_identity(rng):
    r, v, e = random_tuples(rng, 100000)
    for alpha in (0.01, 0.025, 0.05):
        diff = als_score(r, v, e, alpha) - fz0_score(r, v, e, alpha)
        expected = 1.0 - math.log(1.0 - alpha) - r / e
        assert np.max(np.abs(diff - expected)) < 1e-12 * 100


def test_full_al_is_shifted_fz0(rng):
    r, v, e = random_tuples(rng, 500)
    diff = al_score(r, v, e, 0.05) - fz0_score(r, v, e, 0.05)
    assert np.allclose(diff, 1.0 - math.log(0.95), atol=1e-10)


def numeric_gradient(loss, r, v, e, alpha, h=1e-6):
    f = lambda v, e: score_path(loss, r, v, e, alpha)
    dv = (f(v + h, e) - f(v - h, e)) / (2.0 * h)
    de = (f(v, e + h) - f(v, e - h)) / (2.0 * h)
    return dv, de


def test_score_gradient_examples():
    dv, de = score_gradient(0.0, -1.0, -1.0, 0.05, 'FZ0')
    assert dv == pytest.approx(-1.0)
    assert de == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ScoreError):
        score_gradient(0.0, -1.0, -1.0, 0.05, 'EM')


def test_score_gradient_matches_finite_differences(rng):
    r, v, e = random_tuples(rng, 300)
    # stay away from the kink
    keep = np.abs(r - v) > 1e-3
    r, v, e = r[keep], v[keep], e[keep]
    for loss in ('ALS', 'FZ0'):
        dv, de = score_gradient(r, v, e, 0.05, loss)
        ndv, nde = numeric_gradient(loss, r, v, e, 0.05)
        assert np.allclose(dv, ndv, rtol=1e-5, atol=1e-6)
        assert np.allclose(de, nde, rtol=1e-5, atol=1e-6)


def test_als_and_fz0_gradients(rng):
    r, v, e = random_tuples(rng, 200)
    dv_a, de_a = score_gradient(r, v, e, 0.025, 'ALS')
    dv_f, de_f = score_gradient(r, v, e, 0.025, 'FZ0')
    assert np.array_equal(dv_a, dv_f)
    assert np.allclose(de_a - de_f, r / (e * e), rtol=1e-12, atol=1e-14)


def test_em_gradient():
    assert em_gradient(-2.0, -1.0, 0.05) == pytest.approx(0.95)
    assert em_gradient(0.0, -1.0, 0.05) == pytest.approx(-0.05)


def test_aggregate_score():
    assert aggregate_score([0.0, 1.0]) == 0.5
    assert aggregate_score([5.0, 0.0, 1.0], burn_in=1) == 0.5
    with pytest.raises(ScoreError):
        aggregate_score([1.0, 2.0], burn_in=2)


def test_aggregate_path_score(rng):
    r, v, e = random_tuples(rng, 50)
    path = RiskPath(v, e)
    brute = sum(als_score(r, v, e, 0.05)[10:]) / 40.0
    assert aggregate_path_score(path, r, 'ALS', 0.05, burn_in=10) == \
        pytest.approx(brute, rel=1e-12)
    with pytest.raises(ScoreError):
        aggregate_path_score(path, r[:-1], 'ALS', 0.05)
    with pytest.raises(ScoreError):
        score_path('QL', r, v, e, 0.05)
