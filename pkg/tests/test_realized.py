import math

import numpy as np
import pytest

from tailrisk.realized import IntradayDay, MeasureError, RealizedSeries, \
     MED_CONSTANT, acjv_moment, filter_and_interpolate, np_day_sums, \
     np_moments, realized_series, realized_variance, split_skewness, \
     standardize_moments


def day(returns, **kwargs):
    return IntradayDay.from_returns(np.array(returns, dtype=np.float64),
                                    **kwargs)


def test_variance_estimators():
    assert realized_variance(day([0.01, -0.02, 0.02]), 'RV') == \
        pytest.approx(9.0e-4, rel=1e-12)
    d = day([0.01, -0.02])
    assert realized_variance(d, 'SV_POS') == pytest.approx(1.0e-4)
    assert realized_variance(d, 'SV_NEG') == pytest.approx(4.0e-4)
    assert realized_variance(day([0.01, 0.01, 0.01]), 'MED') == \
        pytest.approx(4.2581e-4, rel=1e-4)
    assert realized_variance(day([0.01, 0.01]), 'BPV') == \
        pytest.approx(3.1416e-4, rel=1e-4)
    assert MED_CONSTANT == pytest.approx(1.41937, rel=1e-4)


def test_semivariances_add_up(rng):
    for _ in range(50):
        d = day(rng.standard_normal(78) * 0.01)
        total = realized_variance(d, 'RV')
        parts = realized_variance(d, 'SV_POS') + \
            realized_variance(d, 'SV_NEG')
        assert abs(parts - total) <= 1e-15 * total


def test_variance_needs_enough_returns():
    with pytest.raises(MeasureError) as exc:
        realized_variance(day([0.01, 0.02]), 'MED')
    assert '3' in str(exc.value)
    with pytest.raises(MeasureError):
        realized_variance(day([0.01, 0.02]), 'XYZ')
    with pytest.raises(MeasureError):
        IntradayDay(0, [0.0, 0.1])


def test_variance_shift_and_scale(rng):
    prices = np.cumsum(rng.standard_normal(79) * 0.01)
    base = IntradayDay(0, prices)
    shifted = IntradayDay(0, prices + 4.2)
    scaled = IntradayDay(0, prices * 3.0)
    for kind in ('RV', 'BPV', 'SV_POS', 'SV_NEG', 'MED'):
        assert realized_variance(shifted, kind) == pytest.approx(
            realized_variance(base, kind), rel=1e-9)
        assert realized_variance(scaled, kind) == pytest.approx(
            9.0 * realized_variance(base, kind), rel=1e-12)
    assert acjv_moment(scaled, 3) == pytest.approx(
        27.0 * acjv_moment(base, 3), rel=1e-12)


def test_acjv_moment():
    d = day([0.1, -0.1])
    assert acjv_moment(d, 3) == pytest.approx(0.0, abs=1e-18)
    assert acjv_moment(d, 4) == pytest.approx(2e-4)
    assert acjv_moment(day([0.2, 0.0]), 3) == pytest.approx(8e-3)
    with pytest.raises(MeasureError):
        acjv_moment(d, 2)


def test_np_moments_flat_days():
    days = [IntradayDay(i, np.full(10, 1.5)) for i in range(5)]
    assert np_moments(days, 5) == (0.0, 0.0)


def brute_force_np(prices, pad):
    # y*, z* as explicit double sums with padding before the open
    n = len(prices) - 1

    def x(k):
        return prices[k] if k >= 0 else pad

    mu3 = mu4 = 0.0
    for i in range(1, n + 1):
        y = sum(x(i - 1) - x(i - j) for j in range(1, n + 1)) / n
        z = sum((x(i - 1) - x(i - j)) ** 2 for j in range(1, n + 1)) / n
        r = prices[i] - prices[i - 1]
        mu3 += r ** 3 + 3.0 * y * r ** 2
        mu4 += r ** 4 + 4.0 * y * r ** 3 + 6.0 * z * r ** 2
    return mu3, mu4


def test_np_sums_against_double_sum(rng):
    prices = np.array([0.0, 0.0, 0.3, 0.3, 0.3])
    d = IntradayDay(0, prices)
    expected = brute_force_np(prices, prices[0])
    assert np.allclose(np_day_sums(d), expected, rtol=1e-12, atol=1e-15)

    prices = np.cumsum(rng.standard_normal(13) * 0.02)
    d = IntradayDay(0, prices, prior_close=-0.05)
    expected = brute_force_np(prices, -0.05)
    assert np.allclose(np_day_sums(d), expected, rtol=1e-10, atol=1e-16)


def test_np_moments_homogeneity(rng):
    days = [IntradayDay(i, np.cumsum(rng.standard_normal(20) * 0.01))
            for i in range(5)]
    scaled = [IntradayDay(i, d.log_prices * 2.0) for i, d in enumerate(days)]
    mu3, mu4 = np_moments(days, 5)
    mu3_s, mu4_s = np_moments(scaled, 5)
    assert mu3_s == pytest.approx(8.0 * mu3, rel=1e-10)
    assert mu4_s == pytest.approx(16.0 * mu4, rel=1e-10)
    with pytest.raises(MeasureError):
        np_moments(days[:4], 5)


def test_standardize_moments():
    assert standardize_moments(1.0, 0.0, 3.0) == (0.0, 3.0)
    assert standardize_moments(4.0, 8.0, 48.0) == (1.0, 3.0)
    assert standardize_moments(1.0, -2.0, 9.0) == (-2.0, 9.0)
    with pytest.raises(MeasureError):
        standardize_moments(0.0, 1.0, 1.0)
    sk, ku = standardize_moments(1.0, 0.0, 3.0, mu1=0.0)
    assert (sk, ku) == (0.0, 3.0)


def test_split_skewness():
    sk = np.array([-2.0, 0.0, 1.5])
    neg, pos = split_skewness(sk)
    assert neg.tolist() == [2.0, 0.0, 0.0]
    assert pos.tolist() == [0.0, 0.0, 1.5]
    assert np.all(pos - neg == sk)
    assert np.all(neg * pos == 0.0)


def series(sk, ku):
    n = len(sk)
    return RealizedSeries(np.ones(n), sk, ku)


def test_filter_replaces_out_of_range_values():
    rv = filter_and_interpolate(series([1.0, 20.0, 2.0], [3.0, 3.0, 3.0]))
    assert rv.filtered.tolist() == [False, True, False]
    assert 1.0 <= rv.sk[1] <= 2.0
    assert rv.sk[0] == 1.0 and rv.sk[2] == 2.0

    ku = [3.0, 4.0, 25.0, 5.0, 19.9, 3.5]
    rv = filter_and_interpolate(series([0.0] * 6, ku))
    assert rv.filtered.tolist() == [False, False, True, False, False, False]
    assert 0.0 < rv.ku[2] < 20.0
    assert rv.ku[4] == 19.9


def test_filter_uses_ar1_conditional_path(rng):
    x = np.empty(400)
    x[0] = 0.0
    for t in range(1, x.size):
        x[t] = 0.7 * x[t - 1] + rng.standard_normal()
    sk = x.copy()
    sk[200] = 30.0
    rv = filter_and_interpolate(series(sk, np.full(x.size, 3.0)))
    good = np.ones(x.size, dtype=bool)
    good[200] = False
    pairs = good[1:] & good[:-1]
    mu = np.mean(sk[good])
    prev = sk[:-1][pairs] - mu
    phi = np.dot(prev, sk[1:][pairs] - mu) / np.dot(prev, prev)
    a = sk[199] - mu
    b = sk[201] - mu
    expected = mu + (phi * (a + b) - phi ** 3 * (a + b)) / (1.0 - phi ** 4)
    assert rv.sk[200] == pytest.approx(expected, rel=1e-10)


def test_filter_is_idempotent_and_identity_in_range(rng):
    s = series(rng.uniform(-3, 3, 50), rng.uniform(1, 10, 50))
    once = filter_and_interpolate(s)
    assert np.array_equal(once.sk, s.sk)
    assert np.array_equal(once.ku, s.ku)

    sk = rng.uniform(-3, 3, 50)
    sk[[3, 4, 20]] = [16.0, np.nan, -40.0]
    once = filter_and_interpolate(series(sk, np.full(50, 3.0)))
    twice = filter_and_interpolate(once)
    assert np.array_equal(once.sk, twice.sk)
    assert np.all((once.sk > -15.0) & (once.sk < 15.0))


def test_filter_without_anchors():
    with pytest.raises(MeasureError):
        filter_and_interpolate(series([20.0, 30.0], [3.0, 3.0]))


def test_realized_series(rng):
    days = []
    prior = None
    close = 0.0
    for i in range(12):
        prices = close + np.cumsum(rng.standard_normal(40) * 0.1)
        days.append(IntradayDay(i, prices, prior_close=prior,
                                date='2020-01-%02d' % (i + 1)))
        prior = close = prices[-1]
    s = realized_series(days, 'MED', tau=5)
    assert len(s) == 12
    assert s.dates[0] == '2020-01-01'
    assert s.filtered[:4].all()
    assert np.all(np.isfinite(s.sk)) and np.all(np.isfinite(s.ku))
    assert np.all((s.ku > 0.0) & (s.ku < 20.0))
    assert np.all(s.rv >= 0.0)
    mu3, mu4 = np_moments(days[3:8], 5)
    assert s.mu3[7] == pytest.approx(mu3, rel=1e-12)
    plain = np.mean([realized_variance(d, 'RV') for d in days[3:8]])
    assert s.sk[7] == pytest.approx(mu3 / plain ** 1.5, rel=1e-10) or \
        s.filtered[7]

    # the variance kind only changes the variance column
    plain_series = realized_series(days, 'RV', tau=5)
    assert np.array_equal(plain_series.sk, s.sk)
    assert np.array_equal(plain_series.ku, s.ku)
    assert not np.array_equal(plain_series.rv, s.rv)


def test_series_csv_round_trip(tmpdir_path):
    import os
    s = RealizedSeries([1.0, 2.5], [0.1, -0.3], [3.0, 4.2],
                       mu3=[0.01, 0.02], mu4=[0.3, 0.4],
                       filtered=[False, True], dates=['2001-01-02',
                                                      '2001-01-03'])
    fn = os.path.join(tmpdir_path, 'm.csv')
    s.to_csv(fn)
    back = RealizedSeries.from_csv(fn)
    assert back.dates == s.dates
    assert np.array_equal(back.rv, s.rv)
    assert np.array_equal(back.sk_neg, s.sk_neg)
    assert back.filtered.tolist() == [False, True]
    assert math.isclose(back.ku[1], 4.2)
    with pytest.raises(TypeError):
        s[0]
