import numpy as np
import pytest
from scipy.stats import norm

from core.rng import RngStream
from core.analysis import (
    mean_and_se, pooled_se, within_band, log_linear_fit, fit_geometric_envelope,
    histogram_tv, histogram_noise_floor, gaussian_tv
)


def test_mean_and_se():
    m, se = mean_and_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert mean_and_se([7.0]) == (7.0, 0.0)
    with pytest.raises(ValueError):
        mean_and_se([])


def test_band_helpers():
    assert pooled_se(3.0, 4.0) == pytest.approx(5.0)
    assert within_band(0.3, 0.1, 3.0)
    assert not within_band(0.31, 0.1, 3.0)
    assert within_band(0.31, 0.1, 3.0, floor=0.02)


def test_log_linear_fit_recovers_rate():
    k = np.arange(20)
    fit = log_linear_fit(k, 3.0 * 0.7 ** k)
    assert fit.rate == pytest.approx(0.7, rel=1e-10)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.n_points == 20


def test_log_linear_fit_drops_plateau():
    y = np.concatenate([0.5 ** np.arange(10), np.zeros(5)])
    fit = log_linear_fit(np.arange(15), y)
    assert fit.n_points == 10
    assert fit.rate == pytest.approx(0.5)
    with pytest.raises(ValueError):
        log_linear_fit([0, 1], [1.0, 0.0])


def test_geometric_envelope_fit():
    i = np.arange(30)
    y = 2.0 * 0.5 ** i + 0.1
    fit = fit_geometric_envelope(i, y)
    assert fit.passed
    assert fit.beta == pytest.approx(0.5, abs=1e-4)
    assert fit.m == pytest.approx(0.1, abs=1e-4)
    assert np.allclose(fit.envelope(i), y, atol=1e-4)


def test_geometric_envelope_rejects_short_input():
    with pytest.raises(ValueError):
        fit_geometric_envelope([0, 1], [1.0, 0.5])


def test_gaussian_tv_closed_forms():
    assert gaussian_tv(0.0, 1.0, 1.0, 1.0) == pytest.approx(2.0 * norm.cdf(0.5) - 1.0)
    assert gaussian_tv(0.0, 1.0, 0.0, 1.0) == 0.0
    assert gaussian_tv(2.0, 0.0, 2.0, 0.0) == 0.0
    assert gaussian_tv(2.0, 0.0, 2.0, 1.0) == 1.0
    wide = gaussian_tv(0.0, 1.0, 0.0, 2.0)
    assert 0.0 < wide < 1.0
    with pytest.raises(ValueError):
        gaussian_tv(0.0, -1.0, 0.0, 1.0)


def test_histogram_tv_noise_floor():
    s = RngStream(11)
    n = 20_000
    same = histogram_tv(s.normal(n), s.normal(n))
    assert same < histogram_noise_floor(n)
    shifted = histogram_tv(s.normal(n), s.normal(n) + 1.0)
    assert shifted == pytest.approx(gaussian_tv(0.0, 1.0, 1.0, 1.0), abs=0.05)
    assert histogram_tv([1.0, 1.0], [1.0]) == 0.0
