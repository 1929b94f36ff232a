import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.linalg import LinAlgError

from edgecam import gpforecast as gp
from edgecam.energy import EnergyParams, synth_solar_trace
from edgecam.gpforecast import (DailyForecaster, ForecastWindow, GpModel, Hyper, backtest,
                                fit_points, forecast_energy, forecast_feature, kernel,
                                kernel_matrix, log_marginal_likelihood)

hours = st.floats(-500, 500, allow_nan=False)


# -- kernel ----------------------------------------------------------------------

def test_kernel_zero_lag():
    hp = Hyper(2.0, 0.7, 0.3)
    assert kernel(5.0, 5.0, hp) == pytest.approx(2.3)


def test_kernel_full_period_lag():
    hp = Hyper(2.0, 0.7, 0.3)
    assert kernel(1.0, 25.0, hp) == pytest.approx(2.0)


def test_kernel_half_period_closed_form():
    assert kernel(0.0, 12.0, Hyper(1.0, 1.0, 1e-3)) == pytest.approx(math.exp(-2.0), rel=1e-12)


@given(hours, hours, st.floats(0.1, 5), st.floats(0.05, 20), st.floats(1e-6, 1))
def test_kernel_symmetric(t1, t2, s, l, n):
    hp = Hyper(s, l, n)
    assert kernel(t1, t2, hp) == kernel(t2, t1, hp)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 200), min_size=2, max_size=25, unique=True),
       st.floats(0.1, 3), st.floats(0.1, 5), st.floats(1e-6, 0.5))
def test_noise_shifts_spectrum(x, s, l, n):
    x = np.array(x)
    base = np.linalg.eigvalsh(kernel_matrix(x, Hyper(s, l, n), noise=False))
    noisy = np.linalg.eigvalsh(kernel_matrix(x, Hyper(s, l, n)))
    np.testing.assert_allclose(noisy, base + n, atol=1e-9 * s * x.size)
    np.testing.assert_array_equal(kernel_matrix(x, Hyper(s, l, n)),
                                  kernel_matrix(x, Hyper(s, l, n)).T)
    gp._dense_factor(x, Hyper(s, l, n))


# -- fitting -------------------------------------------------------------------

def _sine(days=7, step=1.0):
    x = np.arange(0.0, days * 24.0, step)
    return x, np.sin(2 * np.pi * x / 24.0)


def test_noiseless_sine_reproduced_at_training_points():
    x, y = _sine()
    model = fit_points(x, y)
    mean, _ = model.predict(x)
    assert np.max(np.abs(mean - y)) < 1e-2


def test_noiseless_sine_reproduced_on_dense_route():
    x, y = _sine(days=3)
    model = fit_points(x, y, method="dense")
    assert model.route == "dense"
    assert np.max(np.abs(model.predict(x)[0] - y)) < 1e-2


def test_zero_targets_give_zero_mean():
    x = np.arange(0.0, 48.0, 0.5)
    model = fit_points(x, np.zeros_like(x))
    mean, _ = model.predict(np.linspace(-30, 100, 50))
    np.testing.assert_array_equal(mean, 0.0)
    assert model.hp.sigma_p2 == pytest.approx(1e-8)


def test_fit_is_deterministic():
    tr = synth_solar_trace(3, seed=4)
    x, y = gp.bin_means(tr.t, tr.current, 600.0, 0.0, 3 * 86400.0)
    assert fit_points(x, y).hp == fit_points(x, y).hp


def test_fit_needs_two_distinct_times():
    with pytest.raises(ValueError):
        fit_points([1.0, 1.0], [0.0, 1.0])


def test_fft_and_dense_routes_agree():
    tr = synth_solar_trace(4, seed=9)
    x, y = gp.bin_means(tr.t, tr.current, 1800.0, 0.0, 4 * 86400.0)
    yc = y - y.mean()
    hp = Hyper(0.4, 0.6, 0.01)
    assert log_marginal_likelihood(x, yc, hp, "fft") == pytest.approx(
        log_marginal_likelihood(x, yc, hp, "dense"), rel=1e-9)
    a = GpModel(hp, x, yc, float(y.mean()), "fft")
    b = GpModel(hp, x, yc, float(y.mean()), "dense")
    q = np.linspace(-5, 130, 77)
    for ua, ub in zip(a.predict(q), b.predict(q)):
        np.testing.assert_allclose(ua, ub, atol=1e-9)


def test_jitter_escalates_on_singular_matrix():
    x = np.zeros(3)
    (c, _), jitter = gp._dense_factor(x, Hyper(1.0, 1.0, 1e-300))
    assert jitter > 0
    assert np.all(np.isfinite(c))


def test_factorization_failure_raises(monkeypatch):
    def refuse(*a, **k):
        raise LinAlgError("not positive definite")
    monkeypatch.setattr(gp, "cho_factor", refuse)
    with pytest.raises(gp.FactorizationError):
        gp._dense_factor(np.arange(3.0), Hyper(1.0, 1.0, 0.1))


# -- posterior -----------------------------------------------------------------

def test_shrinkage_toward_training_target():
    x = np.array([1.0, 5.0, 9.0])
    y = np.array([2.0, -1.0, 0.5])
    model = GpModel(Hyper(1.0, 1.0, 0.3), x, y, 0.0, "dense")
    mean, _ = model.predict(x)
    assert np.all(np.abs(mean - y) <= np.abs(0.0 - y))


def test_prior_reversion_far_from_data():
    hp = Hyper(1.5, 0.05, 0.01)
    model = GpModel(hp, np.array([0.0, 1.0]), np.array([1.0, -1.0]), 0.0, "dense")
    mean, var = model.predict(np.array([12.0]))
    assert abs(mean[0]) < 1e-6
    assert var[0] == pytest.approx(1.5, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 200), min_size=2, max_size=20, unique=True),
       st.floats(0.1, 3), st.floats(0.1, 5), st.floats(1e-4, 0.5), st.integers(0, 1000))
def test_posterior_variance_below_prior(x, s, l, n, seed):
    x = np.array(x)
    y = np.random.default_rng(seed).normal(size=x.size)
    model = GpModel(Hyper(s, l, n), x, y, 0.0, "dense")
    _, var = model.predict(np.linspace(-10, 210, 60), include_noise=True)
    assert np.all(var >= 0.0)
    assert np.all(var <= s + n + 1e-8)


def test_periodic_data_gives_periodic_predictions():
    x, y = _sine(step=0.5)
    model = fit_points(x, 0.3 + y)
    q = np.linspace(0, 48, 200)
    a, _ = model.predict(q)
    b, _ = model.predict(q + 24.0)
    assert np.max(np.abs(a - b)) < 1e-6


# -- forecast feature ----------------------------------------------------------

def _constant_model(current):
    x = np.arange(0.0, 48.0, 1.0)
    return fit_points(x, np.full(x.size, current))


def test_forecast_energy_closed_form():
    # 0.5 A x 6.1 V x 0.8 = 2.44 W over 6 h
    e = forecast_energy(_constant_model(0.5), 1000.0, 6.0, 6.1, 0.8)
    assert e == pytest.approx(2.44 * 21600, rel=1e-9)
    assert e == pytest.approx(52.7e3, rel=1e-3)


def test_feature_zero_for_zero_model():
    assert forecast_feature(_constant_model(0.0), 3600.0, EnergyParams()) == 0.0


def test_feature_saturates_at_panel_peak():
    f = forecast_feature(_constant_model(8.0 / 6.1), 0.0, EnergyParams(), peak_watts=8.0)
    assert f == pytest.approx(1.0)
    assert forecast_feature(_constant_model(5.0), 0.0, EnergyParams()) == 1.0


def test_negative_predicted_current_clamped():
    assert forecast_energy(_constant_model(-1.0), 0.0, 6.0, 6.1, 0.8) == 0.0


# -- daily schedule and backtest -----------------------------------------------

@pytest.mark.parametrize("days", [1.0, 2.5, 3.0])
def test_one_fit_per_simulated_day(days):
    traces = [synth_solar_trace(4, seed=1, history_days=2)]
    fc = DailyForecaster(traces, window=ForecastWindow(fit_days=2))
    for t in np.arange(0.0, days * 86400.0, 600.0):
        f = fc.features(t)
        assert 0.0 <= f[0] <= 1.0
    assert fc.fits == math.ceil(days)


def test_forecaster_without_history_reports_zero():
    fc = DailyForecaster([synth_solar_trace(2, seed=1)], window=ForecastWindow(fit_days=1))
    assert fc.features(12 * 3600.0)[0] == 0.0
    assert fc.features(86400.0 + 8 * 3600.0)[0] > 0.0


def test_gp_beats_persistence_on_synthetic_diurnal_traces(tmp_path):
    traces = [synth_solar_trace(7, seed=s, camera=0, history_days=7) for s in (3, 4)]
    result = backtest(traces, 7)
    assert result.rmse_gp < result.rmse_persistence
    result.write_csv(tmp_path / "f.csv", "demo")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[1] == "day,camera,origin_hour,horizon_hours,predicted_joules,actual_joules"
    assert len(lines) == 2 + 2 * 7 * 4


def test_window_validation():
    with pytest.raises(ValueError):
        ForecastWindow(bin_min=0)
    with pytest.raises(ValueError):
        ForecastWindow(fit_days=0.1, horizon_h=6)
    with pytest.raises(ValueError):
        Hyper(0.0, 1.0, 1.0)
