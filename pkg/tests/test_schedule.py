import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullface.errors import DataCorruptionError, ValidationError
from nullface.schedule import (add_noise, default_schedule, make_linear_schedule,
                               posterior_mean, schedule_from_betas,
                               schedule_from_json, schedule_to_json)

# frozen with an independent high-precision evaluation (mpmath, 40 digits)
SIGMA2_T3 = 0.2672612419124244
PM_BETA019 = 0.5156778951621474


def test_linear_schedule_tables():
    s = make_linear_schedule(3, 0.1, 0.3)
    assert np.allclose(s.betas, [0.1, 0.2, 0.3], atol=1e-15)
    assert np.allclose(s.alpha_bars[1:], [0.9, 0.72, 0.504], atol=1e-12)
    assert s.alpha_bar(0) == 1.0


def test_single_step_schedule():
    s = make_linear_schedule(1, 0.5, 0.5)
    assert s.alpha_bar(1) == pytest.approx(0.5)
    assert s.sigma(1) == 0.0


def test_sigma2_matches_oracle():
    s = make_linear_schedule(3, 0.1, 0.3)
    assert s.sigma(2) == pytest.approx(SIGMA2_T3, abs=1e-12)


def test_sigma_positive_above_one():
    s = default_schedule(50)
    assert s.sigma(1) == 0.0
    assert all(s.sigma(t) > 0 for t in range(2, 51))


def test_alpha_bar_strictly_decreasing():
    s = default_schedule(100)
    assert np.all(np.diff(s.alpha_bars) < 0)


@pytest.mark.parametrize("args", [
    (0, 0.1, 0.2), (3, 0.0, 0.2), (3, 0.2, 0.1), (3, 0.1, 1.0),
    (3, float("nan"), 0.2), (3, 0.1, float("inf")),
])
def test_rejects_bad_parameters(args):
    with pytest.raises(ValidationError):
        make_linear_schedule(*args)


def test_beta_variant_keeps_final_step_deterministic():
    s = make_linear_schedule(4, 0.1, 0.4, variant="beta")
    assert s.sigma(1) == 0.0
    assert s.sigma(2) == pytest.approx(np.sqrt(0.2))


def test_serialization_bit_exact():
    s = make_linear_schedule(37, 0.003, 0.17)
    s2 = schedule_from_json(schedule_to_json(s))
    for name in ("betas", "alphas", "alpha_bars", "posterior_sigmas"):
        assert np.array_equal(getattr(s, name), getattr(s2, name))
    assert s.fingerprint == s2.fingerprint


def test_serialization_rejects_bad_records():
    s = make_linear_schedule(5, 0.01, 0.1)
    good = schedule_to_json(s)
    with pytest.raises(DataCorruptionError):
        schedule_from_json(good.replace('"version": 1', '"version": 99'))
    with pytest.raises(DataCorruptionError):
        schedule_from_json("{not json")
    with pytest.raises(ValidationError):
        schedule_to_json(schedule_from_betas([0.1, 0.2]))


def test_add_noise_zero_noise_identity():
    s = make_linear_schedule(3, 0.1, 0.3)
    x0 = np.ones((2, 4, 4), dtype=np.float32)
    assert np.array_equal(add_noise(x0, 0, np.zeros_like(x0), s), x0)
    out = add_noise(x0, 1, np.zeros_like(x0), s)
    assert np.allclose(out, np.sqrt(0.9), atol=1e-7)


def test_add_noise_pure_noise_scaling():
    s = schedule_from_betas([0.25])  # alpha_bar_1 = 0.75
    e = np.full((1, 2, 2), 3.0, dtype=np.float32)
    out = add_noise(np.zeros_like(e), 1, e, s)
    assert np.allclose(out, 0.5 * 3.0, atol=1e-7)


def test_add_noise_hand_value():
    s = schedule_from_betas([0.36])  # alpha_bar_1 = 0.64
    out = add_noise(np.array([[[2.0]]], dtype=np.float32),
                    1, np.array([[[-1.0]]], dtype=np.float32), s)
    assert out[0, 0, 0] == pytest.approx(0.8 * 2.0 - 0.6, abs=1e-6)


def test_add_noise_errors():
    s = make_linear_schedule(3, 0.1, 0.3)
    x = np.zeros((1, 2, 2), dtype=np.float32)
    with pytest.raises(ValidationError):
        add_noise(x, 4, np.zeros_like(x), s)
    with pytest.raises(ValidationError):
        add_noise(x, 1, np.zeros((1, 2, 3), dtype=np.float32), s)


def test_posterior_mean_zero_prediction():
    s = schedule_from_betas([0.19])
    x = np.full((1, 2, 2), 1.7, dtype=np.float32)
    out = posterior_mean(x, np.zeros_like(x), 1, s)
    assert np.allclose(out, 1.7 / np.sqrt(0.81), atol=1e-6)


def test_posterior_mean_hand_value():
    s = schedule_from_betas([0.19])  # beta_1 = 0.19, alpha_bar_1 = 0.81
    out = posterior_mean(np.array([[[0.9]]], dtype=np.float32),
                         np.array([[[1.0]]], dtype=np.float32), 1, s)
    assert out[0, 0, 0] == pytest.approx(PM_BETA019, abs=1e-6)


def test_posterior_mean_rejects_nonfinite():
    s = schedule_from_betas([0.19])
    x = np.array([[[np.nan]]], dtype=np.float32)
    with pytest.raises(ValidationError):
        posterior_mean(x, np.zeros_like(x), 1, s)
    with pytest.raises(ValidationError):
        posterior_mean(np.zeros((1, 1, 1), dtype=np.float32),
                       np.zeros((1, 1, 1), dtype=np.float32), 2, s)


def _reference_posterior_mean(x_t, x0, t, s):
    # independent oracle: the (x0, x_t)-parameterized DDPM posterior mean
    abar_prev = s.alpha_bar(t - 1)
    abar = s.alpha_bar(t)
    c0 = np.sqrt(abar_prev) * s.beta(t) / (1.0 - abar)
    ct = np.sqrt(s.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar)
    return c0 * x0 + ct * x_t


def test_reparameterization_consistency():
    s = default_schedule(25)
    g = np.random.default_rng(42)
    worst = 0.0
    for trial in range(1100):
        t = int(g.integers(1, 26))
        x0 = g.standard_normal((2, 3, 3)).astype(np.float32)
        eps = g.standard_normal((2, 3, 3)).astype(np.float32)
        x_t = add_noise(x0, t, eps, s)
        got = posterior_mean(x_t, eps, t, s)
        want = _reference_posterior_mean(x_t.astype(np.float64),
                                         x0.astype(np.float64), t, s)
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst < 1e-5


@settings(max_examples=60, deadline=None)
@given(t_count=st.integers(1, 40),
       start=st.floats(1e-5, 0.4), spread=st.floats(0.0, 0.5))
def test_schedule_derived_tables_are_pure_functions(t_count, start, spread):
    end = min(start + spread, 0.95)
    a = make_linear_schedule(t_count, start, end)
    b = make_linear_schedule(t_count, start, end)
    assert np.array_equal(a.alpha_bars, b.alpha_bars)
    assert np.array_equal(a.posterior_sigmas, b.posterior_sigmas)
    assert a.alpha_bars[0] == 1.0 and a.sigma(1) == 0.0
