import math
import warnings

import numpy as np
import pytest
from scipy import stats

from labelunc import autodiff as ad
from labelunc.bnn import (
    BbbLayer,
    SamplingSchedule,
    VariationalParam,
    aggregate_predictive,
    forward_mean,
    forward_stochastic,
    gaussian_kl_closed_form,
    inverse_softplus,
    layer_kl_to_prior,
    predictive_std,
    softplus_sigma,
    window_count,
)


def test_softplus_roundtrip():
    s = np.array([1e-4, 0.1, 1.0, 5.0])
    np.testing.assert_allclose(softplus_sigma(inverse_softplus(s)), s, rtol=1e-10)
    assert VariationalParam(0.0, 0.0).sigma_w == pytest.approx(math.log(2.0))


def test_schedule_validation():
    with pytest.raises(ValueError):
        SamplingSchedule(0)
    with pytest.warns(UserWarning):
        SamplingSchedule(10, n_passes=5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        SamplingSchedule(10, n_passes=30)


def test_draw_log_densities_match_scipy(rng):
    layer = BbbLayer(3, 2, rng)
    eps_w, eps_b = rng.standard_normal((3, 2)), rng.standard_normal(2)
    w, b, lq, lp = layer.draw(eps_w, eps_b)
    sw = softplus_sigma(layer.w_rho.value)
    sb = softplus_sigma(layer.b_rho.value)
    np.testing.assert_allclose(w.value, layer.w_mu.value + sw * eps_w)
    ref_q = stats.norm.logpdf(w.value, layer.w_mu.value, sw).sum() + stats.norm.logpdf(b.value, layer.b_mu.value, sb).sum()
    ref_p = stats.norm.logpdf(w.value).sum() + stats.norm.logpdf(b.value).sum()
    assert float(lq.value) == pytest.approx(ref_q)
    assert float(lp.value) == pytest.approx(ref_p)


def test_windowed_sampling_shares_weights_within_windows(rng):
    layers = [BbbLayer(2, 1, rng, rho_init=(0.0, 0.5))]
    feats = np.ones((1, 23, 2))  # constant input: output changes only when weights do
    out = forward_stochastic(layers, feats, SamplingSchedule(5, 30), seed=4, activation=lambda h: h)
    y = out.outputs.value
    assert y.shape == (30, 1, 23)
    assert out.n_windows == window_count(23, 5) == 5
    for start in range(0, 23, 5):
        block = y[:, 0, start : start + 5]
        np.testing.assert_allclose(block, block[:, :1].repeat(block.shape[1], axis=1))
    assert not np.allclose(y[:, 0, 0], y[:, 0, 5])
    assert out.log_q.shape == (30,)


def test_sequences_share_draws_within_a_pass(rng):
    layers = [BbbLayer(1, 1, rng, rho_init=(0.0, 0.5))]
    feats = np.ones((2, 10, 1))
    y = forward_stochastic(layers, feats, SamplingSchedule(10, 30), 0).outputs.value
    np.testing.assert_allclose(y[:, 0], y[:, 1])


def test_stochastic_pass_deterministic_in_seed(rng):
    layers = [BbbLayer(3, 4, rng), BbbLayer(4, 1, rng)]
    x = rng.standard_normal((2, 12, 3))
    sched = SamplingSchedule(4, 30)
    a = forward_stochastic(layers, x, sched, 9).outputs.value
    b = forward_stochastic(layers, x, sched, 9).outputs.value
    c = forward_stochastic(layers, x, sched, 10).outputs.value
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_tiny_sigma_collapses_to_mean_path(rng):
    layers = [BbbLayer(3, 4, rng, rho_init=(-40, -39)), BbbLayer(4, 1, rng, rho_init=(-40, -39))]
    x = rng.standard_normal((2, 7, 3))
    stoch = forward_stochastic(layers, x, SamplingSchedule(3, 30), 1).outputs.value
    mean = forward_mean(layers, x).value
    np.testing.assert_allclose(stoch, np.broadcast_to(mean, stoch.shape), atol=1e-12)


def test_aggregate_predictive_unbiased(rng):
    y = rng.standard_normal((30, 5))
    p = aggregate_predictive(y)
    np.testing.assert_allclose(p.s_hat, y.std(axis=0, ddof=1))
    np.testing.assert_allclose(p.m_hat, y.mean(axis=0))
    p2 = aggregate_predictive(y, mean_output=np.zeros(5))
    np.testing.assert_array_equal(p2.m_hat, np.zeros(5))
    with pytest.raises(ValueError):
        aggregate_predictive(y[:1])


def test_predictive_std_floor(rng):
    y = np.zeros((30, 4))
    np.testing.assert_allclose(predictive_std(y, floor=1e-3), 1e-3)
    z = rng.standard_normal((30, 4))
    np.testing.assert_allclose(predictive_std(z), z.std(axis=0, ddof=1))


def test_closed_form_kl_and_layer_kl(rng):
    assert gaussian_kl_closed_form(0.0, 1.0) == pytest.approx(0.0)
    assert gaussian_kl_closed_form(1.0, 1.0) == pytest.approx(0.5)
    layer = BbbLayer(2, 2, rng)
    mus = np.concatenate([layer.w_mu.value.ravel(), layer.b_mu.value])
    sig = softplus_sigma(np.concatenate([layer.w_rho.value.ravel(), layer.b_rho.value]))
    ref = sum(np.log(1 / s) + (s * s + m * m) / 2 - 0.5 for m, s in zip(mus, sig))
    assert layer_kl_to_prior(layer) == pytest.approx(ref)
    assert len(layer.variational_params()) == 6


def test_gradients_reach_variational_parameters(rng):
    layer = BbbLayer(2, 1, rng)
    x = rng.standard_normal((1, 6, 2))
    with ad.Tape() as tape:
        out = forward_stochastic([layer], x, SamplingSchedule(3, 30), 0)
        tape.backward(ad.sum_(out.outputs) + ad.sum_(out.log_q - out.log_p))
    for p in layer.parameters():
        assert p.grad is not None and np.all(np.isfinite(p.grad))
