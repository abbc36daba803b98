import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from gradcheck import check
from labelunc import autodiff as ad
from labelunc import losses
from labelunc.distributions import UndefinedMomentError

series = arrays(np.float64, st.integers(2, 40), elements=st.floats(-100, 100))


@given(series, series)
def test_ccc_bounded_and_symmetric(a, b):
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    c = losses.ccc(a, b)
    assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12
    assert c == pytest.approx(losses.ccc(b, a), abs=1e-12)


@given(series)
def test_ccc_identity(a):
    assume(np.ptp(a) > 1e-6)
    assert losses.ccc(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ccc_degenerate_rules():
    x = np.linspace(0, 1, 10)
    assert losses.ccc(np.ones(5), np.ones(5)) == 1.0
    assert losses.ccc(np.ones(5), 2 * np.ones(5)) == 0.0
    assert losses.ccc(x, np.full(10, 0.3)) == 0.0
    assert losses.ccc(np.full(10, 0.3), x) == 0.0


def test_ccc_underflowing_spread_is_finite():
    a = np.array([9.2e-204, 0.0])
    assert losses.ccc(a, a.copy()) == 1.0


def test_ccc_penalises_bias_and_scale():
    x = np.sin(np.linspace(0, 6, 50))
    assert losses.ccc(x, x + 1.0) < losses.ccc(x, x + 0.1) < 1.0
    assert losses.ccc(x, 2 * x) < 1.0
    # loop oracle with population moments
    y = 0.5 * x + 0.2
    mx, my = x.mean(), y.mean()
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / len(x)
    oracle = 2 * cov / (x.var() + y.var() + (mx - my) ** 2)
    assert losses.ccc(x, y) == pytest.approx(oracle, rel=1e-12)


def test_ccc_length_mismatch():
    with pytest.raises(ValueError):
        losses.ccc(np.zeros(3), np.zeros(4))


def test_kl_gaussian_zero_at_equality_and_positive():
    assert losses.kl_gaussian(0.3, 0.7, 0.3, 0.7) == pytest.approx(0.0, abs=1e-15)
    assert losses.kl_gaussian(0.0, 1.0, 1.0, 1.0) == pytest.approx(0.5)


def test_kl_gaussian_quadrature():
    m, s, mh, sh = 0.2, 0.6, -0.1, 1.1
    f = lambda y: stats.norm.pdf(y, m, s) * (stats.norm.logpdf(y, m, s) - stats.norm.logpdf(y, mh, sh))  # noqa: E731
    assert losses.kl_gaussian(m, s, mh, sh) == pytest.approx(integrate.quad(f, -np.inf, np.inf)[0], abs=1e-9)


@given(
    st.floats(2.5, 200), st.floats(-2, 2), st.floats(0.05, 3), st.floats(-2, 2), st.floats(0.05, 3)
)
@settings(max_examples=200)
def test_kl_t_non_negative(nu, m, s, mh, sh):
    assert losses.kl_t(nu, m, s, mh, sh) >= -1e-12


@pytest.mark.parametrize("nu", [3.0, 6.0, 30.0])
def test_kl_t_minimised_at_moment_match(nu):
    s = 0.8
    best = math.sqrt(nu / (nu - 2)) * s
    k0 = losses.kl_t(nu, 0.0, s, 0.0, best)
    for d in (-0.05, 0.05):
        assert losses.kl_t(nu, 0.0, s, 0.0, best + d) > k0


def test_kl_t_rejects_small_nu():
    with pytest.raises(UndefinedMomentError):
        losses.kl_t(2.0, 0, 1, 0, 1)


def test_kl_t_dominates_gaussian_for_narrow_estimates():
    # heavier tails cost more when the estimate is narrow relative to the truth
    for nu in (4.0, 6.0, 12.0):
        for ratio in (0.25, 0.5, 1.0):
            s = 1.0
            assert losses.kl_t(nu, 0.0, s, 0.0, ratio * s) > losses.kl_gaussian(0.0, s, 0.0, ratio * s)


def test_kl_t_as_printed_differs_by_variance_term():
    nu, m, s, mh, sh = 6.0, 0.1, 0.5, 0.0, 0.7
    diff = losses.kl_t(nu, m, s, mh, sh) - losses.kl_t_as_printed(nu, m, s, mh, sh)
    assert diff == pytest.approx((nu / (nu - 2) - 1) * s * s / (2 * sh * sh))


def test_kl_label_dispatch():
    args = (0.0, 0.5, 0.1, 0.6)
    assert losses.kl_label("t", 5.0, *args) == losses.kl_t(5.0, *args)
    assert losses.kl_label("normal", 5.0, *args) == losses.kl_gaussian(*args)
    with pytest.raises(ValueError):
        losses.normalize_family("laplace")


def test_vectorised_losses_return_arrays():
    out = losses.kl_t(6.0, np.zeros(4), np.ones(4), np.zeros(4), np.full(4, 1.2))
    assert isinstance(out, np.ndarray) and out.shape == (4,)


def test_gaussian_nll_value():
    y = np.array([0.0, 1.0])
    expected = 2 * 0.5 * math.log(2 * math.pi) + 0.5
    assert losses.gaussian_nll(y, np.zeros(2)) == pytest.approx(expected)
    assert losses.gaussian_nll(y, np.zeros(2), sigma=2.0) == pytest.approx(-stats.norm.logpdf(y, 0, 2).sum())


def test_elbo_bbb_sum_and_errors():
    assert losses.elbo_bbb([1.0, 2.0], [0.5, 0.5], [-1.0, -2.0]) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        losses.elbo_bbb([], [], [])
    with pytest.raises(ValueError):
        losses.elbo_bbb([1.0], [1.0, 2.0], [0.0])


def test_composite_loss_and_config():
    cfg = losses.CompositeLossConfig(alpha=0.5, truth_family="t")
    assert cfg.truth_family == "student_t"
    assert losses.composite_loss(0.8, 1.0, 2.0, cfg) == pytest.approx(0.2 + 1.0 + 1.0)
    with pytest.raises(ValueError):
        losses.CompositeLossConfig(alpha=1.5)


def test_alpha_zero_blocks_kl_gradient():
    with ad.Tape() as tape:
        kl = ad.Node(np.array(0.7), requires_grad=True)
        total = losses.composite_loss(ad.Node(0.5), ad.Node(1.0), kl, losses.CompositeLossConfig(0.0))
        tape.backward(total)
    assert float(kl.grad) == 0.0


@pytest.mark.parametrize("name", ["ccc", "kl_gaussian", "kl_t"])
def test_loss_gradients(name, rng):
    n = rng.standard_normal
    p = lambda k: rng.uniform(0.3, 2.0, k)  # noqa: E731
    if name == "ccc":
        fn, args = losses.ccc, [n(15), n(15)]
    elif name == "kl_gaussian":
        fn, args = losses.kl_gaussian, [n(5), p(5), n(5), p(5)]
    else:
        fn, args = (lambda *a: losses.kl_t(4.0, *a)), [n(5), p(5), n(5), p(5)]
    assert check(fn, args, rng) < 1e-6
