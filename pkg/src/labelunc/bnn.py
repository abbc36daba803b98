"""Bayes-by-Backprop dense layers with windowed weight resampling.

Each weight carries a Gaussian variational posterior N(mu_w, sigma_w^2) with
sigma_w = softplus(rho_w). A stochastic pass draws a fresh weight set every
``window_b`` frames and holds it fixed inside the window; all sequences of a
batch share the draws of a pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .distributions import LOG_SQRT_2PI, GaussianParams


@dataclass(frozen=True)
class VariationalParam:
    mu_w: float
    rho_w: float

    @property
    def sigma_w(self) -> float:
        return softplus_sigma(self.rho_w)


@dataclass(frozen=True)
class SamplingSchedule:
    window_b: int
    n_passes: int = 30

    def __post_init__(self):
        if self.window_b < 1:
            raise ValueError(f"window_b must be >= 1, got {self.window_b}")
        if self.n_passes < 1:
            raise ValueError(f"n_passes must be >= 1, got {self.n_passes}")
        if self.n_passes < 30:
            warnings.warn(
                f"n_passes={self.n_passes} < 30: the Gaussian estimate distribution is poorly supported",
                stacklevel=2,
            )


@dataclass
class PredictiveSeries:
    m_hat: np.ndarray
    s_hat: np.ndarray


def softplus_sigma(rho):
    """sigma = log(1 + exp(rho)); floats, arrays and Nodes alike."""
    if ad.is_node(rho):
        return ad.softplus(rho)
    r = np.asarray(rho, dtype=float)
    out = np.maximum(r, 0.0) + np.log1p(np.exp(-np.abs(r)))
    return float(out) if out.ndim == 0 else out


def inverse_softplus(sigma):
    s = np.asarray(sigma, dtype=float)
    return s + np.log(-np.expm1(-s))


def _gauss_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -LOG_SQRT_2PI - ad.log(ad.as_node(sigma)) - 0.5 * z * z


class BbbLayer:
    """Dense layer whose weights and biases are variational Gaussians."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        mu_init=(-0.1, 0.1),
        rho_init=(-3.0, -2.0),
        prior: GaussianParams = GaussianParams(0.0, 1.0),
        name: str = "bbb",
    ):
        self.d_in, self.d_out = d_in, d_out
        self.prior = prior
        self.w_mu = ad.Node(rng.uniform(*mu_init, size=(d_in, d_out)), True, f"{name}.w_mu")
        self.w_rho = ad.Node(rng.uniform(*rho_init, size=(d_in, d_out)), True, f"{name}.w_rho")
        self.b_mu = ad.Node(rng.uniform(*mu_init, size=(d_out,)), True, f"{name}.b_mu")
        self.b_rho = ad.Node(rng.uniform(*rho_init, size=(d_out,)), True, f"{name}.b_rho")

    def parameters(self) -> list[ad.Node]:
        return [self.w_mu, self.w_rho, self.b_mu, self.b_rho]

    def variational_params(self) -> list[VariationalParam]:
        mus = np.concatenate([self.w_mu.value.ravel(), self.b_mu.value])
        rhos = np.concatenate([self.w_rho.value.ravel(), self.b_rho.value])
        return [VariationalParam(float(m), float(r)) for m, r in zip(mus, rhos)]

    def draw(self, eps_w: np.ndarray, eps_b: np.ndarray):
        """Reparameterized weights for noise of shape (*prefix, d_in, d_out) / (*prefix, d_out).

        Returns (w, b, log_q, log_p); the log densities are summed over the
        weight axes and keep the prefix axes.
        """
        sw, sb = softplus_sigma(self.w_rho), softplus_sigma(self.b_rho)
        w = self.w_mu + sw * eps_w
        b = self.b_mu + sb * eps_b
        nw = eps_w.ndim - 2
        wax, bax = (nw, nw + 1), (nw,)
        log_q = ad.sum_(_gauss_logpdf(w, self.w_mu, sw), axis=wax) + ad.sum_(
            _gauss_logpdf(b, self.b_mu, sb), axis=bax
        )
        pm, ps = self.prior.mu, self.prior.sigma
        log_p = ad.sum_(_gauss_logpdf(w, pm, ps), axis=wax) + ad.sum_(
            _gauss_logpdf(b, pm, ps), axis=bax
        )
        return w, b, log_q, log_p

    def sample_weights(self, rng: np.random.Generator, prefix: tuple = ()):
        eps_w = rng.standard_normal(prefix + (self.d_in, self.d_out))
        eps_b = rng.standard_normal(prefix + (self.d_out,))
        return self.draw(eps_w, eps_b)


@dataclass
class StochasticOutput:
    outputs: ad.Node  # (n, B, T)
    log_q: ad.Node  # (n,) summed over windows and layers
    log_p: ad.Node  # (n,)
    n_windows: int


def _pass_rngs(seed, n: int) -> list[np.random.Generator]:
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def window_count(T: int, window_b: int) -> int:
    return -(-T // window_b)


def forward_stochastic(
    layers: list[BbbLayer],
    features,
    schedule: SamplingSchedule,
    seed,
    activation=ad.tanh,
) -> StochasticOutput:
    """Run ``schedule.n_passes`` stochastic passes over features of shape (B, T, D)."""
    x = ad.as_node(features)
    B, T, D = x.shape
    b = schedule.window_b
    nwin = window_count(T, b)
    pad = nwin * b - T
    if pad:
        x = ad.getitem(x, (slice(None), np.r_[np.arange(T), np.full(pad, T - 1)]))
    h = ad.reshape(x, (1, B, nwin, b, D))
    n = schedule.n_passes

    noise = []
    for rng in _pass_rngs(seed, n):
        noise.append(
            [
                (rng.standard_normal((nwin, L.d_in, L.d_out)), rng.standard_normal((nwin, L.d_out)))
                for L in layers
            ]
        )
    log_q = log_p = 0.0
    for k, layer in enumerate(layers):
        eps_w = np.stack([noise[i][k][0] for i in range(n)])
        eps_b = np.stack([noise[i][k][1] for i in range(n)])
        w, bias, lq, lp = layer.draw(eps_w, eps_b)
        log_q = log_q + ad.sum_(lq, axis=1)
        log_p = log_p + ad.sum_(lp, axis=1)
        # (n|1, B, nwin, b, d) @ (n, 1, nwin, d, e): batched GEMMs, one per (pass, sequence, window)
        w = ad.reshape(w, (n, 1, nwin, layer.d_in, layer.d_out))
        h = ad.matmul(h, w) + ad.reshape(bias, (n, 1, nwin, 1, layer.d_out))
        if k < len(layers) - 1:
            h = activation(h)
    out = ad.reshape(h, (n, B, nwin * b))
    if pad:
        out = out[:, :, :T]
    return StochasticOutput(out, log_q, log_p, nwin)


def forward_mean(layers: list[BbbLayer], features, activation=ad.tanh) -> ad.Node:
    """Deterministic pass with every weight at its posterior mean; returns (B, T)."""
    h = ad.as_node(features)
    for k, layer in enumerate(layers):
        h = ad.dense(h, layer.w_mu, layer.b_mu)
        if k < len(layers) - 1:
            h = activation(h)
    return h[..., 0]


def predictive_std(outputs, floor: float = 0.0):
    """Unbiased std over the pass axis (axis 0), sqrt(var + floor^2) for a smooth floor."""
    y = ad.as_node(outputs)
    n = y.shape[0]
    if n < 2:
        raise ValueError("need at least two stochastic passes for a spread estimate")
    d = y - ad.mean(y, axis=0, keepdims=True)
    var = ad.sum_(d * d, axis=0) * (1.0 / (n - 1))
    out = ad.sqrt(var + floor * floor) if floor > 0 else ad.sqrt(var)
    return out if ad.is_node(outputs) else out.value


def aggregate_predictive(outputs, mean_output=None) -> PredictiveSeries:
    """Per-frame predictive summary from n stochastic passes (axis 0).

    ``m_hat`` is the mean-weight output when given, else the pass average.
    """
    y = np.asarray(ad.value_of(outputs), dtype=float)
    if y.shape[0] < 2:
        raise ValueError("need at least two stochastic passes for a spread estimate")
    s_hat = y.std(axis=0, ddof=1)
    m_hat = y.mean(axis=0) if mean_output is None else np.asarray(ad.value_of(mean_output), float)
    return PredictiveSeries(m_hat, s_hat)


def gaussian_kl_closed_form(mu_q, sigma_q, mu_p: float = 0.0, sigma_p: float = 1.0):
    """KL( N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2) ), elementwise."""
    mu_q, sigma_q = np.asarray(mu_q, float), np.asarray(sigma_q, float)
    return (
        np.log(sigma_p / sigma_q)
        + (sigma_q**2 + (mu_q - mu_p) ** 2) / (2 * sigma_p**2)
        - 0.5
    )


def layer_kl_to_prior(layer: BbbLayer) -> float:
    mus = np.concatenate([layer.w_mu.value.ravel(), layer.b_mu.value])
    sig = softplus_sigma(np.concatenate([layer.w_rho.value.ravel(), layer.b_rho.value]))
    return float(gaussian_kl_closed_form(mus, sig, layer.prior.mu, layer.prior.sigma).sum())

