"""End-to-end network: conv front-end, 2-layer LSTM, dropout, BBB head.

Input is a sub-frame feature stream of shape (B, T_in, D); the three
conv/maxpool stages reduce the time axis by ``prod(pool)`` so that one
output step corresponds to one label frame.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .bnn import BbbLayer, SamplingSchedule, StochasticOutput, forward_mean, forward_stochastic
from .distributions import GaussianParams
from .losses import normalize_family

PAPER_SCALE = {"conv_filters": (64, 128, 256), "lstm_hidden": 256, "bbb_hidden": 256}


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 4
    conv_filters: tuple = (8, 16, 32)
    conv_kernels: tuple = (8, 6, 6)
    conv_strides: tuple = (1, 1, 1)
    pool: tuple = (10, 5, 5)
    lstm_layers: int = 2
    lstm_hidden: int = 32
    dropout_p: float = 0.5
    bbb_layers: int = 3
    bbb_hidden: int = 32
    prior_mu: float = 0.0
    prior_sigma: float = 1.0
    mu_init: tuple = (-0.1, 0.1)
    rho_init: tuple = (-3.0, -2.0)
    window_b_frames: int = 50
    n_passes: int = 30
    alpha: float = 1.0
    truth_family: str = "student_t"

    def __post_init__(self):
        for name in ("conv_filters", "conv_kernels", "conv_strides", "pool"):
            v = tuple(int(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValueError(f"{name} must have length 3, got {len(v)}")
            if min(v) < 1:
                raise ValueError(f"{name} entries must be >= 1")
            object.__setattr__(self, name, v)
        for name in ("mu_init", "rho_init"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.lstm_layers < 1 or self.bbb_layers < 1:
            raise ValueError("need at least one LSTM and one BBB layer")
        object.__setattr__(self, "truth_family", normalize_family(self.truth_family))

    @property
    def samples_per_frame(self) -> int:
        return int(np.prod(self.pool) * np.prod(self.conv_strides))

    def paper_scale(self) -> "ModelConfig":
        return replace(self, **PAPER_SCALE)

    def schedule(self) -> SamplingSchedule:
        return SamplingSchedule(self.window_b_frames, self.n_passes)


def _conv_out(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


class Network:
    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.conv = []
        cin = cfg.feature_dim
        for i, (cout, k) in enumerate(zip(cfg.conv_filters, cfg.conv_kernels)):
            bound = math.sqrt(6.0 / (k * cin + cout))  # Glorot uniform
            kern = ad.Node(rng.uniform(-bound, bound, (k, cin, cout)), True, f"conv{i}.w")
            bias = ad.Node(np.zeros(cout), True, f"conv{i}.b")
            self.conv.append((kern, bias))
            cin = cout
        H = cfg.lstm_hidden
        self.lstm = []
        din = cin
        for i in range(cfg.lstm_layers):
            bound = 1.0 / math.sqrt(H)
            b = rng.uniform(-bound, bound, 4 * H)
            b[H : 2 * H] = 1.0  # forget gate
            self.lstm.append(
                (
                    ad.Node(rng.uniform(-bound, bound, (din, 4 * H)), True, f"lstm{i}.w_x"),
                    ad.Node(rng.uniform(-bound, bound, (H, 4 * H)), True, f"lstm{i}.w_h"),
                    ad.Node(b, True, f"lstm{i}.b"),
                )
            )
            din = H
        prior = GaussianParams(cfg.prior_mu, cfg.prior_sigma)
        dims = [H] + [cfg.bbb_hidden] * (cfg.bbb_layers - 1) + [1]
        self.bbb = [
            BbbLayer(dims[i], dims[i + 1], rng, cfg.mu_init, cfg.rho_init, prior, f"bbb{i}")
            for i in range(cfg.bbb_layers)
        ]

    # -- bookkeeping ------------------------------------------------------

    def parameters(self) -> list[ad.Node]:
        out = [p for pair in self.conv for p in pair]
        out += [p for triple in self.lstm for p in triple]
        out += [p for layer in self.bbb for p in layer.parameters()]
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"missing parameter {p.name}")
            v = np.asarray(state[p.name], dtype=float)
            if v.shape != p.value.shape:
                raise ValueError(f"{p.name}: shape {v.shape} != {p.value.shape}")
            p.value = v.copy()

    def save(self, path) -> None:
        np.savez(Path(path), **self.state_dict())

    @classmethod
    def load(cls, path, cfg: ModelConfig) -> "Network":
        net = cls(cfg, seed=0)
        with np.load(Path(path)) as data:
            net.load_state_dict(dict(data))
        return net

    def required_input_length(self, frames: int) -> int:
        """Smallest feature length whose front-end output has at least ``frames`` steps."""
        n = frames
        for k, s, p in reversed(list(zip(self.cfg.conv_kernels, self.cfg.conv_strides, self.cfg.pool))):
            n = (n * p - 1) * s + k
        return n

    def frames_out(self, length: int) -> int:
        n = length
        for k, s, p in zip(self.cfg.conv_kernels, self.cfg.conv_strides, self.cfg.pool):
            n = _conv_out(n, k, s) // p
        return n

    # -- forward ----------------------------------------------------------

    def encode(self, features, frames: int, training: bool, rng=None) -> ad.Node:
        """Front-end + LSTM + dropout; returns (B, frames, H)."""
        x = np.asarray(ad.value_of(features), dtype=float)
        if x.ndim != 3 or x.shape[2] != self.cfg.feature_dim:
            raise ValueError(f"features must be (B, T, {self.cfg.feature_dim}), got {x.shape}")
        need = self.required_input_length(frames)
        if x.shape[1] < need:
            x = np.concatenate([x, np.repeat(x[:, -1:], need - x.shape[1], axis=1)], axis=1)
        h = ad.Node(x[:, :need])
        for (kern, bias), s, p in zip(self.conv, self.cfg.conv_strides, self.cfg.pool):
            h = ad.maxpool1d(ad.relu(ad.conv1d(h, kern, s) + bias), p)
        h = h[:, :frames]
        B = h.shape[0]
        H = self.cfg.lstm_hidden
        for w_x, w_h, b in self.lstm:
            state = (ad.Node(np.zeros((B, H))), ad.Node(np.zeros((B, H))))
            outs = []
            for t in range(frames):
                state = ad.lstm_step(h[:, t], state, (w_x, w_h, b))
                outs.append(state[0])
            h = ad.stack(outs, axis=1)
        return ad.dropout(h, self.cfg.dropout_p, training, rng)

    def forward(self, features, frames: int, seed, training: bool = False, rng=None):
        """Returns (mean-weight output (B, T), StochasticOutput with (n, B, T) passes)."""
        h = self.encode(features, frames, training, rng)
        mean_out = forward_mean(self.bbb, h)
        stoch: StochasticOutput = forward_stochastic(self.bbb, h, self.cfg.schedule(), seed)
        return mean_out, stoch

    def config_dict(self) -> dict:
        return asdict(self.cfg)

