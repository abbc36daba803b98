import numpy as np
import pytest

from labelunc.model import ModelConfig, Network

SMALL = ModelConfig(conv_filters=(3, 4, 5), conv_kernels=(3, 2, 2), pool=(3, 2, 2), lstm_hidden=6, bbb_hidden=5, window_b_frames=4)


def test_defaults_and_paper_scale():
    cfg = ModelConfig()
    assert cfg.samples_per_frame == 250
    assert (cfg.lstm_layers, cfg.bbb_layers, cfg.dropout_p) == (2, 3, 0.5)
    big = cfg.paper_scale()
    assert big.conv_filters == (64, 128, 256) and big.lstm_hidden == 256 and big.bbb_hidden == 256


@pytest.mark.parametrize("bad", [dict(pool=(2, 2)), dict(alpha=1.2), dict(dropout_p=1.0), dict(bbb_layers=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad)


def test_forward_shapes(rng):
    net = Network(SMALL, seed=0)
    T = 9
    L = net.required_input_length(T)
    assert net.frames_out(L) >= T
    x = rng.standard_normal((2, T * SMALL.samples_per_frame, 4))
    mean_out, stoch = net.forward(x, T, seed=1)
    assert mean_out.shape == (2, T)
    assert stoch.outputs.shape == (30, 2, T)
    assert stoch.n_windows == 3


def test_inference_is_deterministic(rng):
    net = Network(SMALL, seed=0)
    x = rng.standard_normal((1, 8 * SMALL.samples_per_frame, 4))
    a, _ = net.forward(x, 8, seed=1)
    b, _ = net.forward(x, 8, seed=2)
    np.testing.assert_array_equal(a.value, b.value)


def test_save_load_roundtrip(tmp_path, rng):
    net = Network(SMALL, seed=3)
    net.save(tmp_path / "m.npz")
    back = Network.load(tmp_path / "m.npz", SMALL)
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(v, back.state_dict()[k])
    other = Network(SMALL, seed=4).state_dict()
    assert any(not np.array_equal(v, other[k]) for k, v in net.state_dict().items())


def test_load_rejects_mismatched_shapes(tmp_path):
    Network(SMALL, seed=0).save(tmp_path / "m.npz")
    with pytest.raises(ValueError):
        Network.load(tmp_path / "m.npz", ModelConfig(conv_filters=(3, 4, 6), conv_kernels=(3, 2, 2), pool=(3, 2, 2), lstm_hidden=6, bbb_hidden=5))
