import numpy as np
import pytest

from labelunc.annotations import build_label_dist, lowpass_filter
from labelunc.synth import SynthConfig, generate, inject_lag, read_dataset, write_dataset

SMALL = dict(num_sequences=3, frames_per_sequence=80, samples_per_frame=4)


def test_noise_free_ratings_equal_truth():
    seqs = generate(SynthConfig(noise_scale=0.0, num_annotators=2, **SMALL))
    for sq in seqs:
        np.testing.assert_array_equal(sq.ratings.ratings[:, 0], sq.truth_m)
        np.testing.assert_array_equal(sq.ratings.ratings[:, 1], sq.truth_m)


def test_same_seed_bit_identical():
    a = generate(SynthConfig(seed=4, **SMALL))
    b = generate(SynthConfig(seed=4, **SMALL))
    c = generate(SynthConfig(seed=5, **SMALL))
    for x, y in zip(a, b):
        assert np.array_equal(x.features, y.features) and np.array_equal(x.ratings.ratings, y.ratings.ratings)
    assert not np.array_equal(a[0].truth_m, c[0].truth_m)


def test_shapes_and_defaults():
    cfg = SynthConfig()
    assert (cfg.frames_per_sequence, cfg.frame_rate, cfg.num_annotators) == (300, 25.0, 6)
    sq = generate(SynthConfig(**SMALL))[0]
    assert sq.features.shape == (80 * 4, 4)
    assert sq.ratings.ratings.shape == (80, 6)
    assert np.all(sq.truth_s > 0)


def test_spread_regression_slope():
    seqs = generate(SynthConfig(seed=1, num_sequences=4, frames_per_sequence=3000, samples_per_frame=1))
    s = np.concatenate([sq.ratings.ratings.std(axis=1, ddof=1) for sq in seqs])
    ts = np.concatenate([sq.truth_s for sq in seqs])
    # E[sample std] = c4 * sigma for a = 6
    c4 = 0.9515
    slope = np.polyfit(ts, s / c4, 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_mean_recovers_truth():
    sq = generate(SynthConfig(seed=2, frames_per_sequence=2000, samples_per_frame=1, num_sequences=1))[0]
    d = build_label_dist(sq.ratings)
    err = np.abs(d.m - sq.truth_m)
    assert err.mean() <= np.mean(3 * sq.truth_s / np.sqrt(6))


def test_inject_lag():
    x = np.arange(100.0)
    np.testing.assert_array_equal(inject_lag(x, 0.0, 25.0), x)
    y = inject_lag(x, 1.0, 25.0)
    assert np.all(y[:25] == 0.0) and np.array_equal(y[25:], x[:75])
    # shifting back recovers x away from the padded edge
    np.testing.assert_array_equal(y[25:], x[:-25])
    with pytest.raises(ValueError):
        inject_lag(x, 4.0, 25.0)
    with pytest.raises(ValueError):
        inject_lag(x, -0.1, 25.0)


def test_distortion_peak_detectable_and_suppressed():
    cfg = SynthConfig(seed=3, num_sequences=1, frames_per_sequence=2000, samples_per_frame=1, distortion_annotators=(0,), distortion_freq_hz=2.0)
    x = generate(cfg)[0].ratings.ratings[:, 0]
    freqs = np.fft.rfftfreq(len(x), 1 / cfg.frame_rate)
    k = np.argmin(np.abs(freqs - 2.0))

    def peak(v):
        return np.abs(np.fft.rfft(v - v.mean()))[k]

    before = peak(x)
    assert before > 5 * np.median(np.abs(np.fft.rfft(x))[k - 50 : k + 50])
    after = peak(lowpass_filter(x, 0.25, cfg.frame_rate))
    assert 20 * np.log10(before / after) >= 12


def test_config_validation():
    for bad in (dict(frames_per_sequence=1), dict(num_annotators=1), dict(distortion_annotators=(9,)), dict(injected_lag_s=-1.0)):
        with pytest.raises(ValueError):
            SynthConfig(**bad)


def test_dataset_roundtrip(tmp_path):
    cfg = SynthConfig(seed=7, **SMALL)
    seqs = generate(cfg)
    write_dataset(seqs, cfg, tmp_path)
    back = read_dataset(tmp_path)
    assert [s.name for s in back] == [s.name for s in seqs]
    assert [s.partition for s in back] == ["train", "train", "dev"]
    np.testing.assert_allclose(back[0].features, seqs[0].features, rtol=1e-8)
    np.testing.assert_allclose(back[0].truth_s, seqs[0].truth_s, rtol=1e-8)
