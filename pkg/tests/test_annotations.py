import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from labelunc.annotations import (
    AnnotationFormatError,
    AnnotationMatrix,
    PreprocessConfig,
    build_label_dist,
    drop_annotators,
    ewe_weights,
    fuse_ewe,
    fuse_mean,
    fuse_std,
    lowpass_filter,
    median_filter,
    normalize_local,
    preprocess,
    read_annotation_csv,
    read_fused_csv,
    write_annotation_csv,
    write_fused_csv,
)
from labelunc.distributions import UndefinedMomentError


def _matrix(rng, T=50, a=4):
    return AnnotationMatrix(rng.standard_normal((T, a)), 25.0)


def test_mean_and_std_match_loop_oracle(rng):
    ann = _matrix(rng)
    for t in range(ann.num_frames):
        row = list(ann.ratings[t])
        mu = sum(row) / len(row)
        sd = (sum((v - mu) ** 2 for v in row) / (len(row) - 1)) ** 0.5
        assert fuse_mean(ann)[t] == pytest.approx(mu)
        assert fuse_std(ann)[t] == pytest.approx(sd)


def test_matrix_validation():
    with pytest.raises(ValueError):
        AnnotationMatrix(np.zeros((5, 1)), 25.0)
    with pytest.raises(ValueError):
        AnnotationMatrix(np.array([[1.0, np.nan], [0.0, 0.0]]), 25.0)
    with pytest.raises(ValueError):
        AnnotationMatrix(np.zeros((5, 2)), 0.0)


def test_ewe_zero_weight_on_anticorrelated_annotator():
    t = np.linspace(0, 4 * np.pi, 200)
    x = np.sin(t)
    ann = AnnotationMatrix(np.column_stack([x, x, x, -x]), 25.0)
    w = ewe_weights(ann)
    assert w[3] == 0.0
    np.testing.assert_allclose(w[:3], 1 / 3)
    np.testing.assert_allclose(fuse_ewe(ann), x)


def test_ewe_all_zero_falls_back_to_mean(rng):
    x = rng.standard_normal(100)
    ann = AnnotationMatrix(np.column_stack([x, -x]), 25.0)
    with pytest.warns(UserWarning):
        np.testing.assert_allclose(fuse_ewe(ann), fuse_mean(ann))


def test_drop_annotators_removes_least_agreeing(rng):
    base = np.sin(np.linspace(0, 10, 300))
    cols = [base + 0.05 * rng.standard_normal(300) for _ in range(4)]
    cols.insert(1, rng.standard_normal(300))  # the odd one out
    ann = AnnotationMatrix(np.column_stack(cols), 25.0)
    kept = drop_annotators(ann, 4)
    assert kept.annotator_ids == ["a0", "a2", "a3", "a4"]
    assert drop_annotators(ann, 5) is ann
    with pytest.raises(ValueError):
        drop_annotators(ann, 1)
    with pytest.raises(ValueError):
        drop_annotators(ann, 6)


def test_build_label_dist_nu_rules(rng):
    d = build_label_dist(_matrix(rng, a=5))
    assert d.nu == 5.0 and d.family == "student_t"
    with pytest.raises(UndefinedMomentError):
        build_label_dist(_matrix(rng, a=2), "t")
    with pytest.warns(UserWarning):
        build_label_dist(_matrix(rng, a=3), "t")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert build_label_dist(_matrix(rng, a=2), "gaussian").nu == 2.0


def test_identical_annotators_give_zero_spread():
    x = np.sin(np.linspace(0, 3, 40))
    d = build_label_dist(AnnotationMatrix(np.column_stack([x] * 4), 25.0))
    np.testing.assert_array_equal(d.s, 0.0)
    np.testing.assert_allclose(d.m, x)


def test_normalize_local(rng):
    out = normalize_local(_matrix(rng))
    np.testing.assert_allclose(out.ratings.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.ratings.std(axis=0), 1.0)
    with pytest.raises(ValueError, match="a1"):
        normalize_local(AnnotationMatrix(np.column_stack([np.arange(5.0), np.ones(5)]), 25.0))


@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e6, 1e6)), st.integers(1, 12))
def test_median_filter_sort_oracle(x, w):
    left, right = (w - 1) // 2, w - 1 - (w - 1) // 2
    oracle = [float(np.median(sorted(x[max(0, i - left) : i + right + 1]))) for i in range(len(x))]
    np.testing.assert_array_equal(median_filter(x, w), oracle)


def test_median_filter_removes_spikes():
    x = np.zeros(50)
    x[[10, 30]] = 100.0
    np.testing.assert_array_equal(median_filter(x, 5), np.zeros(50))


def test_lowpass_passes_dc_and_rejects_high_frequency():
    fr = 25.0
    t = np.arange(5000) / fr
    slow, fast = np.sin(2 * np.pi * 0.02 * t), np.sin(2 * np.pi * 3.0 * t)
    y = lowpass_filter(slow + fast, 0.25, fr)
    assert np.max(np.abs(y - slow)[500:-500]) < 0.01
    with pytest.raises(ValueError):
        lowpass_filter(slow, 13.0, fr)


def test_preprocess_order_and_selection(rng):
    ann = _matrix(rng, T=400)
    out = preprocess(ann, PreprocessConfig(lowpass_hz=1.0, lowpass_annotators=["a1"]))
    np.testing.assert_array_equal(out.ratings[:, 0], ann.ratings[:, 0])
    assert not np.allclose(out.ratings[:, 1], ann.ratings[:, 1])
    normed = preprocess(ann, PreprocessConfig(median_ms=200, normalize=True))
    np.testing.assert_allclose(normed.ratings.std(axis=0), 1.0)


def test_csv_roundtrip(tmp_path, rng):
    ann = AnnotationMatrix(rng.standard_normal((20, 4)), 25.0, ["x", "y", "z", "w"])
    p = tmp_path / "a.csv"
    write_annotation_csv(p, ann)
    back = read_annotation_csv(p)
    assert back.annotator_ids == ["x", "y", "z", "w"]
    assert back.frame_rate == pytest.approx(25.0)
    np.testing.assert_allclose(back.ratings, ann.ratings, rtol=1e-8)
    d = build_label_dist(back, "t")
    write_fused_csv(tmp_path / "f.csv", d, 25.0)
    assert (tmp_path / "f.csv").read_text().startswith("time_s,m,s,nu\n")
    np.testing.assert_allclose(read_fused_csv(tmp_path / "f.csv").m, d.m, rtol=1e-8)


@pytest.mark.parametrize(
    "body,match",
    [
        ("t,a,b\n0,1,2\n", "time_s"),
        ("time_s,a,b\n0,1,2\n0.04,1\n", "row 3"),
        ("time_s,a,b\n0,1,2\n0.04,1,x\n", "row 3, column 3"),
        ("time_s,a,b\n0,1,2\n0.04,1,\n", "row 3, column 3"),
        ("time_s,a,b\n0,1,2\n0.04,1,2\n0.2,1,2\n", "uniformly"),
        ("time_s,a\n0,1\n0.04,1\n", "two annotator"),
    ],
)
def test_csv_diagnostics(tmp_path, body, match):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(AnnotationFormatError, match=match):
        read_annotation_csv(p)
