"""Synthetic multi-annotator sequences with known ground-truth label moments.

truth_m and truth_s are smooth sums of low-frequency sinusoids. Features
live at ``samples_per_frame`` samples per label frame (what the conv
front-end consumes) and are a fixed random mixture of the upsampled
truth channels plus white noise, squashed by tanh. Annotator i rates
``shift(truth_m, lag) + bias_i + noise_scale * truth_s * eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotations import AnnotationMatrix, write_annotation_csv


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_sequences: int = 20
    frames_per_sequence: int = 300
    frame_rate: float = 25.0
    num_annotators: int = 6
    feature_dim: int = 4
    noise_scale: float = 1.0
    injected_lag_s: float = 0.0
    distortion_annotators: tuple = ()
    distortion_freq_hz: float = 2.0
    distortion_amp: float = 0.5
    bias_scale: float = 0.0
    samples_per_frame: int = 250
    feature_noise: float = 0.1
    s_range: tuple = (0.05, 0.4)
    dev_fraction: float = 0.2

    def __post_init__(self):
        if self.frames_per_sequence < 2:
            raise ValueError(f"frames_per_sequence must be >= 2, got {self.frames_per_sequence}")
        if self.num_annotators < 2:
            raise ValueError(f"num_annotators must be >= 2, got {self.num_annotators}")
        if self.num_sequences < 1:
            raise ValueError("num_sequences must be >= 1")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2 (one channel per truth moment)")
        if self.injected_lag_s < 0:
            raise ValueError("injected_lag_s must be >= 0")
        if self.noise_scale < 0 or self.feature_noise < 0 or self.bias_scale < 0:
            raise ValueError("noise and bias scales must be >= 0")
        if self.samples_per_frame < 1:
            raise ValueError("samples_per_frame must be >= 1")
        lo, hi = self.s_range
        if not 0 < lo <= hi:
            raise ValueError(f"s_range must satisfy 0 < lo <= hi, got {self.s_range}")
        bad = [i for i in self.distortion_annotators if not 0 <= i < self.num_annotators]
        if bad:
            raise ValueError(f"distortion annotator indices out of range: {bad}")
        object.__setattr__(self, "distortion_annotators", tuple(int(i) for i in self.distortion_annotators))
        object.__setattr__(self, "s_range", tuple(float(v) for v in self.s_range))


@dataclass
class SynthSequence:
    features: np.ndarray  # (T * samples_per_frame, feature_dim)
    truth_m: np.ndarray
    truth_s: np.ndarray
    ratings: AnnotationMatrix
    name: str = ""
    partition: str = "train"
    meta: dict = field(default_factory=dict)


def inject_lag(x, lag_s: float, frame_rate: float) -> np.ndarray:
    """Delay ``x`` by round(lag_s * frame_rate) frames, repeating the first value."""
    x = np.asarray(x, dtype=float)
    if lag_s < 0:
        raise ValueError(f"lag must be >= 0, got {lag_s}")
    k = int(round(lag_s * frame_rate))
    if k >= len(x):
        raise ValueError(f"lag of {k} frames exceeds the {len(x)}-frame sequence")
    if k == 0:
        return x.copy()
    return np.concatenate([np.full(k, x[0]), x[:-k]])


def _smooth_process(rng, t: np.ndarray, n_comp: int = 3, f_lo: float = 0.05, f_hi: float = 0.4):
    freqs = rng.uniform(f_lo, f_hi, n_comp)
    phases = rng.uniform(0, 2 * np.pi, n_comp)
    amps = rng.uniform(0.5, 1.0, n_comp)
    x = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(0)
    return x / amps.sum()  # within [-1, 1]


def mixing_matrix(cfg: SynthConfig) -> np.ndarray:
    """Fixed random orthogonal mixing shared by every sequence of a dataset."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    q, r = np.linalg.qr(rng.standard_normal((cfg.feature_dim, cfg.feature_dim)))
    return q * np.sign(np.diag(r))


def partition_names(cfg: SynthConfig) -> list[str]:
    n_dev = int(round(cfg.dev_fraction * cfg.num_sequences))
    if cfg.num_sequences > 1:
        n_dev = min(max(n_dev, 1), cfg.num_sequences - 1)
    else:
        n_dev = 0
    return ["train"] * (cfg.num_sequences - n_dev) + ["dev"] * n_dev


def generate(cfg: SynthConfig) -> list[SynthSequence]:
    mix = mixing_matrix(cfg)
    T, fr, a, D = cfg.frames_per_sequence, cfg.frame_rate, cfg.num_annotators, cfg.feature_dim
    spf = cfg.samples_per_frame
    t = np.arange(T) / fr
    t_fine = (np.arange(T * spf) + 0.5) / (spf * fr) - 0.5 / fr
    lo, hi = cfg.s_range
    parts = partition_names(cfg)
    # child 0 is reserved for the mixing matrix
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.num_sequences + 1)[1:]
    out = []
    for idx, child in enumerate(children):
        rng = np.random.default_rng(child)
        m = _smooth_process(rng, t)
        s = lo + (hi - lo) * 0.5 * (1.0 + _smooth_process(rng, t))
        bias = cfg.bias_scale * rng.standard_normal(a)
        eps = rng.standard_normal((T, a))
        lagged = inject_lag(m, cfg.injected_lag_s, fr)
        ratings = lagged[:, None] + bias[None, :] + cfg.noise_scale * s[:, None] * eps
        for i in cfg.distortion_annotators:
            ratings[:, i] += cfg.distortion_amp * np.sin(2 * np.pi * cfg.distortion_freq_hz * t)
        # feature channels: m and a centred/scaled s, then noise
        z = np.empty((T * spf, D))
        z[:, 0] = np.interp(t_fine, t, m)
        z[:, 1] = np.interp(t_fine, t, (s - 0.5 * (lo + hi)) / max(0.5 * (hi - lo), 1e-12))
        z[:, 2:] = rng.standard_normal((T * spf, D - 2))
        z += cfg.feature_noise * rng.standard_normal(z.shape)
        feats = np.tanh(z @ mix)
        out.append(
            SynthSequence(
                features=feats,
                truth_m=m,
                truth_s=s,
                ratings=AnnotationMatrix(ratings, fr, [f"ann{i}" for i in range(a)]),
                name=f"seq{idx:03d}",
                partition=parts[idx],
                meta={"bias": bias},
            )
        )
    return out


def _savetxt(path, header: str, cols: np.ndarray) -> None:
    np.savetxt(path, cols, fmt="%.9g", delimiter=",", header=header, comments="")


def write_dataset(seqs: list[SynthSequence], cfg: SynthConfig, out_dir) -> Path:
    """Per sequence: ``<name>_annotations.csv``, ``<name>_features.csv``, ``<name>_truth.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sq in seqs:
        write_annotation_csv(out / f"{sq.name}_annotations.csv", sq.ratings)
        fine_t = np.arange(sq.features.shape[0]) / (cfg.frame_rate * cfg.samples_per_frame)
        _savetxt(
            out / f"{sq.name}_features.csv",
            "time_s," + ",".join(f"f{j}" for j in range(sq.features.shape[1])),
            np.column_stack([fine_t, sq.features]),
        )
        _savetxt(
            out / f"{sq.name}_truth.csv",
            "time_s,truth_m,truth_s",
            np.column_stack([sq.ratings.times(), sq.truth_m, sq.truth_s]),
        )
    with (out / "partitions.csv").open("w") as fh:
        fh.write("sequence,partition\n")
        for sq in seqs:
            fh.write(f"{sq.name},{sq.partition}\n")
    return out


def read_dataset(data_dir) -> list[SynthSequence]:
    from .annotations import read_annotation_csv

    d = Path(data_dir)
    part_file = d / "partitions.csv"
    if not part_file.exists():
        raise FileNotFoundError(f"{d}: no partitions.csv; not a dataset directory")
    rows = [line.strip().split(",") for line in part_file.read_text().splitlines()[1:] if line.strip()]
    seqs = []
    for name, part in rows:
        ann = read_annotation_csv(d / f"{name}_annotations.csv")
        feats = np.loadtxt(d / f"{name}_features.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
        truth_path = d / f"{name}_truth.csv"
        if truth_path.exists():
            tr = np.loadtxt(truth_path, delimiter=",", skiprows=1, ndmin=2)
            tm, ts = tr[:, 1], tr[:, 2]
        else:
            tm = ts = np.full(ann.num_frames, np.nan)
        seqs.append(SynthSequence(feats, tm, ts, ann, name=name, partition=part))
    return seqs
