"""Multi-annotator ratings: ingestion, fusion into label distributions, filtering.

CSV layout of one annotated sequence::

    time_s,<annotator_id>,<annotator_id>,...

with uniformly spaced ``time_s``. Fused output is ``time_s,m,s,nu``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .losses import normalize_family

log = logging.getLogger(__name__)


class AnnotationFormatError(ValueError):
    """Malformed annotation CSV; the message names the offending row/column."""


@dataclass
class AnnotationMatrix:
    ratings: np.ndarray  # (T, a)
    frame_rate: float
    annotator_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.ratings = np.asarray(self.ratings, dtype=float)
        if self.ratings.ndim != 2:
            raise ValueError("ratings must be a T x a matrix")
        T, a = self.ratings.shape
        if not self.annotator_ids:
            self.annotator_ids = [f"a{i}" for i in range(a)]
        if len(self.annotator_ids) != a:
            raise ValueError(f"{len(self.annotator_ids)} annotator ids for {a} columns")
        if a < 2:
            raise ValueError(f"need at least two annotators, got {a}")
        if T < 2:
            raise ValueError(f"need at least two frames, got {T}")
        if not np.all(np.isfinite(self.ratings)):
            raise ValueError("ratings contain missing or non-finite values")
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")

    @property
    def num_frames(self) -> int:
        return self.ratings.shape[0]

    @property
    def num_annotators(self) -> int:
        return self.ratings.shape[1]

    def times(self) -> np.ndarray:
        return np.arange(self.num_frames) / self.frame_rate


@dataclass
class LabelDistSeries:
    m: np.ndarray
    s: np.ndarray
    nu: float
    family: str = "student_t"

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.family = normalize_family(self.family)
        if self.m.shape != self.s.shape:
            raise ValueError("m and s must have equal length")
        if np.any(self.s < 0):
            raise ValueError("s must be non-negative")


# ----------------------------------------------------------------------
# fusion
# ----------------------------------------------------------------------


def fuse_mean(ann: AnnotationMatrix) -> np.ndarray:
    return ann.ratings.mean(axis=1)


def fuse_std(ann: AnnotationMatrix) -> np.ndarray:
    if ann.num_annotators < 2:
        raise ValueError("unbiased std needs at least two annotators")
    return ann.ratings.std(axis=1, ddof=1)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    return float((dx * dy).sum() / denom) if denom > 0 else 0.0


def ewe_weights(ann: AnnotationMatrix) -> np.ndarray:
    """Correlation of each annotator with the mean of the others, clipped at 0 and normalised.

    Returns all zeros when no annotator correlates positively.
    """
    r = ann.ratings
    a = r.shape[1]
    total = r.sum(axis=1)
    w = np.array([max(0.0, _pearson(r[:, i], (total - r[:, i]) / (a - 1))) for i in range(a)])
    return w / w.sum() if w.sum() > 0 else w


def fuse_ewe(ann: AnnotationMatrix) -> np.ndarray:
    """Evaluator-weighted estimator."""
    w = ewe_weights(ann)
    if w.sum() == 0:
        warnings.warn("all EWE weights are zero; falling back to the plain mean", stacklevel=2)
        return fuse_mean(ann)
    return ann.ratings @ w


def mean_pairwise_correlation(ann: AnnotationMatrix) -> np.ndarray:
    r = ann.ratings
    a = r.shape[1]
    corr = np.array([[_pearson(r[:, i], r[:, j]) for j in range(a)] for i in range(a)])
    return (corr.sum(axis=1) - np.diag(corr)) / (a - 1)


def drop_annotators(ann: AnnotationMatrix, keep: int) -> AnnotationMatrix:
    """Keep the ``keep`` annotators that agree best with the rest.

    Annotators are removed in increasing order of their mean Pearson
    correlation with all others; on ties the lower index goes first.
    """
    a = ann.num_annotators
    if keep < 2:
        raise ValueError(f"keep must be >= 2, got {keep}")
    if keep > a:
        raise ValueError(f"cannot keep {keep} of {a} annotators")
    if keep == a:
        return ann
    order = np.argsort(mean_pairwise_correlation(ann), kind="stable")
    kept = np.sort(order[a - keep :])
    return AnnotationMatrix(
        ann.ratings[:, kept], ann.frame_rate, [ann.annotator_ids[i] for i in kept]
    )


def build_label_dist(ann: AnnotationMatrix, family: str = "student_t") -> LabelDistSeries:
    family = normalize_family(family)
    a = ann.num_annotators
    if family == "student_t":
        if a <= 2:
            from .distributions import UndefinedMomentError

            raise UndefinedMomentError(
                f"a t label distribution needs nu = a > 2 annotators for a finite variance, got {a}"
            )
        if a == 3:
            warnings.warn(
                "nu = 3: the t label distribution is highly inflated; 4 or more annotators recommended",
                stacklevel=2,
            )
    return LabelDistSeries(fuse_mean(ann), fuse_std(ann), float(a), family)


# ----------------------------------------------------------------------
# signal preprocessing
# ----------------------------------------------------------------------


def normalize_local(ann: AnnotationMatrix) -> AnnotationMatrix:
    """Zero-mean, unit-std (population) per annotator."""
    r = ann.ratings
    sd = r.std(axis=0)
    bad = [ann.annotator_ids[i] for i in np.flatnonzero(sd == 0)]
    if bad:
        raise ValueError(f"cannot normalise constant annotator series: {', '.join(bad)}")
    return replace(ann, ratings=(r - r.mean(axis=0)) / sd, annotator_ids=list(ann.annotator_ids))


def median_filter(x, window_frames: int) -> np.ndarray:
    """Centred running median; the window shrinks at the edges instead of padding."""
    x = np.asarray(x, dtype=float)
    if window_frames < 1:
        raise ValueError("median window must be >= 1")
    if window_frames == 1:
        return x.copy()
    left = (window_frames - 1) // 2
    right = window_frames - 1 - left
    padded = np.concatenate([np.full(left, np.nan), x, np.full(right, np.nan)])
    return np.nanmedian(sliding_window_view(padded, window_frames), axis=1)


def lowpass_filter(x, cutoff_hz: float, frame_rate: float, order: int = 2) -> np.ndarray:
    """Zero-phase Butterworth low-pass (forward-backward)."""
    nyquist = 0.5 * frame_rate
    if not 0 < cutoff_hz < nyquist:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    sos = signal.butter(order, cutoff_hz / nyquist, btype="low", output="sos")
    return signal.sosfiltfilt(sos, np.asarray(x, dtype=float))


@dataclass
class PreprocessConfig:
    """Annotation preprocessing, applied in the fixed order median -> lowpass -> normalize."""

    median_ms: float = 0.0
    lowpass_hz: float = 0.0
    lowpass_annotators: list[str] | None = None  # None: every annotator
    normalize: bool = False

    ORDER = ("median", "lowpass", "normalize")


def preprocess(ann: AnnotationMatrix, cfg: PreprocessConfig) -> AnnotationMatrix:
    r = ann.ratings.copy()
    if cfg.median_ms > 0:
        w = max(1, int(round(cfg.median_ms / 1000.0 * ann.frame_rate)))
        r = np.column_stack([median_filter(r[:, i], w) for i in range(r.shape[1])])
    if cfg.lowpass_hz > 0:
        targets = cfg.lowpass_annotators
        for i, aid in enumerate(ann.annotator_ids):
            if targets is None or aid in targets:
                r[:, i] = lowpass_filter(r[:, i], cfg.lowpass_hz, ann.frame_rate)
    out = AnnotationMatrix(r, ann.frame_rate, list(ann.annotator_ids))
    if cfg.normalize:
        out = normalize_local(out)
    return out


# ----------------------------------------------------------------------
# CSV I/O
# ----------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def read_annotation_csv(path) -> AnnotationMatrix:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise AnnotationFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "time_s":
        raise AnnotationFormatError(f"{path}: row 1, column 1: expected header 'time_s'")
    if len(header) < 3:
        raise AnnotationFormatError(f"{path}: row 1: need at least two annotator columns")
    data = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise AnnotationFormatError(
                f"{path}: row {r}: expected {len(header)} columns, found {len(row)}"
            )
        for c, cell in enumerate(row):
            try:
                data[r - 2, c] = float(cell)
            except ValueError:
                raise AnnotationFormatError(
                    f"{path}: row {r}, column {c + 1} ({header[c]}): not a number: {cell!r}"
                ) from None
            if not np.isfinite(data[r - 2, c]):
                raise AnnotationFormatError(
                    f"{path}: row {r}, column {c + 1} ({header[c]}): missing value"
                )
    if data.shape[0] < 2:
        raise AnnotationFormatError(f"{path}: need at least two frames")
    t = data[:, 0]
    dt = np.diff(t)
    step = dt.mean()
    if step <= 0 or np.max(np.abs(dt - step)) > 1e-6 * max(1.0, abs(step)) + 1e-9:
        bad = int(np.argmax(np.abs(dt - step))) + 3
        raise AnnotationFormatError(f"{path}: row {bad}: time_s is not uniformly spaced")
    return AnnotationMatrix(data[:, 1:], 1.0 / step, header[1:])


def write_annotation_csv(path, ann: AnnotationMatrix) -> None:
    t = ann.times()
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(["time_s", *ann.annotator_ids]) + "\n")
        for i in range(ann.num_frames):
            fh.write(",".join([_fmt(t[i]), *(_fmt(v) for v in ann.ratings[i])]) + "\n")


def write_fused_csv(path, dist: LabelDistSeries, frame_rate: float) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("time_s,m,s,nu\n")
        for i in range(len(dist.m)):
            fh.write(
                f"{_fmt(i / frame_rate)},{_fmt(dist.m[i])},{_fmt(dist.s[i])},{_fmt(dist.nu)}\n"
            )


def read_fused_csv(path, family: str = "student_t") -> LabelDistSeries:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return LabelDistSeries(data[:, 1], data[:, 2], float(data[0, 3]), family)
