"""Training, evaluation, time-shift post-processing and the analysis sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from . import autodiff as ad
from . import losses
from .annotations import (
    AnnotationMatrix,
    PreprocessConfig,
    build_label_dist,
    drop_annotators,
    preprocess,
)
from .bnn import PredictiveSeries, aggregate_predictive, predictive_std
from .config import derive_seed
from .distributions import LOG_SQRT_2PI, variance_factor
from .model import ModelConfig, Network

log = logging.getLogger(__name__)

SHIFT_GRID_S = (0.04, 10.0, 0.04)
NOOP_THRESHOLD = 1e-3
RECOMMENDED_ALPHA_BAND = (0.8, 1.0)
KL_SCENARIOS = ((0.5, 6.0), (1.0, 6.0), (1.0, 12.0), (1.0, 30.0))


class NumericalError(RuntimeError):
    """Non-finite loss or parameter; the message names the component."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    seq_frames: int = 300
    epochs: int = 100
    seed: int = 0
    truth_s_floor: float = 1e-2
    s_hat_floor: float = 1e-3
    likelihood_sigma: float = 1.0
    freeze_sigma: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0 or self.seq_frames < 2:
            raise ValueError("batch_size >= 1, epochs >= 0 and seq_frames >= 2 required")


@dataclass
class Example:
    """One training window: sub-frame features plus the fused label distribution."""

    name: str
    features: np.ndarray  # (frames * samples_per_frame, D)
    m: np.ndarray
    s: np.ndarray
    nu: float
    frame_rate: float
    truth_m: np.ndarray | None = None
    truth_s: np.ndarray | None = None

    @property
    def frames(self) -> int:
        return len(self.m)


@dataclass
class EvalReport:
    ccc_m: float
    ccc_s: float
    kl_mean: float
    family: str
    best_time_shift_s: float = 0.0
    per_sequence: dict = field(default_factory=dict)
    mean_s_hat: float = float("nan")
    predictions: list = field(default_factory=list, repr=False)


@dataclass
class TrainResult:
    net: Network
    history: list[dict]


# ----------------------------------------------------------------------
# data preparation
# ----------------------------------------------------------------------


def make_examples(
    seqs,
    family: str = "student_t",
    seq_frames: int = 300,
    keep: int | None = None,
    prep: PreprocessConfig | None = None,
    samples_per_frame: int = 250,
) -> list[Example]:
    """Fuse each sequence's ratings and cut it into disjoint ``seq_frames`` windows.

    A trailing remainder shorter than ``seq_frames`` becomes its own shorter window.
    """
    out = []
    for sq in seqs:
        ann: AnnotationMatrix = sq.ratings
        if prep is not None:
            ann = preprocess(ann, prep)
        if keep is not None:
            ann = drop_annotators(ann, keep)
        dist = build_label_dist(ann, family)
        T = ann.num_frames
        spf = samples_per_frame
        if sq.features.shape[0] < T * spf:
            raise ValueError(
                f"{sq.name}: {sq.features.shape[0]} feature samples for {T} frames "
                f"at {spf} samples per frame"
            )
        for w, start in enumerate(range(0, T, seq_frames)):
            stop = min(start + seq_frames, T)
            if stop - start < 2:
                continue
            tm = None if sq.truth_m is None else np.asarray(sq.truth_m)[start:stop]
            ts = None if sq.truth_s is None else np.asarray(sq.truth_s)[start:stop]
            out.append(
                Example(
                    name=sq.name if T <= seq_frames else f"{sq.name}:{w}",
                    features=sq.features[start * spf : stop * spf],
                    m=dist.m[start:stop],
                    s=dist.s[start:stop],
                    nu=dist.nu,
                    frame_rate=ann.frame_rate,
                    truth_m=tm,
                    truth_s=ts,
                )
            )
    return out


def _batches(examples: list[Example], batch_size: int, rng: np.random.Generator):
    """Shuffled batches grouped by window length (so they stack)."""
    order = rng.permutation(len(examples))
    by_len: dict[int, list[int]] = {}
    for i in order:
        by_len.setdefault(examples[i].frames, []).append(int(i))
    out = []
    for length in sorted(by_len):
        idx = by_len[length]
        out += [idx[i : i + batch_size] for i in range(0, len(idx), batch_size)]
    return [out[i] for i in rng.permutation(len(out))]


def _stack_features(examples: list[Example]) -> np.ndarray:
    n = min(e.features.shape[0] for e in examples)
    return np.stack([e.features[:n] for e in examples])


# ----------------------------------------------------------------------
# optimisation
# ----------------------------------------------------------------------


class Adam:
    def __init__(self, params: list[ad.Node], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def _check_finite(name: str, value) -> None:
    v = np.asarray(ad.value_of(value))
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite {name} ({v.ravel()[:4]})")


def batch_loss(
    net: Network,
    batch: list[Example],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    n_batches: int,
    seed: int,
    training: bool = True,
):
    """Composite loss for one batch; returns (total, components dict)."""
    frames = batch[0].frames
    X = _stack_features(batch)
    m = np.stack([e.m for e in batch])
    s = np.maximum(np.stack([e.s for e in batch]), tcfg.truth_s_floor)
    nu = batch[0].nu
    B = len(batch)

    mean_out, stoch = net.forward(X, frames, seed, training=training)
    n = stoch.outputs.shape[0]
    # data path: unit-variance Gaussian likelihood per stochastic pass
    d = (stoch.outputs - m[None]) * (1.0 / tcfg.likelihood_sigma)
    log_lik = -(
        ad.sum_(0.5 * d * d, axis=(1, 2))
        + B * frames * (LOG_SQRT_2PI + math.log(tcfg.likelihood_sigma))
    )
    scale = 1.0 / (stoch.n_windows * n_batches)
    elbo = losses.elbo_bbb(stoch.log_q * scale, stoch.log_p * scale, log_lik) * (
        1.0 / (n * B * frames)
    )
    ccc_m = losses.ccc(m.ravel(), ad.reshape(mean_out, (-1,)))
    s_hat = predictive_std(stoch.outputs, tcfg.s_hat_floor)
    kl = ad.mean(losses.kl_label(cfg.truth_family, nu, m, s, mean_out, s_hat))
    lc = losses.CompositeLossConfig(cfg.alpha, cfg.truth_family)
    total = losses.composite_loss(ccc_m, elbo, kl, lc)
    parts = {"ccc_term": 1.0 - float(ccc_m.value), "elbo_term": float(elbo.value), "kl_term": float(kl.value)}
    for key, val in parts.items():
        _check_finite(key, val)
    _check_finite("total loss", total)
    parts["total"] = float(total.value)
    return total, parts


def train(
    cfg: ModelConfig,
    examples: list[Example],
    tcfg: TrainConfig,
    net: Network | None = None,
    on_epoch=None,
) -> TrainResult:
    if not examples:
        raise ValueError("no training examples")
    if any(e.frames > tcfg.seq_frames for e in examples):
        raise ValueError("examples longer than seq_frames; cut them with make_examples")
    if tcfg.seq_frames < cfg.window_b_frames:
        log.warning("seq_frames (%d) < window_b (%d)", tcfg.seq_frames, cfg.window_b_frames)
    if len({e.nu for e in examples}) != 1:
        raise ValueError("all examples must share one nu (annotator count)")
    if net is None:
        net = Network(cfg, derive_seed(tcfg.seed, "init"))
    params = net.parameters()
    if tcfg.freeze_sigma:
        frozen = set()
        for layer in net.bbb:
            for p in (layer.w_rho, layer.b_rho):
                p.value = np.full_like(p.value, -30.0)  # sigma ~ 1e-13
                frozen.add(id(p))
        params = [p for p in params if id(p) not in frozen]
    opt = Adam(params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
    shuffle_rng = np.random.default_rng(derive_seed(tcfg.seed, "shuffle"))
    history = []
    step = 0
    for epoch in range(1, tcfg.epochs + 1):
        batches = _batches(examples, tcfg.batch_size, shuffle_rng)
        sums = {"ccc_term": 0.0, "elbo_term": 0.0, "kl_term": 0.0, "total": 0.0}
        for idx in batches:
            batch = [examples[i] for i in idx]
            with ad.Tape(seed=derive_seed(tcfg.seed, f"dropout:{step}")) as tape:
                total, parts = batch_loss(
                    net, batch, cfg, tcfg, len(batches), derive_seed(tcfg.seed, f"passes:{step}")
                )
                for p in net.parameters():
                    p.grad = None
                tape.backward(total)
            for p in params:
                if p.grad is not None:
                    _check_finite(f"gradient of {p.name}", p.grad)
            opt.step()
            step += 1
            for k in sums:
                sums[k] += parts[k] / len(batches)
        for p in params:
            _check_finite(f"parameter {p.name}", p.value)
        row = {"epoch": epoch, **sums}
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
        if on_epoch is not None:
            on_epoch(epoch, net, row)
    return TrainResult(net, history)


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------


def predict(net: Network, examples: list[Example], seed: int) -> list[PredictiveSeries]:
    """Inference-mode predictive (m_hat from mean weights, s_hat from the passes)."""
    preds: list[PredictiveSeries | None] = [None] * len(examples)
    groups: dict[int, list[int]] = {}
    for i, e in enumerate(examples):
        groups.setdefault(e.frames, []).append(i)
    for frames, idx in sorted(groups.items()):
        X = _stack_features([examples[i] for i in idx])
        mean_out, stoch = net.forward(X, frames, derive_seed(seed, f"eval:{frames}"), training=False)
        outs = stoch.outputs.value
        for j, i in enumerate(idx):
            preds[i] = aggregate_predictive(outs[:, j], mean_out.value[j])
    return preds


def score(
    preds: list[PredictiveSeries],
    examples: list[Example],
    family: str,
    truth_s_floor: float = 1e-2,
    s_hat_floor: float = 1e-3,
) -> EvalReport:
    """CCC(m), CCC(s) over the concatenated frames, mean per-frame KL, plus per-sequence values."""
    family = losses.normalize_family(family)
    m = np.concatenate([e.m for e in examples])
    s = np.concatenate([e.s for e in examples])
    mh = np.concatenate([p.m_hat for p in preds])
    sh = np.concatenate([p.s_hat for p in preds])
    per = {"name": [], "ccc_m": [], "ccc_s": [], "kl": []}
    kls = []
    for e, p in zip(examples, preds):
        k = np.asarray(
            losses.kl_label(
                family, e.nu, e.m, np.maximum(e.s, truth_s_floor), p.m_hat, np.maximum(p.s_hat, s_hat_floor)
            )
        )
        kls.append(k)
        per["name"].append(e.name)
        per["ccc_m"].append(losses.ccc(e.m, p.m_hat))
        per["ccc_s"].append(losses.ccc(e.s, p.s_hat))
        per["kl"].append(float(k.mean()))
    kl_all = np.concatenate(kls)
    return EvalReport(
        ccc_m=float(losses.ccc(m, mh)),
        ccc_s=float(losses.ccc(s, sh)),
        kl_mean=float(kl_all.mean()),
        family=family,
        per_sequence=per,
        mean_s_hat=float(sh.mean()),
        predictions=preds,
    )


def evaluate(net: Network, examples: list[Example], family: str, seed: int = 0, **floors) -> EvalReport:
    return score(predict(net, examples, seed), examples, family, **floors)


# ----------------------------------------------------------------------
# post-processing and statistics
# ----------------------------------------------------------------------


def shift_series(x, k: int) -> np.ndarray:
    """Delay by k frames, repeating the first value (k < len(x))."""
    x = np.asarray(x, dtype=float)
    if k == 0:
        return x.copy()
    return np.concatenate([np.full(k, x[0]), x[:-k]])


def shift_grid(frame_rate: float, lo: float = SHIFT_GRID_S[0], hi: float = SHIFT_GRID_S[1], step: float = SHIFT_GRID_S[2]):
    """Candidate delays (seconds, frames) on the grid, deduplicated after rounding to frames."""
    secs = np.round(np.arange(lo, hi + 0.5 * step, step), 10)
    seen, out = set(), []
    for sec in secs:
        k = int(round(sec * frame_rate))
        if k >= 1 and k not in seen:
            seen.add(k)
            out.append((float(sec), k))
    return out


def find_time_shift(preds: list[PredictiveSeries], examples: list[Example], threshold: float = NOOP_THRESHOLD) -> tuple[float, dict]:
    """Grid-search the delay maximising CCC(m) on the tuning examples.

    Returns (best_shift_s, info); 0.0 when no delay beats the unshifted
    predictions by at least ``threshold``.
    """
    fr = examples[0].frame_rate
    m = np.concatenate([e.m for e in examples])
    base = losses.ccc(m, np.concatenate([p.m_hat for p in preds]))
    best_sec, best_ccc = 0.0, base
    T_min = min(e.frames for e in examples)
    for sec, k in shift_grid(fr):
        if k >= T_min:
            break
        c = losses.ccc(m, np.concatenate([shift_series(p.m_hat, k) for p in preds]))
        if c > best_ccc:
            best_sec, best_ccc = sec, c
    if best_ccc - base < threshold:
        return 0.0, {"base_ccc": base, "best_ccc": best_ccc, "accepted": False}
    return best_sec, {"base_ccc": base, "best_ccc": best_ccc, "accepted": True}


def apply_time_shift(preds: list[PredictiveSeries], shift_s: float, frame_rate: float) -> list[PredictiveSeries]:
    k = int(round(shift_s * frame_rate))
    return [PredictiveSeries(shift_series(p.m_hat, k), shift_series(p.s_hat, k)) for p in preds]


def postprocess_timeshift(
    tune_preds, tune_examples, report_preds, report_examples, family: str, **floors
) -> EvalReport:
    """Tune the delay on one partition, apply it to another, and re-score everything there."""
    tune_names = {e.name for e in tune_examples}
    overlap = tune_names & {e.name for e in report_examples}
    if overlap:
        raise ValueError(f"tuning and reporting partitions overlap: {sorted(overlap)[:3]}")
    shift, _ = find_time_shift(tune_preds, tune_examples)
    shifted = apply_time_shift(report_preds, shift, report_examples[0].frame_rate)
    rep = score(shifted, report_examples, family, **floors)
    rep.best_time_shift_s = shift
    return rep


def significance_test(a, b) -> float:
    """One-tailed paired t-test of H1: mean(a) > mean(b)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("significance_test needs two equal-length sequences of >= 2 values")
    d = a - b
    if np.all(d == d[0]):
        return 0.0 if d[0] > 0 else 1.0
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


# ----------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------


def split(examples: list[Example], partitions: dict[str, str]) -> tuple[list[Example], list[Example]]:
    def part(e):
        return partitions.get(e.name.split(":")[0], "train")

    return [e for e in examples if part(e) == "train"], [e for e in examples if part(e) != "train"]


def run_once(cfg: ModelConfig, train_ex, eval_ex, tcfg: TrainConfig, family: str | None = None) -> tuple[TrainResult, EvalReport]:
    res = train(cfg, train_ex, tcfg)
    fam = family or cfg.truth_family
    rep = evaluate(res.net, eval_ex, fam, tcfg.seed, truth_s_floor=tcfg.truth_s_floor, s_hat_floor=tcfg.s_hat_floor)
    return res, rep


def sweep_alpha(seqs, partitions: dict, cfg: ModelConfig, tcfg: TrainConfig, alphas=None) -> tuple[list[dict], dict]:
    """Train one model per alpha on identical data/seed; rows (alpha, ccc_m, ccc_s, kl)."""
    if alphas is None:
        alphas = [round(0.1 * i, 1) for i in range(11)]
    ex = make_examples(seqs, cfg.truth_family, tcfg.seq_frames, samples_per_frame=cfg.samples_per_frame)
    tr, ev = split(ex, partitions)
    rows = []
    for a in alphas:
        _, rep = run_once(replace(cfg, alpha=float(a)), tr, ev, tcfg)
        rows.append({"alpha": float(a), "ccc_m": rep.ccc_m, "ccc_s": rep.ccc_s, "kl": rep.kl_mean})
    low = [r for r in rows if r["alpha"] <= 0.7 + 1e-9]
    rho = float("nan")
    if len(low) >= 3:
        rho = float(stats.spearmanr([r["alpha"] for r in low], [r["kl"] for r in low]).statistic)
    meta = {
        "family": cfg.truth_family,
        "recommended_alpha_band": list(RECOMMENDED_ALPHA_BAND),
        "spearman_kl_alpha_0_to_0.7": rho,
    }
    return rows, meta


def ablate_annotators(seqs, partitions: dict, cfg: ModelConfig, tcfg: TrainConfig, keeps=(3, 4, 5, 6), families=("student_t", "gaussian")) -> list[dict]:
    rows = []
    for keep in keeps:
        if keep < 3:
            raise ValueError(f"keep must be >= 3 for the ablation, got {keep}")
        for fam in families:
            fam = losses.normalize_family(fam)
            ex = make_examples(seqs, fam, tcfg.seq_frames, keep=keep, samples_per_frame=cfg.samples_per_frame)
            tr, ev = split(ex, partitions)
            _, rep = run_once(replace(cfg, truth_family=fam), tr, ev, tcfg)
            rows.append(
                {
                    "keep": keep,
                    "family": fam,
                    "nu": float(keep),
                    "ccc_m": rep.ccc_m,
                    "ccc_s": rep.ccc_s,
                    "kl": rep.kl_mean,
                    "mean_s_hat": rep.mean_s_hat,
                    "std_inflation": math.sqrt(variance_factor(keep)) if fam == "student_t" else 1.0,
                }
            )
    return rows


# ----------------------------------------------------------------------
# KL curve analysis
# ----------------------------------------------------------------------


def _curve_fns(sweep: str, s0: float, nu: float):
    """Per-sweep (kl_t, kl_gauss, kl_t_as_printed) as functions of the swept std x.

    sweep="estimate": the truth scale is fixed at s0 and the Gaussian
    estimate's std x varies. sweep="truth": the estimate std is fixed at s0
    and the truth scale x varies.
    """
    if sweep == "estimate":
        return (
            lambda x: losses.kl_t(nu, 0.0, s0, 0.0, x),
            lambda x: losses.kl_gaussian(0.0, s0, 0.0, x),
            lambda x: losses.kl_t_as_printed(nu, 0.0, s0, 0.0, x),
        )
    if sweep == "truth":
        return (
            lambda x: losses.kl_t(nu, 0.0, x, 0.0, s0),
            lambda x: losses.kl_gaussian(0.0, x, 0.0, s0),
            lambda x: losses.kl_t_as_printed(nu, 0.0, x, 0.0, s0),
        )
    raise ValueError(f"sweep must be 'estimate' or 'truth', got {sweep!r}")


def numeric_argmin(f, lo: float, hi: float) -> float:
    res = optimize.minimize_scalar(lambda x: float(f(x)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def analyze_kl_curves(s_grid=None, scenarios=KL_SCENARIOS, sweeps=("estimate", "truth")) -> tuple[list[dict], list[dict]]:
    """KL curves over a grid of std values; returns (curve rows, argmin rows)."""
    if s_grid is None:
        s_grid = np.round(np.arange(0.05, 2.0001, 0.01), 10)
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(s_grid <= 0):
        raise ValueError("s grid must be positive")
    curves, argmins = [], []
    lo, hi = float(s_grid.min()), float(s_grid.max())
    for s0, nu in scenarios:
        variance_factor(nu)
        for sweep in sweeps:
            ft, fg, fp = _curve_fns(sweep, s0, nu)
            kt, kg, kp = ft(s_grid), fg(s_grid), fp(s_grid)
            for x, a, b, c in zip(s_grid, kt, kg, kp):
                curves.append({"scenario_s": s0, "nu": nu, "sweep": sweep, "s": float(x), "kl_gaussian": float(b), "kl_t": float(a), "kl_t_as_printed": float(c)})
            at, ag = numeric_argmin(ft, lo, hi), numeric_argmin(fg, lo, hi)
            argmins.append(
                {
                    "scenario_s": s0,
                    "nu": nu,
                    "sweep": sweep,
                    "argmin_t": at,
                    "argmin_gaussian": ag,
                    "argmin_t_as_printed": numeric_argmin(fp, lo, hi),
                    "relaxation": at - ag,
                }
            )
    return curves, argmins
