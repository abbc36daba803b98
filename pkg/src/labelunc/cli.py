"""``labelunc`` command-line entry point.

Every command resolves its configuration (built-in defaults, then the
``--config`` file, then explicit flags), writes ``manifest.json`` into
``--out`` and only then computes. Exit codes: 0 success, 2 config or
input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import pipeline as P
from .annotations import (
    AnnotationFormatError,
    PreprocessConfig,
    build_label_dist,
    drop_annotators,
    preprocess,
    read_annotation_csv,
    write_fused_csv,
)
from .config import ConfigError, config_hash, derive_seed, load_config
from .model import ModelConfig, Network
from .synth import SynthConfig, generate, read_dataset, write_dataset

log = logging.getLogger("labelunc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"feature_dim", "truth_family"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(P.TrainConfig)} - {"seed"}
SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthConfig)} - {"seed"}

DEFAULTS = {
    "synth": {},
    "fuse": {"family": "student_t", "median_ms": 0.0, "lowpass_hz": 0.0, "lowpass_annotators": None, "normalize": False, "keep": None},
    "train": {"family": "student_t", "alpha": 1.0, "keep": None},
    "eval": {"tune_shift": "none", "report": "dev", "family": None},
    "sweep-alpha": {"family": "student_t", "alphas": tuple(round(0.1 * i, 1) for i in range(11))},
    "ablate": {"keeps": (3, 4, 5, 6), "families": ("student_t", "gaussian")},
    "analyze-kl": {"scenario": "fig2", "s_hat": None, "nu": None, "sweep": "estimate,truth", "s_min": 0.05, "s_max": 2.0, "s_step": 0.01},
}


def tool_version() -> str:
    try:
        return metadata.version("labelunc")
    except metadata.PackageNotFoundError:
        from . import __version__

        return __version__


# ----------------------------------------------------------------------
# configuration plumbing
# ----------------------------------------------------------------------


def _tuple(v):
    if v is None:
        return None
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def resolve_config(args, command: str) -> dict:
    cfg = dict(DEFAULTS.get(command, {}))
    if args.config:
        loaded = load_config(args.config)
        cfg.update(loaded)
    overrides = {k: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
    for k, v in overrides.items():
        cfg[k[4:]] = v
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if args.paper_scale:
        cfg["paper_scale"] = True
    cfg.pop("command", None)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items())}


def _pick(cfg: dict, keys: set) -> dict:
    out = {}
    for k in keys & cfg.keys():
        v = cfg[k]
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


def model_config(cfg: dict, feature_dim: int | None = None) -> ModelConfig:
    kw = _pick(cfg, MODEL_KEYS)
    if "family" in cfg and cfg["family"] is not None:
        kw["truth_family"] = cfg["family"]
    if feature_dim is not None:
        kw["feature_dim"] = feature_dim
    mc = ModelConfig(**kw)
    return mc.paper_scale() if cfg.get("paper_scale") else mc


def train_config(cfg: dict) -> P.TrainConfig:
    return P.TrainConfig(seed=derive_seed(cfg["seed"], "train"), **_pick(cfg, TRAIN_KEYS))


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(seed=derive_seed(cfg["seed"], "synth"), **_pick(cfg, SYNTH_KEYS))


def write_manifest(out: Path, command: str, cfg: dict, args) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    manifest = {
        "command": command,
        "config_path": str(args.config) if args.config else None,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "output_dir": str(out),
        "tool_version": tool_version(),
    }
    path = out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_rows(path: Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or list(rows[0].keys())
    with path.open("w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in columns) + "\n")


def _require(cfg: dict, key: str):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"missing required setting '{key}' (flag --{key.replace('_', '-')} or config key)")
    return cfg[key]


def _load_data(cfg: dict):
    data = Path(_require(cfg, "data"))
    seqs = read_dataset(data)
    parts = {s.name: s.partition for s in seqs}
    return seqs, parts


def _prep(cfg: dict) -> PreprocessConfig | None:
    p = PreprocessConfig(
        median_ms=float(cfg.get("median_ms") or 0.0),
        lowpass_hz=float(cfg.get("lowpass_hz") or 0.0),
        lowpass_annotators=None if cfg.get("lowpass_annotators") is None else [str(a) for a in _tuple(cfg["lowpass_annotators"])],
        normalize=bool(cfg.get("normalize")),
    )
    if p.median_ms == 0 and p.lowpass_hz == 0 and not p.normalize:
        return None
    return p


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def cmd_synth(cfg: dict, out: Path) -> None:
    sc = synth_config(cfg)
    write_dataset(generate(sc), sc, out)


def cmd_fuse(cfg: dict, out: Path) -> None:
    src = Path(_require(cfg, "data"))
    files = sorted(src.glob("*_annotations.csv")) if src.is_dir() else [src]
    if not files:
        raise ConfigError(f"{src}: no *_annotations.csv files")
    prep = _prep(cfg)
    keep = cfg.get("keep")
    for f in files:
        ann = read_annotation_csv(f)
        if prep is not None:
            ann = preprocess(ann, prep)
        if keep is not None:
            if int(keep) < 2:
                raise ConfigError(f"keep must be >= 2, got {keep}")
            ann = drop_annotators(ann, int(keep))
        dist = build_label_dist(ann, cfg["family"])
        name = f.name.replace("_annotations.csv", "")
        write_fused_csv(out / f"{name}_fused.csv", dist, ann.frame_rate)


def _examples(cfg: dict, seqs, mc: ModelConfig, family: str, tc: P.TrainConfig):
    keep = cfg.get("keep")
    return P.make_examples(
        seqs, family, tc.seq_frames, keep=None if keep is None else int(keep), prep=_prep(cfg), samples_per_frame=mc.samples_per_frame
    )


def cmd_train(cfg: dict, out: Path) -> None:
    seqs, parts = _load_data(cfg)
    mc = model_config(cfg, seqs[0].features.shape[1])
    tc = train_config(cfg)
    tr, _ = P.split(_examples(cfg, seqs, mc, mc.truth_family, tc), parts)
    res = P.train(mc, tr, tc)
    res.net.save(out / "model.npz")
    write_rows(out / "loss_history.csv", res.history, ["epoch", "ccc_term", "elbo_term", "kl_term", "total"])
    (out / "model_config.json").write_text(json.dumps(dataclasses.asdict(mc), indent=2, sort_keys=True) + "\n")


def _load_model(model_dir: Path) -> tuple[Network, ModelConfig]:
    cfg_path = model_dir / "model_config.json"
    if not cfg_path.exists():
        raise ConfigError(f"{model_dir}: no model_config.json; run 'train' first")
    mc = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in json.loads(cfg_path.read_text()).items()})
    return Network.load(model_dir / "model.npz", mc), mc


def cmd_eval(cfg: dict, out: Path) -> None:
    seqs, parts = _load_data(cfg)
    model_dir = Path(_require(cfg, "model"))
    net, mc = _load_model(model_dir)
    family = cfg.get("family") or mc.truth_family
    # window length and loss floors follow the training run unless overridden here
    base = {}
    if (model_dir / "manifest.json").exists():
        base = json.loads((model_dir / "manifest.json").read_text())["config"]
    tc = train_config({**base, **_pick(cfg, TRAIN_KEYS), "seed": cfg["seed"]})
    ex = _examples(cfg, seqs, mc, family, tc)
    groups = {"train": [], "dev": []}
    for e in ex:
        groups["train" if parts.get(e.name.split(":")[0], "train") == "train" else "dev"].append(e)
    report_part, tune_part = cfg["report"], cfg["tune_shift"]
    if report_part not in groups or not groups[report_part]:
        raise ConfigError(f"no sequences in report partition {report_part!r}")
    floors = {"truth_s_floor": tc.truth_s_floor, "s_hat_floor": tc.s_hat_floor}
    seed = derive_seed(cfg["seed"], "eval")
    rep_preds = P.predict(net, groups[report_part], seed)
    if tune_part == "none":
        rep = P.score(rep_preds, groups[report_part], family, **floors)
    else:
        if tune_part == report_part:
            raise ConfigError("time-shift tuning and reporting must use different partitions")
        if tune_part not in groups or not groups[tune_part]:
            raise ConfigError(f"no sequences in tuning partition {tune_part!r}")
        tune_preds = P.predict(net, groups[tune_part], seed)
        rep = P.postprocess_timeshift(tune_preds, groups[tune_part], rep_preds, groups[report_part], family, **floors)
    pvals = {"p_ccc_m": float("nan"), "p_ccc_s": float("nan"), "p_kl": float("nan")}
    if cfg.get("compare"):
        other, _ = _load_model(Path(cfg["compare"]))
        orep = P.score(P.predict(other, groups[report_part], seed), groups[report_part], family, **floors)
        if tune_part != "none":
            shifted = P.apply_time_shift(orep.predictions, rep.best_time_shift_s, groups[report_part][0].frame_rate)
            orep = P.score(shifted, groups[report_part], family, **floors)
        a, b = rep.per_sequence, orep.per_sequence
        pvals = {
            "p_ccc_m": P.significance_test(a["ccc_m"], b["ccc_m"]),
            "p_ccc_s": P.significance_test(a["ccc_s"], b["ccc_s"]),
            "p_kl": P.significance_test(b["kl"], a["kl"]),
        }
    row = {
        "config_hash": config_hash(cfg),
        "family": family,
        "alpha": mc.alpha,
        "ccc_m": rep.ccc_m,
        "ccc_s": rep.ccc_s,
        "kl": rep.kl_mean,
        "best_shift": rep.best_time_shift_s,
        **pvals,
    }
    write_rows(out / "metrics.csv", [row])
    per = rep.per_sequence
    write_rows(
        out / "per_sequence.csv",
        [{"sequence": n, "ccc_m": a, "ccc_s": b, "kl": c} for n, a, b, c in zip(per["name"], per["ccc_m"], per["ccc_s"], per["kl"])],
    )


def cmd_sweep_alpha(cfg: dict, out: Path) -> None:
    seqs, parts = _load_data(cfg)
    mc = model_config(cfg, seqs[0].features.shape[1])
    rows, meta = P.sweep_alpha(seqs, parts, mc, train_config(cfg), [float(a) for a in _tuple(cfg["alphas"])])
    write_rows(out / "alpha_sweep.csv", rows, ["alpha", "ccc_m", "ccc_s", "kl"])
    (out / "alpha_sweep_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def cmd_ablate(cfg: dict, out: Path) -> None:
    seqs, parts = _load_data(cfg)
    keeps = [int(k) for k in _tuple(cfg["keeps"])]
    if min(keeps) < 3:
        raise ConfigError(f"ablation keep values must be >= 3, got {keeps}")
    mc = model_config(cfg, seqs[0].features.shape[1])
    rows = P.ablate_annotators(seqs, parts, mc, train_config(cfg), keeps, [str(f) for f in _tuple(cfg["families"])])
    write_rows(out / "ablation.csv", rows)


SCENARIOS = {"fig2": P.KL_SCENARIOS, "fig2a": (P.KL_SCENARIOS[0],), "fig2b": (P.KL_SCENARIOS[1],), "fig2c": (P.KL_SCENARIOS[2],), "fig2d": (P.KL_SCENARIOS[3],)}


def cmd_analyze_kl(cfg: dict, out: Path) -> None:
    if cfg.get("s_hat") is not None or cfg.get("nu") is not None:
        s_hats = [float(v) for v in _tuple(_require(cfg, "s_hat"))]
        nus = [float(v) for v in _tuple(_require(cfg, "nu"))]
        scenarios = [(s, n) for s in s_hats for n in nus]
    else:
        name = cfg["scenario"]
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        scenarios = SCENARIOS[name]
    lo, hi, step = float(cfg["s_min"]), float(cfg["s_max"]), float(cfg["s_step"])
    if not 0 < lo < hi or step <= 0:
        raise ConfigError("need 0 < s_min < s_max and s_step > 0")
    grid = np.round(np.arange(lo, hi + 0.5 * step, step), 10)
    sweeps = [s.strip() for s in (cfg["sweep"].split(",") if isinstance(cfg["sweep"], str) else cfg["sweep"])]
    curves, argmins = P.analyze_kl_curves(grid, scenarios, sweeps)
    write_rows(out / "kl_curves.csv", curves)
    write_rows(out / "kl_argmins.csv", argmins)


COMMANDS = {
    "synth": cmd_synth,
    "fuse": cmd_fuse,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-alpha": cmd_sweep_alpha,
    "ablate": cmd_ablate,
    "analyze-kl": cmd_analyze_kl,
}


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def _csv(cast):
    def parse(text: str):
        return tuple(cast(p) for p in text.split(",") if p.strip())

    return parse


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="key=value config file or a previous manifest.json")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out", default=d, help="output directory (default: current directory)")
    p.add_argument("--paper-scale", action="store_true", default=argparse.SUPPRESS if suppress else False)
    p.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS if suppress else False, help="validate and write only the manifest")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelunc", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    def opt(sp, flag, **kw):
        dest = "opt_" + flag.lstrip("-").replace("-", "_")
        sp.add_argument(flag, dest=dest, default=None, **kw)

    def train_opts(sp):
        opt(sp, "--data", help="dataset directory written by 'synth'")
        opt(sp, "--epochs", type=int)
        opt(sp, "--lr", type=float)
        opt(sp, "--batch-size", type=int)
        opt(sp, "--seq-frames", type=int)
        opt(sp, "--n-passes", type=int)
        opt(sp, "--window-b-frames", type=int)

    sp = add("synth", "generate a synthetic dataset")
    opt(sp, "--num-sequences", type=int)
    opt(sp, "--frames-per-sequence", type=int)
    opt(sp, "--num-annotators", type=int)
    opt(sp, "--injected-lag-s", type=float)
    opt(sp, "--noise-scale", type=float)
    opt(sp, "--distortion-annotators", type=_csv(int))
    opt(sp, "--distortion-freq-hz", type=float)

    sp = add("fuse", "fuse annotation CSVs into time_s,m,s,nu label distributions")
    opt(sp, "--data", help="annotation CSV or directory of *_annotations.csv")
    opt(sp, "--family")
    opt(sp, "--keep", type=int)
    opt(sp, "--median-ms", type=float)
    opt(sp, "--lowpass", type=float)
    opt(sp, "--lowpass-annotators", type=_csv(str))
    sp.add_argument("--normalize", dest="opt_normalize", action="store_true", default=None)

    sp = add("train", "train one model")
    train_opts(sp)
    opt(sp, "--alpha", type=float)
    opt(sp, "--family")
    opt(sp, "--keep", type=int)

    sp = add("eval", "evaluate a trained model")
    opt(sp, "--data")
    opt(sp, "--model", help="output directory of a 'train' run")
    opt(sp, "--family")
    opt(sp, "--tune-shift", choices=("none", "train", "dev"))
    opt(sp, "--report", choices=("train", "dev"))
    opt(sp, "--compare", help="second model directory for paired one-tailed t-tests")
    opt(sp, "--keep", type=int)

    sp = add("sweep-alpha", "train across alpha values")
    train_opts(sp)
    opt(sp, "--family")
    opt(sp, "--alphas", type=_csv(float))

    sp = add("ablate", "annotator-count ablation for both families")
    train_opts(sp)
    opt(sp, "--keeps", type=_csv(int))
    opt(sp, "--families", type=_csv(str))

    sp = add("analyze-kl", "KL-vs-std curves and their argmins")
    opt(sp, "--scenario")
    opt(sp, "--s-hat", type=_csv(float))
    opt(sp, "--nu", type=_csv(float))
    opt(sp, "--sweep")
    opt(sp, "--s-min", type=float)
    opt(sp, "--s-max", type=float)
    opt(sp, "--s-step", type=float)
    return parser


def _normalize_args(args) -> None:
    # map flag spellings onto config keys
    if getattr(args, "opt_lowpass", None) is not None:
        args.opt_lowpass_hz = args.opt_lowpass
    if hasattr(args, "opt_lowpass"):
        del args.opt_lowpass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _normalize_args(args)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args, args.command)
        out = Path(args.out or ".")
        # validate before touching the disk beyond the manifest
        if args.command == "synth":
            synth_config(cfg)
        elif args.command in ("train", "sweep-alpha", "ablate"):
            model_config(cfg)
            train_config(cfg)
        write_manifest(out, args.command, cfg, args)
        if args.dry_run:
            return EXIT_OK
        COMMANDS[args.command](cfg, out)
    except P.NumericalError as exc:
        print(f"labelunc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, AnnotationFormatError, ValueError, KeyError, OSError, TypeError) as exc:
        print(f"labelunc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
