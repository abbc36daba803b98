"""Annotator-count ablation: how much the t label distribution helps as
annotators are dropped."""

import argparse

from labelunc import pipeline as P
from labelunc.model import ModelConfig
from labelunc.synth import SynthConfig, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--keeps", default="3,4,5,6")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    seqs = generate(SynthConfig(seed=args.seed))
    parts = {s.name: s.partition for s in seqs}
    keeps = tuple(int(k) for k in args.keeps.split(","))
    rows = P.ablate_annotators(seqs, parts, ModelConfig(), P.TrainConfig(lr=args.lr, epochs=args.epochs, seed=11), keeps)
    kl = {(r["keep"], r["family"]): r["kl"] for r in rows}
    print("keep  kl_t     kl_gauss  advantage")
    for k in keeps:
        t, g = kl[(k, "student_t")], kl[(k, "gaussian")]
        print(f"{k:4d}  {t:.4f}   {g:.4f}    {g - t:+.4f}")


if __name__ == "__main__":
    main()
