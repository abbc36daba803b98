"""Sweep the KL weight alpha and report held-out CCC/KL per value.

Slow at the default size (one full training run per alpha); use --epochs to
shorten it.
"""

import argparse
import json

from labelunc import pipeline as P
from labelunc.model import ModelConfig
from labelunc.synth import SynthConfig, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", default="0,0.2,0.4,0.6,0.8,1.0")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--family", default="student_t")
    args = ap.parse_args()

    seqs = generate(SynthConfig(seed=args.seed))
    parts = {s.name: s.partition for s in seqs}
    alphas = [float(a) for a in args.alphas.split(",")]
    rows, meta = P.sweep_alpha(
        seqs, parts, ModelConfig(truth_family=args.family), P.TrainConfig(lr=args.lr, epochs=args.epochs, seed=11), alphas
    )
    for r in rows:
        print(f"alpha {r['alpha']:.2f}  ccc_m {r['ccc_m']:.3f}  ccc_s {r['ccc_s']:.3f}  kl {r['kl']:.4f}")
    print(json.dumps(meta, indent=2))


if __name__ == "__main__":
    main()
