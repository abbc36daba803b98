"""Print the KL-vs-std argmins for the four reference scenarios and,
optionally, save the curves as CSV.

    python scripts/kl_curves.py --csv /tmp/kl_curves.csv
"""

import argparse
import csv

from labelunc import pipeline as P


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", help="write the full curves here")
    ap.add_argument("--sweep", choices=("estimate", "truth"), default="estimate")
    args = ap.parse_args()

    curves, argmins = P.analyze_kl_curves(sweeps=(args.sweep,))
    print(f"{'s':>5} {'nu':>4}  {'argmin t':>9} {'argmin gauss':>12} {'relaxation':>10}")
    for r in argmins:
        print(f"{r['scenario_s']:5.2f} {r['nu']:4.0f}  {r['argmin_t']:9.4f} {r['argmin_gaussian']:12.4f} {r['relaxation']:10.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(curves[0]))
            w.writeheader()
            w.writerows(curves)


if __name__ == "__main__":
    main()
