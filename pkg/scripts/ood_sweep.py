"""OOD accuracy and shortcut error rates over (ell_min, ell_max) for several N_trg.

Thin wrapper over ``trigcopy.experiments.run_sweep``; prints seed-averaged
rates as a grid per N_trg. Cached cells are reused across invocations.
"""

import argparse

from trigcopy.config import ExperimentConfig, SweepConfig
from trigcopy.experiments import aggregate, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ood")
    ap.add_argument("--N", type=int, default=32)
    ap.add_argument("--n-trg", type=int, nargs="+", default=[4, 8])
    ap.add_argument("--ell-min", type=int, nargs="+", default=[3])
    ap.add_argument("--ell-max", type=int, nargs="+", default=[4, 6, 8, 10, 12, 15])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    exp = ExperimentConfig(N=args.N, sweep=SweepConfig(args.ell_min, args.ell_max, args.n_trg, args.seeds)).validate()
    res = run_sweep(exp, args.out, workers=args.workers)
    print(f"table: {res.table} ({res.computed} computed, {res.reused} cached, {len(res.failures)} failed)")
    agg = aggregate(res.rows)
    for metric in ("ood_accuracy", "pseudo_rate", "leftmost_rate"):
        print(f"\n{metric}")
        for n_trg in sorted(set(args.n_trg)):
            for lo in sorted(args.ell_min):
                cells = [agg.get((n_trg, lo, hi)) for hi in sorted(args.ell_max)]
                row = " ".join("  -  " if c is None else f"{c[metric]:.3f}" for c in cells)
                print(f"  N_trg={n_trg:2d} ell_min={lo:2d}: {row}")


if __name__ == "__main__":
    main()
