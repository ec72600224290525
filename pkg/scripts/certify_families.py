"""Population-limit OOD certificate across length-distribution families.

Prints max-sum ratio, verdict and margins for singletons, uniform windows and
the LP-optimal distribution.
"""

import argparse

from trigcopy.datagen import LengthDistribution, SamplerConfig
from trigcopy.diversity import max_sum_ratio, optimal_distribution
from trigcopy.oracle import certify_ood


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=64)
    ap.add_argument("--n-trg", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--corrected", action="store_true")
    args = ap.parse_args()

    for n in args.n_trg:
        cfg = SamplerConfig(args.N, n, 40)
        fams = [(f"point({e})", LengthDistribution.point(e)) for e in (1, 3, 5, 8)]
        fams += [(f"unif(3..{hi})", LengthDistribution.uniform(3, hi)) for hi in (5, 8, 12, 17)]
        fams += [("optimal", optimal_distribution(n))]
        print(f"N_trg={n}")
        for name, dist in fams:
            c = certify_ood(dist, cfg, corrected=args.corrected)
            w = "" if c.witness is None else f" witness=({c.witness.ell1},{c.witness.ell2})"
            print(f"  {name:12s} R={max_sum_ratio(dist):.4f} generalizes={c.generalizes!s:5s} "
                  f"gap={c.gap:+.3f} margin={c.margin:+.3f} failing={len(c.failing_pairs)}/{c.n_pairs}{w}")


if __name__ == "__main__":
    main()
