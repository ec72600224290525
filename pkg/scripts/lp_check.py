"""Closed-form LP optimum vs brute force and KKT for small instances."""

import argparse

from trigcopy.diversity import LpInstance, brute_force_lp, check_kkt, optimal_distribution, optimal_objective


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolution", type=int, default=60)
    args = ap.parse_args()
    for n, U in ((1, 3), (2, 4), (3, 5), (2, 6), (3, 6)):
        inst = LpInstance(U, n)
        bf = brute_force_lp(inst, args.resolution)
        kkt = check_kkt(inst, optimal_distribution(n, U))
        print(f"N_trg={n} U={U}: closed form {optimal_objective(n)}, brute force {bf.best_objective} "
              f"at {[str(m) for m in bf.best_q.masses]}, KKT {'ok' if kkt.satisfied else 'FAILED'} (nu={kkt.nu:g})")


if __name__ == "__main__":
    main()
