"""Distance of finite-sample one-step weights to the population limit vs M."""

import argparse
import json

from trigcopy.datagen import LengthDistribution, SamplerConfig
from trigcopy.experiments import concentration


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--M", type=int, nargs="+", default=[1000, 10000, 100000])
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    rep = concentration(SamplerConfig(8, 2, 40), LengthDistribution.uniform(4, 5), args.M, list(range(args.seeds)))
    print(json.dumps(rep.to_dict(), indent=2))


if __name__ == "__main__":
    main()
