"""GNP vs the DropoutNet baseline on the planted-block fixture, one row per seed.

    python scripts/synthetic_comparison.py --seeds 0 1 2 3 4
"""
import argparse
import logging

import numpy as np

from gnp.experiment import fixture_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--hidden", type=int, default=200)
    ap.add_argument("--tau", type=float, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    protocols = ("hybrid", "warm", "cold")
    print("seed\t" + "\t".join(f"{p}_gnp\t{p}_base" for p in protocols) + "\thybrid_gain")
    gains = []
    for seed in args.seeds:
        c = fixture_run(seed, tau=args.tau, hidden=args.hidden)
        cells = []
        for p in protocols:
            cells += [f"{c.gnp[p].ndcg:.4f}", f"{c.baseline[p].ndcg:.4f}"]
        gain = c.gnp["hybrid"].ndcg / max(c.baseline["hybrid"].ndcg, 1e-12) - 1
        gains.append(gain)
        print(f"{seed}\t" + "\t".join(cells) + f"\t{gain:+.1%}")
    print(f"# hybrid NDCG@20 gain >= 5% in {sum(g >= 0.05 for g in gains)}/{len(gains)} seeds, "
          f"median {np.median(gains):+.1%}")


if __name__ == "__main__":
    main()
