"""Inference latency of stored-representation scoring vs the two-tower MLP path,
over a range of catalogue sizes.

    python scripts/bench_inference.py --items 1000 10000 50000
"""
import argparse

import numpy as np
from threadpoolctl import threadpool_limits

from gnp.eval import bench_inference
from gnp.patching import Mlp


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--items", type=int, nargs="+", default=[1000, 10000])
    ap.add_argument("--users", type=int, default=1000)
    ap.add_argument("--dim", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    d = args.dim
    towers = (Mlp.init(2 * d, d, d, 2, rng), Mlp.init(2 * d, d, d, 2, rng))
    users = rng.standard_normal((args.users, d))
    user_in = rng.standard_normal((args.users, 2 * d))
    print("items\tgnp_median_ms\tbaseline_median_ms\tspeedup")
    with threadpool_limits(args.threads):
        for n in args.items:
            rep = bench_inference(users, rng.standard_normal((n, d)), user_in,
                                  rng.standard_normal((n, 2 * d)), towers, args.users, args.repeat)
            print(f"{n}\t{rep.gnp_median_ms:.1f}\t{rep.baseline_median_ms:.1f}\t"
                  f"{rep.baseline_median_ms / rep.gnp_median_ms:.2f}x")


if __name__ == "__main__":
    main()
