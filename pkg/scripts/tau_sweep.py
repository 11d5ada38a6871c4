"""Cold-only NDCG@20 against the dropout ratio on the synthetic fixture.

    python scripts/tau_sweep.py --seeds 0 1 2
"""
import argparse

from scipy.stats import spearmanr

from gnp.experiment import fixture_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--taus", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    args = ap.parse_args()

    print("seed\t" + "\t".join(f"tau={t:g}" for t in args.taus) + "\tspearman")
    for seed in args.seeds:
        cold = [fixture_run(seed, tau=t, with_baseline=False).gnp["cold"].ndcg for t in args.taus]
        rho = spearmanr(args.taus, cold).statistic
        print(f"{seed}\t" + "\t".join(f"{v:.4f}" for v in cold) + f"\t{rho:.2f}")


if __name__ == "__main__":
    main()
