"""Best observed E(u) after BO-IA with each covariance function.

The SE(3) kernel is compared with Euclidean squared-exponential, ARD and
Matern 5/2 kernels over twists, at equal sample budgets.

    python3 scripts/kernel_comparison.py --scene sphere --trials 10
"""

import argparse
import statistics

from reghec.boia import KERNELS, bo_ia_search
from reghec.sim import KINDS, simulate


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--scene", default="sphere", choices=KINDS)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--kernels", nargs="+", default=list(KERNELS), choices=KERNELS)
    args = p.parse_args()
    prob = simulate(args.scene, n_views=args.views, noise_sigma=0.0005, seed=0).problem
    best = {k: [] for k in args.kernels}
    for seed in range(args.trials):
        for k in args.kernels:
            best[k].append(bo_ia_search(prob, seed=seed, kernel=k).best_mse)
        print(f"trial {seed}: " + " ".join(f"{k}={best[k][-1]:.3e}" for k in args.kernels), flush=True)
    for k in args.kernels:
        wins = sum(
            best[k][i] <= min(best[j][i] for j in args.kernels) for i in range(args.trials)
        )
        print(f"{k:9s} median best MSE {statistics.median(best[k]):.3e}  lowest in {wins}/{args.trials} trials")


if __name__ == "__main__":
    main()
