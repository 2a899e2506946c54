"""Plain vs Anderson-accelerated ICP from perturbed starts on simulated scenes.

    python3 scripts/benchmark_aa.py --scenes sphere cluster --runs 100
"""

import argparse
import json

from reghec.cli import benchmark_aa
from reghec.sim import KINDS, simulate


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--scenes", nargs="+", default=["sphere"], choices=KINDS)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--independent", action="store_true")
    p.add_argument("--out")
    args = p.parse_args()
    results = {}
    for kind in args.scenes:
        sp = simulate(kind, noise_sigma=args.noise, seed=args.seed, shared_points=not args.independent)
        s = benchmark_aa(sp.problem, sp.x_gt, runs=args.runs, seed=args.seed)
        calls = [(r["aa_g_calls"], r["plain_g_calls"]) for r in s["per_run"]]
        print(
            f"{kind:9s} convergent={s['convergent_runs']:3d}/{s['runs']} "
            f"accelerated={s['accelerated_fraction']:.2f} "
            f"median_reduction={s['median_g_call_reduction']:.2f} "
            f"median_speedup={s['median_speedup_percent']:.0f}% "
            f"shared_fp={s['shared_fixed_point_fraction']:.2f} "
            f"mean_calls aa/plain={sum(a for a, _ in calls) / len(calls):.1f}/{sum(b for _, b in calls) / len(calls):.1f}",
            flush=True,
        )
        results[kind] = {k: v for k, v in s.items() if k != "per_run"}
    if args.out:
        with open(args.out, "w") as f:
            json.dump(results, f, indent=2)


if __name__ == "__main__":
    main()
