"""Calibration success against the number of views, per scene.

Runs the full pipeline on noisy synthetic data and counts seeds whose
estimate lies within the given rotation / translation tolerance.

    python3 scripts/view_count_sweep.py --scenes sphere plane --views 3 5 7 9 --seeds 5
"""

import argparse

from reghec.assess import compare_to_ground_truth
from reghec.cli import calibrate_problem
from reghec.errors import DegenerateGeometryError
from reghec.sim import KINDS, simulate


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--scenes", nargs="+", default=["sphere", "plane", "cylinder", "cone", "cluster"], choices=KINDS)
    p.add_argument("--views", nargs="+", type=int, default=[3, 5, 7, 9])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.0005)
    p.add_argument("--deg", type=float, default=0.5)
    p.add_argument("--mm", type=float, default=2.0)
    args = p.parse_args()
    for kind in args.scenes:
        for n in args.views:
            ok = 0
            for seed in range(args.seeds):
                sp = simulate(kind, n_views=n, noise_sigma=args.noise, seed=seed)
                try:
                    res = calibrate_problem(sp.problem, seed=seed)
                except DegenerateGeometryError:
                    continue
                deg, mm = compare_to_ground_truth(res.x, sp.x_gt)
                ok += deg < args.deg and mm < args.mm
            print(f"{kind:9s} views={n}: {ok}/{args.seeds} within {args.deg} deg / {args.mm} mm", flush=True)


if __name__ == "__main__":
    main()
