"""Err_R / Err_t of repeated target measurements after calibration.

Calibrates on a noisy synthetic scene, then re-scans the stationary object
from every robot pose, registers each scan to the scene model and reports
the spread of the resulting target poses for the estimate and for the
ground truth.

    python3 scripts/pose_spread.py --scene cluster --seed 0
"""

import argparse

from reghec.assess import compare_to_ground_truth, err_rotation, err_translation, measure_target_poses
from reghec.cli import calibrate_problem
from reghec.sim import KINDS, simulate


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--scene", default="cluster", choices=KINDS)
    p.add_argument("--views", type=int, default=9)
    p.add_argument("--noise", type=float, default=0.0005)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    sp = simulate(args.scene, n_views=args.views, noise_sigma=args.noise, seed=args.seed)
    res = calibrate_problem(sp.problem, seed=args.seed)
    deg, mm = compare_to_ground_truth(res.x, sp.x_gt)
    print(f"estimate vs ground truth: {deg:.3f} deg, {mm:.3f} mm")
    for name, x in [("estimate", res.x), ("ground truth", sp.x_gt)]:
        m = measure_target_poses(sp, x, args.noise, seed=args.seed + 1)
        print(f"{name:12s} Err_R {err_rotation(m):.3f} deg  Err_t {err_translation(m):.3f} mm")


if __name__ == "__main__":
    main()
