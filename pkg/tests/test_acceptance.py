"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line that is repeated in the terminal
summary. The pipeline criteria are slow (about an hour and a half in total
on one core).
"""

import math
import time

import numpy as np
import pytest

from conftest import exact_correspondences, random_transform
from reghec.align import (
    Correspondence,
    CorrespondenceSet,
    apply_update,
    gauss_newton_step,
    jacobian,
    residual,
    solve_alignment,
)
from reghec.assess import compare_to_ground_truth
from reghec.boia import (
    GpHyper,
    GpModel,
    SearchBox,
    bo_ia_search,
    ei_closed_form,
    gp_posterior_batch,
    kernel_euclidean,
    kernel_matrix,
    kernel_se3,
    random_search,
)
from reghec.cli import RunConfig, calibrate_problem, cmd_benchmark, cmd_simulate
from reghec.errors import DegenerateGeometryError
from reghec.geom import RigidTransform, so3_exp
from reghec.sim import (
    PARALLEL_AXES,
    PURE_TRANSLATION,
    SINGLE_MOTION,
    SceneSpec,
    default_trajectory,
    default_x,
    make_problem,
    simulate,
    validate_poses,
)

SCENES = ["sphere", "plane", "cylinder", "cone", "cluster"]
SEEDS = range(10)


def pipeline_sweep(noise):
    """Full BO-IA + AA-ICPv on 9 views: {scene: [(deg, mm, seconds)]}."""
    out = {}
    for kind in SCENES:
        rows = []
        for seed in SEEDS:
            sp = simulate(kind, n_views=9, noise_sigma=noise, seed=seed, shared_points=True)
            t0 = time.perf_counter()
            res = calibrate_problem(sp.problem, seed=seed)
            rows.append((*compare_to_ground_truth(res.x, sp.x_gt), time.perf_counter() - t0))
        out[kind] = rows
    return out


def summarize_sweep(out, max_deg, max_mm):
    parts, hits = [], {}
    for kind, rows in out.items():
        hits[kind] = sum(d < max_deg and m < max_mm for d, m, _ in rows)
        worst = max(rows, key=lambda r: r[0] / max_deg + r[1] / max_mm)
        parts.append(f"{kind} {hits[kind]}/10 (worst {worst[0]:.3g} deg {worst[1]:.3g} mm)")
    slowest = max(s for rows in out.values() for _, _, s in rows)
    return hits, slowest, "; ".join(parts)


def test_criterion_01_ground_truth_recovery(record):
    hits, slowest, detail = summarize_sweep(pipeline_sweep(0.0), 0.1, 0.5)
    ok = all(h >= 8 for h in hits.values()) and slowest < 60.0
    record(1, ok, f"noiseless 0.1 deg / 0.5 mm in >= 8/10 per scene: {detail}; slowest run {slowest:.1f} s")


def test_criterion_02_noise_robustness(record):
    hits, _, detail = summarize_sweep(pipeline_sweep(0.0005), 0.5, 2.0)
    record(2, all(h >= 7 for h in hits.values()), f"0.5 mm noise, 0.5 deg / 2 mm in >= 7/10 per scene: {detail}")


@pytest.fixture(scope="module")
def aa_benchmark(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    cmd_simulate("sphere", 9, 0.0005, 0, d, shared_points=False)
    cfg = RunConfig.load(d / "run.json")
    cfg.runs = 100
    return cmd_benchmark(cfg)


def test_criterion_03_anderson_benefit(record, aa_benchmark):
    s = aa_benchmark
    ok = s["accelerated_fraction"] >= 0.8 and s["median_g_call_reduction"] >= 0.25
    record(
        3, ok,
        f"{s['convergent_runs']}/{s['runs']} mutually convergent; accelerated fraction "
        f"{s['accelerated_fraction']:.2f} (>= 0.80); median G-call reduction "
        f"{100 * s['median_g_call_reduction']:.1f}% (>= 25%); median speed-up {s['median_speedup_percent']:.0f}%",
    )


def test_criterion_04_shared_fixed_point(record, aa_benchmark):
    s = aa_benchmark
    gaps = [r["fixed_point_gap"] for r in s["per_run"] if r["aa_converged"] and r["plain_converged"]]
    record(
        4, s["shared_fixed_point_fraction"] >= 0.95,
        f"twist gap < 1e-3 in {100 * s['shared_fixed_point_fraction']:.0f}% of {len(gaps)} pairs (>= 95%); "
        f"largest gap {max(gaps):.2g}",
    )


def test_criterion_05_jacobian(record):
    rng = np.random.default_rng(2024)
    worst = 0.0
    h = 1e-6
    for _ in range(1000):
        a, b, x = (random_transform(rng) for _ in range(3))
        c = Correspondence(rng.normal(size=3), rng.normal(size=3), 0)
        fd = np.empty((3, 6))
        for k in range(6):
            dx = np.zeros(6)
            dx[k] = h
            fd[:, k] = (residual(a, b, apply_update(x, dx), c) - residual(a, b, apply_update(x, -dx), c)) / (2 * h)
        worst = max(worst, np.max(np.abs(jacobian(a, b, x, c) - fd)) / np.max(np.abs(fd)))
    record(5, worst < 1e-5, f"max relative error vs central differences over 1000 instances {worst:.2e} (< 1e-5)")


def test_criterion_06_monotone_descent(record):
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(100):
        x = random_transform(rng)
        poses, s = exact_correspondences(rng, x)
        s = CorrespondenceSet(s.p + rng.normal(scale=0.005, size=s.p.shape), s.q, s.motion)
        hist = solve_alignment(s, poses, apply_update(x, rng.normal(scale=0.3, size=6))).objective_history
        bad += any(f1 > f0 * (1 + 1e-12) + 1e-18 for f0, f1 in zip(hist, hist[1:]))
    record(6, bad == 0, f"objective increased in {bad}/100 noisy random instances")


def test_criterion_07_gp_and_ei(record):
    rng = np.random.default_rng(7)
    box = SearchBox.default()
    worst = 0.0
    for _ in range(100):
        hyper = GpHyper(*rng.uniform([0.5, 0.5, 1.0], [2.0, 2.0, 20.0]))
        us, e = box.sample(rng, 5), rng.normal(size=5)
        m = GpModel(us, e, hyper)
        q = box.sample(rng, 20)
        k = kernel_matrix(us, us, hyper) + m.jitter * hyper.sigma**2 * np.eye(5)
        kinv = np.linalg.inv(k)
        ks = kernel_matrix(q, us, hyper)
        mean = ks @ kinv @ (e - e.mean()) + e.mean()
        var = np.maximum(hyper.sigma**2 - np.einsum("ij,jk,ik->i", ks, kinv, ks), 0.0)
        gm, gv = gp_posterior_batch(m, q)
        worst = max(worst, np.max(np.abs(gm - mean)), np.max(np.abs(gv - var)))
    ei_worst = 0.0
    for _ in range(100):
        sd, best = rng.uniform(0.1, 2.0), rng.normal()
        mu = best - sd * rng.uniform(-1.0, 2.0)
        mc = np.maximum(best - rng.normal(mu, sd, 1_000_000), 0.0).mean()
        cf = ei_closed_form(mu, sd, best)[()]
        ei_worst = max(ei_worst, abs(mc - cf) / cf)
    ok = worst < 1e-8 and ei_worst < 1e-2
    record(7, ok, f"posterior vs dense inverse max gap {worst:.1e} (< 1e-8); EI vs Monte Carlo max rel gap "
                  f"{ei_worst:.2e} (< 1e-2)")


def test_criterion_08_kernel_wraparound(record):
    rng = np.random.default_rng(8)
    exact, contrast = 0, 0
    for _ in range(100):
        h = GpHyper(*rng.uniform([0.5, 0.5, 1.0], [2.0, 2.0, 20.0]))
        v = rng.normal(size=3)
        th = rng.uniform(0.5, math.pi)
        v *= th / np.linalg.norm(v)
        w = (th - 2 * math.pi) * v / th
        t = rng.uniform(-0.1, 0.1, 3)
        exact += kernel_se3(np.r_[v, t], np.r_[w, t], h) == h.sigma**2
        contrast += kernel_euclidean(np.r_[v, t], np.r_[w, t], h) < h.sigma**2
    pi_case = kernel_se3([0, 0, -math.pi, 0, 0, 0], [0, 0, math.pi, 0, 0, 0], GpHyper(1.3, 0.7, 5.0)) == 1.3**2
    ok = exact == 100 and contrast == 100 and pi_case
    record(8, ok, f"se3 kernel equals sigma^2 on {exact}/100 antipodal pairs and at +-pi about z: {pi_case}; "
                  f"Euclidean baseline below sigma^2 on {contrast}/100")


def test_criterion_09_bo_beats_random(record):
    prob = simulate("sphere", n_views=4, seed=0).problem
    wins = 0
    for seed in range(100):
        wins += bo_ia_search(prob, seed=seed).best_mse <= random_search(prob, n=100, seed=seed).best_mse
    record(9, wins >= 90, f"BO-IA best MSE <= best of 100 random samples in {wins}/100 trials (>= 90)")


def test_criterion_10_eye_to_hand_duality(record):
    x = default_x("eye_to_hand")
    raw = default_trajectory(x, "eye_to_hand", seed=10)
    target = RigidTransform(np.eye(3), [0.0, 0.0, 0.15])
    spec = SceneSpec("cluster", seed=10)
    e2h = make_problem(spec, x, raw, "eye_to_hand", target_pose=target, shared_points=True, seed=10)
    eih = make_problem(spec, x, [a.inverse() for a in raw], "eye_in_hand", target_pose=target,
                       shared_points=True, seed=10)
    c = np.round(x.t, 1)
    box = SearchBox(np.r_[[-math.pi] * 3, c - 0.2], np.r_[[math.pi] * 3, c + 0.2])
    a = calibrate_problem(e2h.problem, box, seed=10)
    b = calibrate_problem(eih.problem, box, seed=10)
    same = (
        np.array_equal(a.x.matrix(), b.x.matrix())
        and np.array_equal(a.bo.values, b.bo.values)
        and a.aa.mse_history == b.aa.mse_history
        and a.aa.g_calls == b.aa.g_calls
    )
    deg, mm = compare_to_ground_truth(a.x, x)
    record(10, same, f"eye-to-hand run and inverted-pose eye-in-hand twin bit-identical: {same} "
                     f"(recovered X off by {deg:.2g} deg / {mm:.2g} mm)")


def test_criterion_11_degenerate_detection(record):
    x = default_x("eye_in_hand")
    two = validate_poses(default_trajectory(x)[:2]).flags
    shifted = [RigidTransform(np.eye(3), [0.1 * i, 0.05 * i * i, 0.0]) for i in range(4)]
    trans = validate_poses(shifted).flags
    about_z = [RigidTransform(so3_exp([0, 0, 0.35 * i]), [0.1 * i, 0.02 * i, 0.0]) for i in range(5)]
    par = validate_poses(about_z).flags
    rng = np.random.default_rng(11)
    poses, s = exact_correspondences(rng, x, poses=about_z)
    try:
        gauss_newton_step(s, poses, x)
        raised = False
    except DegenerateGeometryError:
        raised = True
    ok = SINGLE_MOTION in two and PURE_TRANSLATION in trans and PARALLEL_AXES in par and raised
    record(11, ok, f"flags: 2 poses {two}, pure translation {trans}, parallel axes {par}; "
                   f"Gauss-Newton on parallel-axis exact data raised the degenerate-geometry error: {raised}")
