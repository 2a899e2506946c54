"""``reghec`` command line: calibrate, simulate, benchmark-aa, assess.

Exit codes: 0 success, 2 calibration finished without converging, 1 error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import assess
from .boia import EI_BUDGET, KERNELS, SearchBox, bo_ia_search
from .cloud import load_cloud, save_cloud, voxel_downsample
from .errors import DegenerateGeometryError, EmptyViewError, NumericError, ParseError
from .geom import RigidTransform, pack, pack_near, project_to_so3, random_rotation
from .reg import CalibrationProblem, Mode, prepare_poses, run_aa_icpv, run_plain_icpv
from .sim import KINDS, simulate, validate_poses

log = logging.getLogger("reghec")

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
ROTATION_TOL = 1e-6


# ---------------------------------------------------------------- pose files


def format_pose(x):
    m = np.column_stack([x.r, x.t])
    return ",".join(repr(float(v)) for v in m.reshape(-1))


def save_poses(poses, path):
    Path(path).write_text("".join(format_pose(x) + "\n" for x in poses))


def load_poses(path):
    """Row-major 3x4 poses, one per line; '#' lines and blank lines skipped.

    Rotations within ``ROTATION_TOL`` of orthonormal are projected onto
    SO(3) to absorb rounding in the file.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read poses: {exc}", path=path) from exc
    poses = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = [t for t in line.replace(",", " ").split()]
        if len(tok) != 12:
            raise ParseError(f"expected 12 values, found {len(tok)}", path=path, line=ln)
        try:
            vals = np.array([float(t) for t in tok])
        except ValueError:
            raise ParseError(f"non-numeric value in {raw!r}", path=path, line=ln) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", path=path, line=ln)
        m = vals.reshape(3, 4)
        r = m[:, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_TOL or abs(np.linalg.det(r) - 1) > ROTATION_TOL:
            raise ParseError("rotation block is not orthonormal with det +1", path=path, line=ln)
        poses.append(RigidTransform(project_to_so3(r), m[:, 3]))
    return poses


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    mode: str = "eye_in_hand"
    clouds: list = field(default_factory=list)
    poses: str = ""
    # rotation bounds default to [-pi, pi]^3; translation bounds to [-0.1, 0.1]^3
    # for eye-in-hand and are mandatory for eye-to-hand
    box_lower: list | None = None
    box_upper: list | None = None
    epsilon: float = 1e-4
    trim_ratio: float = 0.9
    history_len: int = 4
    n0: int = 50
    n_total: int = 100
    period: int = 10
    seed: int = 0
    voxel_leaf: float | None = 0.001
    coarse_subset_size: int = 2000
    max_iters: int = 100
    ei_budget: int = EI_BUDGET
    kernel: str = "se3"
    output: str = "report.json"
    # benchmark-aa
    ground_truth: str | None = None
    runs: int = 100
    perturb_deg: float = 20.0
    perturb_mm: float = 50.0
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_dict(cls, d, base_dir="."):
        names = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**d, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except OSError as exc:
            raise ParseError(f"cannot read config: {exc}", path=path) from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
        if not isinstance(d, dict):
            raise ParseError("config must be a JSON object", path=path)
        return cls.from_dict(d, path.parent)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def validate(self):
        self.mode = Mode.parse(self.mode).value
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        if not self.n0 <= self.n_total:
            raise ValueError("n0 must not exceed n_total")
        if self.voxel_leaf is not None and not self.voxel_leaf > 0:
            raise ValueError("voxel_leaf must be positive or null")

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def search_box(self):
        lo = np.array(self.box_lower, dtype=float) if self.box_lower is not None else None
        hi = np.array(self.box_upper, dtype=float) if self.box_upper is not None else None
        if lo is not None and hi is not None and len(lo) == 6 and len(hi) == 6:
            return SearchBox(lo, hi)
        if lo is not None and hi is not None and len(lo) == 3 and len(hi) == 3:
            return SearchBox(np.r_[-np.pi * np.ones(3), lo], np.r_[np.pi * np.ones(3), hi])
        if lo is not None or hi is not None:
            raise ValueError("box_lower/box_upper must both be given, as 3 translation or 6 twist bounds")
        if Mode.parse(self.mode) is Mode.EYE_TO_HAND:
            raise ValueError("eye-to-hand runs need translation bounds (box_lower/box_upper) in the config")
        return SearchBox.default()


# ---------------------------------------------------------------- report


@dataclass
class CalibrationReport:
    x_matrix: list
    x_twist: list
    converged: bool
    iterations: int
    g_calls: int
    mse_history: list
    bo_best_mse: float
    bo_best_twist: list
    mode: str
    pose_flags: list
    input_digest: str
    timing: dict
    schema_version: str = SCHEMA_VERSION

    @property
    def x(self):
        return RigidTransform.from_matrix(np.array(self.x_matrix))

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        version = str(d.get("schema_version", ""))
        if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
            raise ValueError(f"unsupported report schema version {version!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def input_digest(cfg, paths):
    h = hashlib.sha256()
    body = cfg.to_dict()
    body.pop("output")
    h.update(json.dumps(body, sort_keys=True).encode())
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- pipeline


@dataclass
class PipelineResult:
    x: RigidTransform
    aa: object
    bo: object
    bo_seconds: float
    aa_seconds: float


def calibrate_problem(prob, box=None, n0=50, n_total=100, period=10, seed=0, kernel="se3",
                      ei_budget=EI_BUDGET, max_iters=100):
    """BO-IA for an initial guess, then AA-ICPv from it."""
    t0 = time.perf_counter()
    bo = bo_ia_search(prob, box, n0, n_total, period, seed, kernel, ei_budget)
    t1 = time.perf_counter()
    aa = run_aa_icpv(prob, bo.u, max_iters=max_iters)
    t2 = time.perf_counter()
    return PipelineResult(aa.x, aa, bo, t1 - t0, t2 - t1)


def build_problem(cfg):
    cloud_paths = [cfg.resolve(p) for p in cfg.clouds]
    pose_path = cfg.resolve(cfg.poses)
    raw = load_poses(pose_path)
    if len(raw) != len(cloud_paths):
        raise ValueError(f"{len(cloud_paths)} clouds but {len(raw)} poses in {pose_path}")
    poses = prepare_poses(raw, cfg.mode)
    report = validate_poses(poses)
    if len(poses) < 3:
        raise DegenerateGeometryError(f"{pose_path}: {report.describe()}; at least 3 poses are needed")
    for flag in report.flags:
        log.warning("pose validation: %s", flag)
    clouds = []
    for i, p in enumerate(cloud_paths):
        c = load_cloud(p)
        if cfg.voxel_leaf is not None:
            c = voxel_downsample(c, cfg.voxel_leaf)
        if len(c) == 0:
            raise ParseError("cloud has no points", path=p)
        clouds.append(c)
    prob = CalibrationProblem(
        clouds, poses, cfg.mode, trim_ratio=cfg.trim_ratio, epsilon=cfg.epsilon,
        history_len=cfg.history_len, coarse_subset_size=cfg.coarse_subset_size,
    )
    return prob, report, [pose_path, *cloud_paths]


def cmd_calibrate(cfg):
    start = time.perf_counter()
    prob, pose_report, paths = build_problem(cfg)
    res = calibrate_problem(prob, cfg.search_box(), cfg.n0, cfg.n_total, cfg.period, cfg.seed,
                            cfg.kernel, cfg.ei_budget, cfg.max_iters)
    report = CalibrationReport(
        x_matrix=res.x.matrix().tolist(),
        x_twist=pack(res.x).tolist(),
        converged=bool(res.aa.converged),
        iterations=int(res.aa.iterations),
        g_calls=int(res.aa.g_calls),
        mse_history=[float(e) for e in res.aa.mse_history],
        bo_best_mse=float(res.bo.best_mse),
        bo_best_twist=res.bo.u.tolist(),
        mode=prob.mode.value,
        pose_flags=list(pose_report.flags),
        input_digest=input_digest(cfg, paths),
        timing={
            "bo_ia_s": res.bo_seconds,
            "aa_icpv_s": res.aa_seconds,
            "total_s": time.perf_counter() - start,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        },
    )
    return report


# ---------------------------------------------------------------- benchmark


def twist_gap(x1, x2):
    u1 = pack(x1)
    return float(np.linalg.norm(pack_near(x2, u1) - u1))


def perturbed_start(center, run, seed, max_deg, max_mm):
    rng = np.random.default_rng([seed, run])
    r = random_rotation(rng, math.radians(max_deg)) @ center.r
    d = rng.normal(size=3)
    d *= rng.uniform(0.0, max_mm / 1000.0) / np.linalg.norm(d)
    return RigidTransform(r, center.t + d)


_WORKER_PROB = None


def _init_worker(prob):
    global _WORKER_PROB
    _WORKER_PROB = prob


def _benchmark_run(args):
    run, u0, max_iters = args
    prob = _WORKER_PROB
    aa = run_aa_icpv(prob, u0, max_iters=max_iters)
    plain = run_plain_icpv(prob, u0, max_iters=max_iters)
    return {
        "run": run,
        "aa_g_calls": aa.g_calls,
        "plain_g_calls": plain.g_calls,
        "aa_converged": bool(aa.converged),
        "plain_converged": bool(plain.converged),
        "aa_seconds": aa.elapsed,
        "plain_seconds": plain.elapsed,
        "speedup_percent": 100.0 * (plain.g_calls / aa.g_calls - 1.0),
        "fixed_point_gap": twist_gap(aa.x, plain.x),
        "aa_twist": aa.u.tolist(),
    }


def worker_count(requested=None):
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("REGHEC_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"REGHEC_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def benchmark_aa(prob, center, runs=100, seed=0, max_deg=20.0, max_mm=50.0, max_iters=100, workers=None):
    """Plain vs accelerated ICP from ``runs`` perturbed starts around ``center``."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    jobs = [(i, pack(perturbed_start(center, i, seed, max_deg, max_mm)), max_iters) for i in range(runs)]
    n = min(worker_count(workers), runs)
    if n == 1:
        _init_worker(prob)
        rows = [_benchmark_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(n, initializer=_init_worker, initargs=(prob,)) as pool:
            rows = list(pool.map(_benchmark_run, jobs))
    return summarize_benchmark(rows)


def summarize_benchmark(rows):
    rows = sorted(rows, key=lambda r: r["run"])
    both = [r for r in rows if r["aa_converged"] and r["plain_converged"]]
    faster = [r for r in both if r["aa_g_calls"] < r["plain_g_calls"]]
    reduction = [1.0 - r["aa_g_calls"] / r["plain_g_calls"] for r in both]
    shared = [r for r in both if r["fixed_point_gap"] < 1e-3]
    return {
        "runs": len(rows),
        "convergent_runs": len(both),
        "accelerated_fraction": len(faster) / len(both) if both else 0.0,
        "median_speedup_percent": statistics.median(r["speedup_percent"] for r in both) if both else 0.0,
        "median_g_call_reduction": statistics.median(reduction) if both else 0.0,
        "shared_fixed_point_fraction": len(shared) / len(both) if both else 0.0,
        "per_run": rows,
    }


def cmd_benchmark(cfg):
    prob, _, _ = build_problem(cfg)
    if cfg.ground_truth:
        center = load_poses(cfg.resolve(cfg.ground_truth))[0]
    else:
        res = calibrate_problem(prob, cfg.search_box(), cfg.n0, cfg.n_total, cfg.period, cfg.seed,
                                cfg.kernel, cfg.ei_budget, cfg.max_iters)
        center = res.x
    summary = benchmark_aa(prob, center, cfg.runs, cfg.seed, cfg.perturb_deg, cfg.perturb_mm, cfg.max_iters)
    summary["center_twist"] = pack(center).tolist()
    return summary


# ---------------------------------------------------------------- simulate


def cmd_simulate(kind, views, noise, seed, out, mode="eye_in_hand", shared_points=True):
    mode = Mode.parse(mode)
    sp = simulate(kind, mode, views, noise, seed, shared_points=shared_points)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, c in enumerate(sp.problem.clouds):
        name = f"view_{i:02d}.ply"
        save_cloud(c, out / name)
        names.append(name)
    save_poses(sp.robot_poses, out / "poses.csv")
    save_poses([sp.x_gt], out / "ground_truth.csv")
    cfg = {"mode": mode.value, "clouds": names, "poses": "poses.csv", "seed": seed,
           "ground_truth": "ground_truth.csv", "output": "report.json"}
    if mode is Mode.EYE_TO_HAND:
        # a rough guess of where the sensor stands, as a user would supply it
        c = np.round(sp.x_gt.t, 1)
        cfg["box_lower"] = (c - 0.2).tolist()
        cfg["box_upper"] = (c + 0.2).tolist()
    (out / "run.json").write_text(json.dumps(cfg, indent=2) + "\n")
    return sp


# ---------------------------------------------------------------- assess


def cmd_assess(poses_path=None, reports=(), ground_truth=None):
    if poses_path:
        measured = load_poses(poses_path)
    else:
        measured = [CalibrationReport.from_json(Path(p).read_text()).x for p in reports]
    if len(measured) < 2:
        raise ValueError("assessment needs at least two measured poses")
    out = {
        "n": len(measured),
        "err_rotation_deg": assess.err_rotation(measured),
        "err_translation_mm": assess.err_translation(measured),
    }
    if ground_truth:
        gt = load_poses(ground_truth)
        if len(gt) == 1:
            gt = gt * len(measured)
        if len(gt) != len(measured):
            raise ValueError(f"{len(measured)} measured poses but {len(gt)} ground-truth poses")
        gaps = np.array([assess.compare_to_ground_truth(m, g) for m, g in zip(measured, gt)])
        out["gt_angle_deg"] = gaps[:, 0].tolist()
        out["gt_dist_mm"] = gaps[:, 1].tolist()
        out["gt_angle_deg_max"] = float(gaps[:, 0].max())
        out["gt_dist_mm_max"] = float(gaps[:, 1].max())
    return out


# ---------------------------------------------------------------- entry point


def _parser():
    p = argparse.ArgumentParser(prog="reghec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="BO-IA + AA-ICPv on clouds and robot poses")
    c.add_argument("--config", required=True)
    c.add_argument("--mode", choices=["eye-in-hand", "eye-to-hand", "eye_in_hand", "eye_to_hand"])
    c.add_argument("--out")
    c.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", help="write a synthetic calibration data set")
    s.add_argument("--scene", choices=KINDS, default="sphere")
    s.add_argument("--views", type=int, default=9)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=["eye-in-hand", "eye-to-hand", "eye_in_hand", "eye_to_hand"],
                   default="eye-in-hand")
    s.add_argument("--independent", action="store_true",
                   help="resample the surface for every view instead of cutting views from one sample")
    s.add_argument("--out", required=True)

    b = sub.add_parser("benchmark-aa", help="plain vs Anderson-accelerated ICP from perturbed starts")
    b.add_argument("--config", required=True)
    b.add_argument("--runs", type=int)
    b.add_argument("--out")

    a = sub.add_parser("assess", help="Err_R / Err_t of repeated pose measurements")
    g = a.add_mutually_exclusive_group(required=True)
    g.add_argument("--poses")
    g.add_argument("--reports", nargs="+")
    a.add_argument("--ground-truth")
    return p


def _load_cfg(args):
    cfg = RunConfig.load(args.config)
    if getattr(args, "mode", None):
        cfg.mode = Mode.parse(args.mode).value
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "runs", None) is not None:
        cfg.runs = args.runs
    if getattr(args, "out", None):
        cfg.output = args.out
    cfg.validate()
    return cfg


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "calibrate":
            cfg = _load_cfg(args)
            report = cmd_calibrate(cfg)
            out = Path(args.out) if args.out else cfg.resolve(cfg.output)
            out.write_text(report.to_json())
            x = report.x
            print(f"converged={report.converged} g_calls={report.g_calls} report={out}")
            print(format_pose(x))
            return EXIT_OK if report.converged else EXIT_NOT_CONVERGED
        if args.command == "simulate":
            cmd_simulate(args.scene, args.views, args.noise, args.seed, args.out, args.mode,
                         shared_points=not args.independent)
            print(f"wrote {args.views} views to {args.out}")
            return EXIT_OK
        if args.command == "benchmark-aa":
            cfg = _load_cfg(args)
            summary = cmd_benchmark(cfg)
            text = json.dumps(summary, indent=2) + "\n"
            if args.out:
                Path(args.out).write_text(text)
            print(
                f"runs={summary['runs']} convergent={summary['convergent_runs']} "
                f"accelerated_fraction={summary['accelerated_fraction']:.3f} "
                f"median_speedup={summary['median_speedup_percent']:.1f}%"
            )
            return EXIT_OK
        if args.command == "assess":
            metrics = cmd_assess(args.poses, args.reports or (), args.ground_truth)
            print(json.dumps(metrics, indent=2))
            return EXIT_OK
    except (ParseError, ValueError, DegenerateGeometryError, EmptyViewError, NumericError, OSError) as exc:
        print(f"reghec: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
