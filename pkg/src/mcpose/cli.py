"""Command-line surface: generate scenes, estimate poses, evaluate, bench.

Subcommands:

* ``generate``: render a scene description to a depth image with its
  sidecar, ground-truth copy, and detection file.
* ``estimate``: run inference for every detection in series and write a
  deterministic estimate JSON (plus wall-clock metadata and an optional
  per-iteration trace).
* ``eval``: compare estimates against a scene's ground truth and write
  the per-run CSV, a JSON summary, and a figure.
* ``bench``: time one detection's inference per iteration and write a
  CSV and figure of runtime and memory-traffic counters.

Exit codes: 0 on success, 1 on runtime failure, 2 on invalid input or
configuration. All randomness flows from the single ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .engine import EngineConfig, run_inference
from .geometry import MeshParseError
from .memmodel import AccessLedger
from .metrics import EvalRecord, EvalReport, add_metric, adds_metric
from .scene import (
    DepthLoadError,
    Scene,
    load_depth,
    load_detections,
    load_scene,
    render_scene,
    resolve_meshes,
    save_depth,
    save_detections,
    save_scene,
    stub_detect,
)
from .scoring import MODE_DEPTH_1D, MODE_EUCLIDEAN_3D, InlierParams, WeightCoeffs

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_MODE_NAMES = {"depth1d": MODE_DEPTH_1D, "euclid3d": MODE_EUCLIDEAN_3D}


class InputError(ValueError):
    """Invalid file, path, or configuration named by the user."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one estimation run needs: engine knobs plus file paths."""

    engine: EngineConfig
    scene_path: Path
    depth_path: Path
    detections_path: Path
    out_dir: Path
    trace: bool = False

    def __post_init__(self):
        for p in (self.scene_path, self.depth_path, self.detections_path):
            if not Path(p).exists():
                raise InputError(f"input file does not exist: {p}")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_scene(path: Path) -> Scene:
    try:
        return load_scene(path)
    except FileNotFoundError:
        raise InputError(f"scene file does not exist: {path}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InputError(f"invalid scene file {path}: {e}")


def _resolve_meshes(scene: Scene, scene_path: Path):
    try:
        return resolve_meshes(scene, base_dir=scene_path.parent)
    except (FileNotFoundError, MeshParseError, KeyError) as e:
        raise InputError(f"cannot load scene mesh: {e}")


def _engine_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("engine")
    g.add_argument("--config", type=Path, default=None,
                   help="JSON file of engine settings; flags override it")
    g.add_argument("--samples", type=int, default=None, help="population size")
    g.add_argument("--workers", type=int, default=None, help="scoring threads")
    g.add_argument("--epsilon", type=float, default=None,
                   help="inlier threshold in meters")
    g.add_argument("--tau", type=float, default=None,
                   help="mean-weight convergence threshold")
    g.add_argument("--seed", type=int, default=None, help="master RNG seed")
    g.add_argument("--max-iterations", type=int, default=None)
    g.add_argument("--sigma-t", type=float, default=None,
                   help="translation diffusion spread (m)")
    g.add_argument("--sigma-r", type=float, default=None,
                   help="rotation diffusion spread (rad)")
    g.add_argument("--top-percent", type=float, default=None,
                   help="resample from the heaviest slice only")
    g.add_argument("--bins", type=int, default=None,
                   help="coarse bins of the two-level CDF search")
    g.add_argument("--anneal", type=float, default=None,
                   help="per-iteration diffusion decay factor")
    g.add_argument("--quantize", action="store_true", default=None,
                   help="score against 16-bit millimeter depth")
    g.add_argument("--inlier-mode", choices=sorted(_MODE_NAMES),
                   default=None, help="depth-only or full euclidean inlier")
    g.add_argument("--culling", choices=("on", "off"), default=None,
                   help="skip camera-facing-away triangles")


def _build_engine_config(args) -> EngineConfig:
    settings: dict = {}
    if args.config is not None:
        try:
            settings = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise InputError(f"config file does not exist: {args.config}")
        except json.JSONDecodeError as e:
            raise InputError(f"invalid config JSON {args.config}: {e}")
        if not isinstance(settings, dict):
            raise InputError(f"config {args.config} must hold a JSON object")

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return settings.get(key, default)

    mode_flag = None
    if args.inlier_mode is not None:
        mode_flag = _MODE_NAMES[args.inlier_mode]
    culling_flag = None
    if args.culling is not None:
        culling_flag = args.culling == "on"

    try:
        inlier = InlierParams(
            epsilon=float(pick(args.epsilon, "epsilon", 0.01)),
            mode=pick(mode_flag, "inlier_mode", MODE_DEPTH_1D),
            quantize=bool(pick(args.quantize, "quantize", False)))
        coeffs = WeightCoeffs(
            alpha=float(settings.get("alpha", 0.4)),
            beta=float(settings.get("beta", 0.4)),
            gamma=float(settings.get("gamma", 0.2)))
        return EngineConfig(
            n_samples=int(pick(args.samples, "n_samples", 620)),
            n_workers=int(pick(args.workers, "n_workers", 20)),
            sigma_t=float(pick(args.sigma_t, "sigma_t", 0.02)),
            sigma_r=float(pick(args.sigma_r, "sigma_r", 0.05)),
            convergence_tau=float(pick(args.tau, "convergence_tau", 0.65)),
            max_iterations=int(pick(args.max_iterations, "max_iterations", 50)),
            top_percent=float(pick(args.top_percent, "top_percent", 80.0)),
            n_bins=int(pick(args.bins, "n_bins", 64)),
            coeffs=coeffs,
            inlier=inlier,
            culling=bool(pick(culling_flag, "culling", True)),
            anneal=float(pick(args.anneal, "anneal", 1.0)),
            seed=int(pick(args.seed, "seed", 0)))
    except ValueError as e:
        raise InputError(f"invalid engine configuration: {e}")


def _object_index(label: str, scene: Scene) -> int:
    if not label.startswith("obj"):
        raise InputError(f"detection label {label!r} is not obj<i>")
    try:
        i = int(label[3:])
    except ValueError:
        raise InputError(f"detection label {label!r} is not obj<i>")
    if not 0 <= i < len(scene.objects):
        raise InputError(
            f"label {label!r} exceeds the scene's {len(scene.objects)} objects")
    return i


def cmd_generate(args) -> int:
    scene = _load_scene(args.scene)
    meshes = _resolve_meshes(scene, args.scene)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    img = render_scene(scene, meshes)
    dets = stub_detect(scene, meshes, jitter=args.jitter)
    save_depth(img, out / "depth.pgm")
    save_detections(dets, out / "detections.json")
    save_scene(scene, out / "ground_truth.json")
    print(f"wrote depth.pgm, depth.json, detections.json, ground_truth.json "
          f"to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _build_engine_config(args)
    run = RunConfig(engine=cfg, scene_path=args.scene, depth_path=args.depth,
                    detections_path=args.detections, out_dir=args.out,
                    trace=args.trace)
    scene = _load_scene(run.scene_path)
    meshes = _resolve_meshes(scene, run.scene_path)
    try:
        obs = load_depth(run.depth_path)
    except (DepthLoadError, FileNotFoundError) as e:
        raise InputError(f"cannot load depth image: {e}")
    dets = load_detections(run.detections_path)
    if not dets:
        raise InputError(f"no detections in {run.detections_path}")

    run.out_dir.mkdir(parents=True, exist_ok=True)
    trace_fh = None
    if run.trace:
        trace_fh = open(run.out_dir / "trace.jsonl", "w")
    objects = []
    meta = []
    try:
        # each detection runs to completion before the next starts
        for det in dets:
            idx = _object_index(det.label, scene)
            mesh = meshes[scene.objects[idx].mesh]

            def trace_cb(stat, label=det.label):
                if trace_fh is not None:
                    line = {"label": label, **stat.to_json_dict()}
                    trace_fh.write(json.dumps(line, sort_keys=True) + "\n")

            t0 = time.perf_counter()
            res = run_inference(det, mesh, scene.camera, obs, cfg,
                                trace_cb=trace_cb)
            wall = time.perf_counter() - t0
            objects.append({"label": det.label, **res.to_json_dict()})
            meta.append({"label": det.label, "wall_time_s": wall})
    finally:
        if trace_fh is not None:
            trace_fh.close()

    _write_json(run.out_dir / "estimate.json",
                {"scene": str(run.scene_path), "seed": cfg.seed,
                 "objects": objects})
    _write_json(run.out_dir / "meta.json", {"objects": meta})
    print(f"estimated {len(objects)} object(s) into {run.out_dir}")
    return EXIT_OK


def _wall_times_for(est_path: Path) -> dict[str, float]:
    meta_path = est_path.parent / "meta.json"
    if not meta_path.exists():
        return {}
    try:
        meta = json.loads(meta_path.read_text())
        return {o["label"]: float(o["wall_time_s"]) for o in meta["objects"]}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return {}


def cmd_eval(args) -> int:
    scene = _load_scene(args.scene)
    meshes = _resolve_meshes(scene, args.scene)
    records = []
    for est_path in args.estimates:
        try:
            est = json.loads(Path(est_path).read_text())
        except FileNotFoundError:
            raise InputError(f"estimate file does not exist: {est_path}")
        except json.JSONDecodeError as e:
            raise InputError(f"invalid estimate JSON {est_path}: {e}")
        if not est.get("objects"):
            raise InputError(f"estimate {est_path} contains no objects")
        walls = _wall_times_for(Path(est_path))
        for obj in est["objects"]:
            label = obj["label"]
            idx = _object_index(label, scene)
            so = scene.objects[idx]
            mesh = meshes[so.mesh]
            est_pose = _pose_from_list(obj["pose"])
            records.append(EvalRecord(
                label=label,
                mesh=so.mesh.removeprefix("builtin:"),
                scene=scene.seed,
                seed=int(est.get("seed", 0)),
                add_m=add_metric(mesh, est_pose, so.pose),
                adds_m=adds_metric(mesh, est_pose, so.pose),
                symmetric=so.is_symmetric(),
                iterations=int(obj["iterations"]),
                converged=bool(obj["converged"]),
                wall_time_s=walls.get(label, 0.0)))
    report = EvalReport(records=tuple(records), threshold_m=args.threshold)

    from .figures import save_eval_figure

    args.out.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out / "eval.csv")
    report.write_summary(args.out / "eval_summary.json")
    save_eval_figure(report, args.out / "eval.png")
    print(f"success rate {report.success_rate:.1%} over {len(records)} runs; "
          f"wrote eval.csv, eval_summary.json, eval.png to {args.out}")
    return EXIT_OK


def _pose_from_list(values):
    from .geometry import Pose6DoF

    if len(values) != 6:
        raise InputError(f"pose must have 6 entries, got {len(values)}")
    return Pose6DoF(*(float(v) for v in values))


def cmd_bench(args) -> int:
    cfg = _build_engine_config(args)
    run = RunConfig(engine=cfg, scene_path=args.scene, depth_path=args.depth,
                    detections_path=args.detections, out_dir=args.out)
    scene = _load_scene(run.scene_path)
    meshes = _resolve_meshes(scene, run.scene_path)
    try:
        obs = load_depth(run.depth_path)
    except (DepthLoadError, FileNotFoundError) as e:
        raise InputError(f"cannot load depth image: {e}")
    dets = load_detections(run.detections_path)
    if not dets:
        raise InputError(f"no detections in {run.detections_path}")
    det = dets[0]
    idx = _object_index(det.label, scene)
    mesh = meshes[scene.objects[idx].mesh]
    if args.reps < 1:
        raise InputError("--reps must be at least 1")

    # same seed every repetition: the counters are identical, only the
    # wall clock varies, so rows aggregate to mean time per iteration
    per_rep: list[list] = []
    for _ in range(args.reps):
        stats: list = []
        run_inference(det, mesh, scene.camera, obs, cfg,
                      ledger=AccessLedger(), trace_cb=stats.append)
        per_rep.append(stats)

    n_iter = min(len(s) for s in per_rep)
    rows = []
    for i in range(n_iter):
        base = per_rep[0][i]
        r = base.reads
        rows.append({
            "iteration": i,
            "wall_time_s": sum(rep[i].wall_time_s
                               for rep in per_rep) / args.reps,
            "mean_weight": base.mean_weight,
            "max_weight": base.max_weight,
            "inliers": base.n_inliers,
            "depth_reads_naive": r.naive_depth_reads,
            "depth_reads_shared": r.shared_depth_reads,
            "depth_ratio": r.depth_ratio,
            "cdf_reads_coarse": r.cdf_coarse_reads,
            "cdf_reads_fine": r.cdf_fine_reads,
            "cdf_reads_naive": r.cdf_naive_reads,
        })

    from .figures import save_bench_figure

    run.out_dir.mkdir(parents=True, exist_ok=True)
    import csv as _csv

    with open(run.out_dir / "bench.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    save_bench_figure(rows, run.out_dir / "bench.png")
    print(f"benchmarked {n_iter} iterations x {args.reps} rep(s); "
          f"wrote bench.csv, bench.png to {run.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcpose",
        description="Monte-Carlo 6DoF pose estimation from depth images")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="render a scene to files")
    p_gen.add_argument("--scene", type=Path, required=True,
                       help="scene description JSON")
    p_gen.add_argument("--out", type=Path, required=True,
                       help="output directory")
    p_gen.add_argument("--jitter", type=int, default=2,
                       help="detection box edge jitter in pixels")
    p_gen.set_defaults(func=cmd_generate)

    p_est = sub.add_parser("estimate", help="run inference on a depth image")
    p_est.add_argument("--scene", type=Path, required=True,
                       help="scene JSON (camera and mesh identities)")
    p_est.add_argument("--depth", type=Path, required=True,
                       help="observed depth PGM")
    p_est.add_argument("--detections", type=Path, required=True)
    p_est.add_argument("--out", type=Path, required=True)
    p_est.add_argument("--trace", action="store_true",
                       help="write per-iteration trace.jsonl")
    _engine_flags(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_eval = sub.add_parser("eval", help="score estimates against truth")
    p_eval.add_argument("--scene", type=Path, required=True)
    p_eval.add_argument("--estimates", type=Path, nargs="+", required=True)
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument("--threshold", type=float, default=0.04,
                        help="success threshold in meters")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="per-iteration cost measurement")
    p_bench.add_argument("--scene", type=Path, required=True)
    p_bench.add_argument("--depth", type=Path, required=True)
    p_bench.add_argument("--detections", type=Path, required=True)
    p_bench.add_argument("--out", type=Path, required=True)
    p_bench.add_argument("--reps", type=int, default=1,
                         help="repetitions averaged into the timing")
    _engine_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001  the CLI boundary reports, not raises
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
