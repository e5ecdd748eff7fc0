"""Command line entry point: ``crowdloc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numerical
failure.  Errors are written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
import json
import os
import sys
import time
from pathlib import Path

from . import config as config_mod
from .calib import axes_from_skeletons, estimate_camera_ground
from .detect import deduplicate, skeleton_from_dict, skeleton_to_dict
from .errors import CrowdLocError, NumericalError
from .geometry import CameraIntrinsics, GroundPlane
from .metrics import evaluate, reports_csv
from .pipeline import (
    SimulatedDetector,
    config_dict,
    heuristic_hvip_estimator,
    oracle_body_estimator,
    oracle_hvip_estimator,
    planar_body_estimator,
    predictions_dict,
    reconstruct_all,
    run,
)
from .synth import generate_scene, ground_truth_dict, scene_from_dict, scene_to_dict
from .tiling import plan_crops, plan_to_dict, uniform_crops

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _write(path, obj):
    text = dumps(obj)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _read(path):
    with open(path) as fh:
        return json.load(fh)


@contextmanager
def _executor(threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex
    else:
        yield None


def _config(args):
    file_data = _read(args.config) if args.config else None
    return config_mod.layered(file_data, os.environ, args.set)


def _calibration_from(data):
    K = CameraIntrinsics(**{k: data[k] for k in ("f", "cx", "cy", "image_w", "image_h")})
    G = GroundPlane(tuple(data["normal"]), float(data["offset"]))
    return K, G


def _detections_doc(dets, image_w, image_h):
    return {"schema_version": SCHEMA_VERSION, "image_w": image_w, "image_h": image_h,
            "persons": [skeleton_to_dict(d) for d in dets]}


def _parse_detector(spec):
    """``sim[:key=value,...]`` with keys sigma, miss, fp, seed."""
    kind, _, rest = spec.partition(":")
    if kind != "sim":
        raise UsageError(f"unknown detector {kind!r}; only 'sim' is available")
    names = {"sigma": "keypoint_noise_sigma", "miss": "miss_rate", "fp": "false_positive_rate"}
    cap, seed = {}, None
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        if key == "seed":
            seed = int(value)
        elif key in names:
            cap[names[key]] = float(value)
        else:
            raise UsageError(f"unknown detector option {key!r}")
    return cap, seed


def _estimators(args, scene):
    if args.hvip == "oracle" or args.body == "oracle":
        if scene is None:
            raise UsageError("oracle estimators need --scene")
    hv = oracle_hvip_estimator(scene) if args.hvip == "oracle" else heuristic_hvip_estimator
    body = oracle_body_estimator(scene) if args.body == "oracle" else planar_body_estimator
    return hv, body


# subcommands -------------------------------------------------------------

def cmd_synth(args, cfg):
    over = {}
    if args.fov is not None:
        over["fov_deg"] = args.fov
    if args.people is not None:
        over["n_people"] = args.people
    if args.width is not None:
        over["image_w"] = args.width
    if args.height is not None:
        over["image_h"] = args.height
    if args.seed is not None:
        over["seed"] = args.seed
    scene = generate_scene(config_mod.build(cfg, "scene", **over))
    _write(args.output, scene_to_dict(scene))
    if args.gt:
        _write(args.gt, ground_truth_dict(scene, cfg["capability"]["min_pixel_height"]))
    return EXIT_OK


def cmd_plan_crops(args, cfg):
    if args.uniform:
        if args.image_size is None:
            raise UsageError("--uniform needs --image-size W H")
        w, h = args.image_size
        boxes = [b for grid in uniform_crops(w, h) for b in grid]
    else:
        if args.calibration:
            K, G = _calibration_from(_read(args.calibration))
        elif args.scene:
            s = scene_from_dict(_read(args.scene))
            K, G = s.K, s.G
        else:
            raise UsageError("plan-crops needs --calibration, --scene or --uniform")
        boxes = plan_crops(K, G, config_mod.build(cfg, "tiling"))
        w, h = K.image_w, K.image_h
    _write(args.output, {"schema_version": SCHEMA_VERSION, **plan_to_dict(boxes, w, h)})
    return EXIT_OK


def cmd_estimate_ground(args, cfg):
    doc = _read(args.detections)
    dets = [skeleton_from_dict(p) for p in doc["persons"]]
    w, h = (args.image_size or (doc.get("image_w"), doc.get("image_h")))
    extra = {}
    if args.focal is not None:
        extra["fixed_K"] = CameraIntrinsics.centered(args.focal, w, h)
    res = estimate_camera_ground(axes_from_skeletons(dets), config_mod.build(cfg, "calib", **extra), w, h)
    _write(args.output, {"schema_version": SCHEMA_VERSION, **res.to_dict()})
    return EXIT_OK


def cmd_dedup(args, cfg):
    doc = _read(args.detections)
    dets = [skeleton_from_dict(p) for p in doc["persons"]]
    tau = args.tau if args.tau is not None else cfg["pipeline"]["tau_dup"]
    kept = deduplicate(dets, tau)
    _write(args.output, _detections_doc(kept, doc.get("image_w"), doc.get("image_h")))
    return EXIT_OK


def cmd_localize(args, cfg):
    doc = _read(args.detections)
    dets = [skeleton_from_dict(p) for p in doc["persons"]]
    K, G = _calibration_from(_read(args.calibration))
    scene = scene_from_dict(_read(args.scene)) if args.scene else None
    hv, body = _estimators(args, scene)
    with _executor(args.threads) as ex:
        placements, skipped = reconstruct_all(dets, K, G, hv, body,
                                              config_mod.build(cfg, "pipeline"), ex)
    _write(args.output, predictions_dict(K, G, placements, skipped))
    return EXIT_OK


def cmd_evaluate(args, cfg):
    m = cfg["metrics"]
    rep = evaluate(_read(args.pred), _read(args.gt), m["gate_fraction"], m["eps_tie"])
    _write(args.output, rep.to_dict())
    if args.csv:
        Path(args.csv).write_text(reports_csv([rep], [Path(args.pred).stem]))
    return EXIT_OK


def cmd_pipeline(args, cfg):
    scene = scene_from_dict(_read(args.scene))
    cap_over, det_seed = _parse_detector(args.detector)
    seed = args.seed if args.seed is not None else (det_seed if det_seed is not None else scene.seed)
    cap = config_mod.build(cfg, "capability", **cap_over)
    extra = {"fixed_K": scene.K} if args.known_intrinsics else {}
    tiling = config_mod.build(cfg, "tiling")
    calib = config_mod.build(cfg, "calib", **extra)
    pcfg = config_mod.build(cfg, "pipeline")
    hv, body = _estimators(args, scene)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with _executor(args.threads) as ex:
        pred, state, placements, skipped, timings = run(
            scene.K.image_w, scene.K.image_h, SimulatedDetector(scene, cap, seed), hv, body,
            tiling, calib, pcfg, ex)
    timings["total_s"] = time.perf_counter() - t0
    w, h = scene.K.image_w, scene.K.image_h
    _write(out / "predictions.json", pred)
    _write(out / "detections.json", _detections_doc(state.detections, w, h))
    _write(out / "calibration.json", {"schema_version": SCHEMA_VERSION, **state.K.to_dict(),
                                      **state.G.to_dict(), "residual": state.residual,
                                      "num_axes": len(axes_from_skeletons(state.detections))})
    _write(out / "crops.json", {"schema_version": SCHEMA_VERSION, **plan_to_dict(state.crops, w, h)})
    effective = {k: dict(v) for k, v in cfg.items()}
    effective["capability"].update(cap_over)
    _write(out / "manifest.json", {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "detector": args.detector,
        "hvip": args.hvip,
        "body": args.body,
        "known_intrinsics": bool(args.known_intrinsics),
        "config": effective,
        "iterations": state.iteration,
        "converged": state.converged,
        "history": state.history,
        "num_detections": len(state.detections),
        "num_persons": len(placements),
        "skipped": len(skipped),
        "threads": args.threads,
        "timings": timings,
    })
    return EXIT_OK


def cmd_selftest(args, cfg):
    from .selftest import run_all
    results = run_all(seed=args.seed if args.seed is not None else 0, quick=args.quick)
    failed = [r for r in results if not r["ok"]]
    _write(args.output, {"schema_version": SCHEMA_VERSION, "passed": len(results) - len(failed),
                         "failed": len(failed), "checks": results})
    if failed:
        raise SelftestFailed(f"{len(failed)} invariant check(s) failed: "
                             + ", ".join(r["name"] for r in failed))
    return EXIT_OK


class SelftestFailed(NumericalError):
    pass


# parser -----------------------------------------------------------------

def _common(p, seed=True):
    p.add_argument("--config", help="JSON config file (lowest-precedence override layer)")
    p.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                   help="config override; repeatable; beats file and environment")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (default: available CPUs); results do not depend on it")
    if seed:
        p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--output", default="-", help="output path ('-' for stdout)")


def build_parser():
    parser = _Parser(prog="crowdloc", description="Crowd localisation from a single wide image.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    _common(p)
    p.add_argument("--fov", type=float)
    p.add_argument("--people", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--gt", help="also write evaluator ground truth here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plan-crops", help="ground-aware (or uniform) crop plan")
    _common(p, seed=False)
    p.add_argument("--calibration")
    p.add_argument("--scene")
    p.add_argument("--uniform", action="store_true")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))
    p.set_defaults(func=cmd_plan_crops)

    p = sub.add_parser("estimate-ground", help="calibrate focal length and ground from detections")
    _common(p, seed=False)
    p.add_argument("--detections", required=True)
    p.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--focal", type=float, help="known focal length in pixels")
    p.set_defaults(func=cmd_estimate_ground)

    p = sub.add_parser("dedup", help="remove duplicate detections")
    _common(p, seed=False)
    p.add_argument("--detections", required=True)
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_dedup)

    for name, fn, helptext in (("localize", cmd_localize, "reconstruct people in camera space"),
                               ("pipeline", cmd_pipeline, "run the whole pipeline on a synthetic scene")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--scene", required=name == "pipeline")
        p.add_argument("--hvip", choices=("oracle", "heuristic"), default="heuristic")
        p.add_argument("--body", choices=("oracle", "planar"), default="planar")
        if name == "localize":
            p.add_argument("--detections", required=True)
            p.add_argument("--calibration", required=True)
        else:
            p.add_argument("--detector", default="sim:sigma=0")
            p.add_argument("--known-intrinsics", action="store_true",
                           help="use the scene's camera intrinsics instead of estimating f")
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    _common(p, seed=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", help="also write a one-row CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("selftest", help="run the invariant checks")
    _common(p)
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_selftest)
    return parser


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        cfg = _config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (CrowdLocError, ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
