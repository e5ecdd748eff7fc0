"""End-to-end orchestration.

Uniform-crop bootstrap, then calibrate / plan ground-aware crops / detect /
de-duplicate until the camera and ground settle, then reconstruct every
detected person in camera space.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math
import time

import numpy as np

from .calib import CalibConfig, axes_from_skeletons, estimate_camera_ground
from .detect import DEFAULT_TAU_DUP, DetectorCapability, collect, deduplicate
from .errors import CalibrationFailed, CrowdLocError, InsufficientAxes, NoDetections, OptimizerDiverged, ValidationError
from .geometry import angle_between
from .synth import detect_in_crop, oracle_hvip, oracle_upright_regression
from .tiling import TilingConfig, plan_crops, uniform_crops
from .upright import build_upright_frame, compose_hvip, heuristic_hvip, planar_lift, upright_to_camera

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    max_iterations: int = 3
    angle_tol_deg: float = 1.0
    offset_tol: float = 0.01
    focal_tol: float = 0.01
    tau_dup: float = DEFAULT_TAU_DUP
    stature_min: float = 1.2
    stature_max: float = 2.3
    canonical_stature: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not 0 < self.stature_min < self.stature_max:
            raise ValidationError("need 0 < stature_min < stature_max")


@dataclass
class PipelineState:
    iteration: int = 0
    K: object = None
    G: object = None
    crops: list = field(default_factory=list)
    detections: list = field(default_factory=list)
    history: list = field(default_factory=list)
    converged: bool = False
    residual: float = float("nan")


def _calibrate(dets, calib_cfg, image_w, image_h):
    axes = axes_from_skeletons(dets)
    try:
        return estimate_camera_ground(axes, calib_cfg, image_w, image_h)
    except (InsufficientAxes, OptimizerDiverged) as exc:
        raise CalibrationFailed(str(exc)) from exc


def _change(prev, cur):
    return {
        "angle_deg": math.degrees(angle_between(prev.G.N, cur.G.N)),
        "offset_rel": abs(cur.G.D - prev.G.D) / prev.G.D,
        "focal_rel": abs(cur.K.f - prev.K.f) / prev.K.f,
    }


def run_iterative_cropping(image_w, image_h, detector, tiling_cfg=TilingConfig(),
                           calib_cfg=CalibConfig(), cfg=PipelineConfig(), executor=None):
    """Bootstrap on uniform crops, then alternate calibration and ground-aware cropping."""
    state = PipelineState()
    boot = [c for grid in uniform_crops(image_w, image_h) for c in grid]
    dets = deduplicate(collect(detector, boot, image_w, image_h, 0, executor), cfg.tau_dup)
    if not dets:
        raise NoDetections("bootstrap crops produced no detections")
    offset = len(boot)
    prev = _calibrate(dets, calib_cfg, image_w, image_h)
    state.K, state.G, state.residual = prev.K, prev.G, prev.residual
    state.crops, state.detections = boot, dets

    for k in range(1, cfg.max_iterations + 1):
        crops = plan_crops(prev.K, prev.G, tiling_cfg)
        dets = deduplicate(collect(detector, crops, image_w, image_h, offset, executor), cfg.tau_dup)
        offset += len(crops)
        if not dets:
            raise NoDetections(f"ground-aware crops of iteration {k} produced no detections")
        cur = _calibrate(dets, calib_cfg, image_w, image_h)
        delta = _change(prev, cur)
        state.iteration = k
        state.history.append({"iteration": k, **delta, "num_crops": len(crops),
                              "num_detections": len(dets), "residual": cur.residual})
        state.K, state.G, state.residual = cur.K, cur.G, cur.residual
        state.crops, state.detections = crops, dets
        prev = cur
        if (delta["angle_deg"] < cfg.angle_tol_deg and delta["offset_rel"] < cfg.offset_tol
                and delta["focal_rel"] < cfg.focal_tol):
            state.converged = True
            break
    return state.K, state.G, state.detections, state


def reconstruct_one(det, K, G, hvip_estimator, body_estimator, cfg=PipelineConfig()):
    frame = build_upright_frame(K, G, det)
    skel_up = det.transformed(frame.H_upright)
    d = hvip_estimator(skel_up, frame, det)
    p_t = det.torso_center()
    p_v = compose_hvip(frame.anchor, d, frame)
    out = body_estimator(skel_up, frame, det)
    X, O = out[0], out[1]
    shape = out[2] if len(out) > 2 else None
    place = upright_to_camera(X, O, frame, p_t, p_v, K, G, shape, det.id)
    canonical = float(shape[0]) if shape is not None and len(shape) else cfg.canonical_stature
    stature = place.S_toCam * canonical
    if not cfg.stature_min <= stature <= cfg.stature_max:
        place.flags.append(f"implied_stature={stature:.3f}")
    return place


def reconstruct_all(detections, K, G, hvip_estimator, body_estimator, cfg=PipelineConfig(),
                    executor=None):
    """Per-person reconstruction; failures go to the skip list, order follows the input."""
    def work(det):
        try:
            return reconstruct_one(det, K, G, hvip_estimator, body_estimator, cfg), None
        except (CrowdLocError, KeyError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    mapper = executor.map if executor is not None else map
    placements, skipped = [], []
    for i, (det, (place, reason)) in enumerate(zip(detections, mapper(work, detections))):
        if place is None:
            skipped.append({"index": i, "id": det.id, "reason": reason})
        else:
            placements.append(place)
    return placements, skipped


class SimulatedDetector:
    """Capability-model detector over a synthetic scene.

    The noise stream of a crop is keyed on its geometry, so results do not
    depend on the order in which crops are processed.
    """

    def __init__(self, scene, cap=DetectorCapability(), seed=0):
        self.scene, self.cap, self.seed = scene, cap, seed

    def __call__(self, crop):
        key = tuple(int(round(x * 16)) + (1 << 40) for x in (crop.u0, crop.v0, crop.size))
        return detect_in_crop(self.scene, crop, self.cap, self.seed, -1, stream=key)


def oracle_hvip_estimator(scene):
    return lambda skel_up, frame, det: oracle_hvip(scene, det.id, frame)


def heuristic_hvip_estimator(skel_up, frame, det):
    return heuristic_hvip(skel_up, frame.resolution)


def oracle_body_estimator(scene):
    def estimate(skel_up, frame, det):
        X, O, _ = oracle_upright_regression(scene, det.id, frame)
        return X, O, np.array([1.0])
    return estimate


def planar_body_estimator(skel_up, frame, det):
    return planar_lift(skel_up, frame)


def predictions_dict(K, G, placements, skipped):
    return {
        "schema_version": SCHEMA_VERSION,
        "camera": K.to_dict(),
        "ground": G.to_dict(),
        "persons": [p.to_dict() for p in placements],
        "skipped": skipped,
    }


def run(image_w, image_h, detector, hvip_estimator, body_estimator, tiling_cfg=TilingConfig(),
        calib_cfg=CalibConfig(), cfg=PipelineConfig(), executor=None):
    """Full pipeline; returns ``(predictions dict, state, placements, skipped, timings)``."""
    timings = {}
    t0 = time.perf_counter()
    K, G, dets, state = run_iterative_cropping(image_w, image_h, detector, tiling_cfg, calib_cfg,
                                               cfg, executor)
    t1 = time.perf_counter()
    placements, skipped = reconstruct_all(dets, K, G, hvip_estimator, body_estimator, cfg, executor)
    t2 = time.perf_counter()
    timings["cropping_s"] = t1 - t0
    timings["reconstruction_s"] = t2 - t1
    return predictions_dict(K, G, placements, skipped), state, placements, skipped, timings


def config_dict(**cfgs):
    out = {}
    for name, c in cfgs.items():
        d = asdict(c)
        d.pop("fixed_K", None)
        out[name] = d
    return out
