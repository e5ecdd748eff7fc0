import json
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np
import pytest

from crowdloc.calib import CalibConfig
from crowdloc.detect import DetectorCapability
from crowdloc.errors import NoDetections, ValidationError
from crowdloc.geometry import angle_between
from crowdloc.metrics import evaluate
from crowdloc.pipeline import (
    PipelineConfig,
    SimulatedDetector,
    heuristic_hvip_estimator,
    oracle_body_estimator,
    oracle_hvip_estimator,
    planar_body_estimator,
    reconstruct_all,
    run,
    run_iterative_cropping,
)
from crowdloc.skeleton import L_ANKLE, Skeleton2D
from crowdloc.synth import SHOULDER_HEIGHT, ground_truth_dict

from helpers import scene

H17 = SHOULDER_HEIGHT * 1.7


@lru_cache(maxsize=None)
def _noiseless_run(fov):
    sc = scene(fov, 0, stature_range=(1.7, 1.7))
    out = run(sc.K.image_w, sc.K.image_h, SimulatedDetector(sc, seed=1), oracle_hvip_estimator(sc),
              oracle_body_estimator(sc), calib_cfg=CalibConfig(h=H17))
    return sc, out


def test_noiseless_converges_after_one_iteration():
    sc, (pred, state, placements, skipped, _) = _noiseless_run(60.0)
    assert state.converged and state.iteration == 1 and len(state.history) == 1
    assert skipped == []
    rep = evaluate(pred, ground_truth_dict(sc))
    assert rep.f1 == 1.0
    assert math.degrees(angle_between(state.G.N, sc.G.N)) < 0.5


def test_keypoint_noise_keeps_ground_within_tolerance():
    sc = scene(90.0, 0, stature_range=(1.7, 1.7))
    det = SimulatedDetector(sc, DetectorCapability(keypoint_noise_sigma=2.0), seed=1)
    K, G, dets, state = run_iterative_cropping(sc.K.image_w, sc.K.image_h, det, calib_cfg=CalibConfig(h=H17))
    assert 1 <= state.iteration <= 3
    assert math.degrees(angle_between(G.N, sc.G.N)) < 2.5


@pytest.mark.xfail(strict=True, reason="focal length is weakly determined under keypoint noise (see ledger)")
def test_keypoint_noise_converges_with_free_focal():
    sc = scene(90.0, 0, stature_range=(1.7, 1.7))
    det = SimulatedDetector(sc, DetectorCapability(keypoint_noise_sigma=2.0), seed=1)
    *_, state = run_iterative_cropping(sc.K.image_w, sc.K.image_h, det, calib_cfg=CalibConfig(h=H17))
    assert state.converged


@pytest.mark.parametrize("fov", [30.0, 120.0])
def test_keypoint_noise_converges_with_known_intrinsics(fov):
    sc = scene(fov, 0)
    det = SimulatedDetector(sc, DetectorCapability(keypoint_noise_sigma=2.0), seed=1)
    K, G, dets, state = run_iterative_cropping(sc.K.image_w, sc.K.image_h, det,
                                               calib_cfg=CalibConfig(fixed_K=sc.K))
    assert state.converged and state.iteration <= 3
    assert math.degrees(angle_between(G.N, sc.G.N)) < 2.5


def test_empty_detector_raises():
    with pytest.raises(NoDetections):
        run_iterative_cropping(2000, 1500, lambda crop: [])


def test_failures_are_skipped_not_dropped():
    sc, (pred, state, placements, _, _) = _noiseless_run(60.0)
    dets = list(state.detections[:12])
    broken = dets[3]
    conf = broken.conf.copy()
    conf[L_ANKLE] = 0.0
    dets[3] = Skeleton2D(broken.xy, conf, id=broken.id, source_crop=broken.source_crop)
    out, skipped = reconstruct_all(dets, state.K, state.G, heuristic_hvip_estimator, oracle_body_estimator(sc))
    assert [s["index"] for s in skipped] == [3] and skipped[0]["id"] == broken.id
    assert "MissingAnkles" in skipped[0]["reason"]
    assert [p.id for p in out] == [d.id for i, d in enumerate(dets) if i != 3]
    ref, _ = reconstruct_all(dets[:3] + dets[4:], state.K, state.G, heuristic_hvip_estimator,
                             oracle_body_estimator(sc))
    assert all(np.array_equal(a.joints_cam, b.joints_cam) for a, b in zip(out, ref))


def test_output_order_follows_input():
    sc, (_, state, _, _, _) = _noiseless_run(60.0)
    dets = list(state.detections)[::-1]
    out, skipped = reconstruct_all(dets, state.K, state.G, oracle_hvip_estimator(sc), oracle_body_estimator(sc))
    assert skipped == [] and [p.id for p in out] == [d.id for d in dets]


def test_threads_do_not_change_results():
    sc = scene(90.0, 1, 40)
    det = SimulatedDetector(sc, DetectorCapability(keypoint_noise_sigma=1.0, miss_rate=0.05,
                                                   false_positive_rate=0.2), seed=3)
    args = (sc.K.image_w, sc.K.image_h, det, heuristic_hvip_estimator, planar_body_estimator)
    a = json.dumps(run(*args)[0], sort_keys=True)
    with ThreadPoolExecutor(4) as ex:
        b = json.dumps(run(*args, executor=ex)[0], sort_keys=True)
    assert a == b


def test_implied_stature_flag():
    sc, (_, state, _, _, _) = _noiseless_run(60.0)
    dets = list(state.detections[:5])
    out, _ = reconstruct_all(dets, state.K, state.G, oracle_hvip_estimator(sc), oracle_body_estimator(sc))
    assert all(p.flags == [] for p in out)
    # the oracle reports a canonical stature of 1; an estimator claiming 2 implies ~3.4 m people
    body = oracle_body_estimator(sc)
    tall = lambda s, f, d: (*body(s, f, d)[:2], np.array([2.0]))
    out, _ = reconstruct_all(dets, state.K, state.G, oracle_hvip_estimator(sc), tall)
    assert all(p.flags and p.flags[0].startswith("implied_stature=") for p in out)


def test_predictions_schema():
    _, (pred, state, placements, skipped, timings) = _noiseless_run(60.0)
    assert set(pred) == {"schema_version", "camera", "ground", "persons", "skipped"}
    assert len(pred["persons"]) == len(placements)
    p = pred["persons"][0]
    assert {"id", "joints_cam", "torso", "hvip_2d", "hvip_3d", "s_tocam", "flags"} <= set(p)
    assert set(timings) == {"cropping_s", "reconstruction_s"}


def test_config_validation():
    for bad in ({"max_iterations": 0}, {"stature_min": 2.0, "stature_max": 1.0}):
        with pytest.raises(ValidationError):
            PipelineConfig(**bad)
