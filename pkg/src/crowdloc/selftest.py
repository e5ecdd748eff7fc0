"""Randomised invariant checks runnable from the installed package (``crowdloc selftest``)."""
from __future__ import annotations

from itertools import combinations
import math

import numpy as np

from .calib import CalibConfig, axis_losses
from .detect import deduplicate, group_detections
from .geometry import (
    CameraIntrinsics,
    GroundPlane,
    normal_from_angles,
    progressive_position_transform,
    project,
    reverse_project_to_ground,
)
from .metrics import (
    assignment_cost,
    exhaustive_assignment,
    oks,
    optimal_assignment,
    pcod,
    ppds,
    punish,
)
from .skeleton import COCO_SIGMAS, NUM_JOINTS, Skeleton2D, pose_free_pixel_height
from .synth import SceneSpec, generate_scene, rng
from .tiling import plan_crops
from .upright import build_upright_frame


def random_camera_ground(r, n):
    """``n`` random (K, G) pairs with the ground visible at the image bottom."""
    out = []
    while len(out) < n:
        fov = r.uniform(20.0, 150.0)
        w = int(r.integers(640, 12000))
        h = int(r.integers(480, 8000))
        K = CameraIntrinsics.from_fov(fov, w, h)
        G = GroundPlane.from_normal(normal_from_angles(r.uniform(-0.3, 1.2), r.uniform(-0.3, 0.3)),
                                    r.uniform(1.0, 30.0))
        if G.visible_in(K):
            out.append((K, G))
    return out


def ground_point(r, K, G, tries=200):
    """A random ground point seen by ``K`` (or None)."""
    for _ in range(tries):
        p = np.array([r.uniform(0, K.image_w), r.uniform(0, K.image_h)])
        try:
            P = reverse_project_to_ground(K, G, p)
        except ArithmeticError:
            continue
        if np.linalg.norm(P) < 1e4:
            return P
    return None


def check_round_trip(r, n):
    worst = 0.0
    for K, G in random_camera_ground(r, n):
        P = ground_point(r, K, G)
        if P is None:
            continue
        back = reverse_project_to_ground(K, G, project(K, P))
        worst = max(worst, float(np.linalg.norm(back - P)))
    return worst < 1e-6, f"max round-trip error {worst:.3e} m"


def check_hvip_height(r, n):
    worst = 0.0
    for K, G in random_camera_ground(r, n):
        P_v = ground_point(r, K, G)
        if P_v is None:
            continue
        d = r.uniform(0.5, 1.5)
        P_t = P_v + d * G.N
        if P_t[2] <= 0.1:
            continue
        _, d_hat = progressive_position_transform(K, G, project(K, P_t), project(K, P_v))
        worst = max(worst, abs(d_hat - d) / d)
    return worst < 1e-9, f"max relative height error {worst:.3e}"


def check_calib_zero(r):
    K = CameraIntrinsics.from_fov(70.0, 4000, 3000)
    G = GroundPlane.from_normal(normal_from_angles(0.2, 0.02), 8.0)
    cfg = CalibConfig()
    top, bot = [], []
    while len(bot) < 30:
        P = ground_point(r, K, G)
        if P is None:
            continue
        try:
            t = project(K, P + cfg.h * G.N)
        except ArithmeticError:
            continue
        bot.append(project(K, P))
        top.append(t)
    loss = axis_losses(K.f, K.cx, K.cy, G.N, G.D, np.array(top), np.array(bot), cfg.h)
    return float(loss.max()) < 1e-9, f"max loss at generating configuration {loss.max():.3e}"


def check_tiling(scene):
    crops = plan_crops(scene.K, scene.G)
    bad = 0
    for p in scene.persons:
        if not p.eligible(60):
            continue
        j = p.joints_2d
        ok = False
        for c in crops:
            a0, b0, a1, b1 = c.clipped(scene.K.image_w, scene.K.image_h)
            if j[:, 0].min() >= a0 and j[:, 1].min() >= b0 and j[:, 0].max() <= a1 and j[:, 1].max() <= b1:
                ok = ok or p.pixel_height / c.size <= 0.52
        bad += not ok
    return bad == 0, f"{bad} eligible people without a containing crop"


def random_detections(r, n):
    dets = []
    for i in range(n):
        base = r.uniform(0, 2000, 2)
        h = r.uniform(40, 200)
        xy = base + r.normal(0, 0.3, (NUM_JOINTS, 2)) * h
        conf = r.uniform(0.3, 1.0, NUM_JOINTS)
        dets.append(Skeleton2D(xy, conf, id=f"d{i}", source_crop=int(r.integers(0, 20))))
        if r.random() < 0.5:
            dup = dets[-1].translated(*r.normal(0, 2.0, 2), source_crop=int(r.integers(0, 20)))
            dets.append(dup)
    return dets


def check_dedup(r, trials):
    for _ in range(trials):
        dets = random_detections(r, int(r.integers(1, 60)))
        if group_detections(dets, method="kdtree") != group_detections(dets, method="brute"):
            return False, "spatial-index grouping differs from brute force"
        once = deduplicate(dets)
        if [d.id for d in deduplicate(once)] != [d.id for d in once]:
            return False, "deduplicate is not idempotent"
    return True, f"{trials} random instances"


def check_upright(scene):
    worst_h, worst_a = 0.0, 0.0
    for p in scene.persons:
        if p.truncated:
            continue
        try:
            frame = build_upright_frame(scene.K, scene.G, p.skeleton2d())
        except ArithmeticError:
            continue
        up = p.skeleton2d().transformed(frame.H_upright)
        worst_h = max(worst_h, abs(pose_free_pixel_height(up) - 384.0))
        worst_a = max(worst_a, float(np.abs(frame.anchor - [256.0, 192.0]).max()))
    return worst_h < 0.5 and worst_a < 0.5, f"height dev {worst_h:.2e} px, anchor dev {worst_a:.2e} px"


def brute_ppds(E, G):
    total, n = 0.0, 0
    for i, k in combinations(range(len(G)), 2):
        dg = np.linalg.norm(np.subtract(G[i], G[k]))
        de = np.linalg.norm(np.subtract(E[i], E[k]))
        total += 1.0 - min(abs(de - dg) / dg, 1.0)
        n += 1
    return 100.0 * total / n


def brute_oks(pred, gt, area):
    vals = []
    for i in range(len(gt)):
        k = 2.0 * COCO_SIGMAS[i]
        d2 = (pred[i][0] - gt[i][0]) ** 2 + (pred[i][1] - gt[i][1]) ** 2
        vals.append(math.exp(-d2 / (2.0 * area * k * k)))
    return sum(vals) / len(vals)


def check_metrics(r, trials):
    for _ in range(trials):
        n_p, n_g = int(r.integers(0, 7)), int(r.integers(0, 7))
        P = r.uniform(0, 100, (n_p, 2))
        Gx = r.uniform(0, 100, (n_g, 2))
        hts = r.uniform(20, 120, n_g)
        a = optimal_assignment(P, Gx, hts)
        b = exhaustive_assignment(P, Gx, hts)
        if len(a) != len(b) or abs(assignment_cost(a, P, Gx) - assignment_cost(b, P, Gx)) > 1e-9:
            return False, "assignment differs from exhaustive optimum"
        if n_g >= 2:
            E3, G3 = r.normal(0, 5, (n_g, 3)), r.normal(0, 5, (n_g, 3))
            if abs(ppds(E3, G3) - brute_ppds(E3, G3)) > 1e-9:
                return False, "ppds differs from pair enumeration"
            perm = r.permutation(n_g)
            if abs(pcod(E3[perm, 2], G3[perm, 2]) - pcod(E3[:, 2], G3[:, 2])) > 1e-9:
                return False, "pcod not permutation invariant"
        g = r.uniform(0, 300, (NUM_JOINTS, 2))
        q = g + r.normal(0, 5, g.shape)
        area = float(r.uniform(1e3, 1e5))
        if abs(oks(q, g, area) - brute_oks(q, g, area)) > 1e-12:
            return False, "oks differs from reference loop"
        f1 = float(r.uniform(0.01, 1.0))
        vals = {"oks": float(r.uniform()), "ppds": 50.0, "t_mpjpe": float(r.uniform(0, 1))}
        out = punish(vals, f1)
        if abs(out["oks"]["norm"] - vals["oks"] * f1) > 1e-12 or \
                abs(out["t_mpjpe"]["norm"] - vals["t_mpjpe"] / f1) > 1e-12:
            return False, "punishment identity broken"
    return True, f"{trials} random instances"


def check_scene(scene):
    worst = 0.0
    for p in scene.persons:
        worst = max(worst, abs(scene.G.signed_height(p.P_v)),
                    float(np.abs(project(scene.K, p.joints_cam) - p.joints_2d).max()),
                    float(np.abs(p.P_t - (p.P_v + p.d * scene.G.N)).max()))
    return worst < 1e-9, f"max self-consistency residual {worst:.2e}"


def run_all(seed=0, quick=False):
    r = rng(seed, 7)
    n = 200 if quick else 2000
    scene = generate_scene(SceneSpec(fov_deg=90.0, n_people=40 if quick else 100, seed=seed))
    checks = [
        ("geometry.round_trip", lambda: check_round_trip(r, n)),
        ("geometry.hvip_height", lambda: check_hvip_height(r, n)),
        ("calib.zero_loss_at_truth", lambda: check_calib_zero(r)),
        ("synth.self_consistency", lambda: check_scene(scene)),
        ("tiling.containment", lambda: check_tiling(scene)),
        ("detect.grouping_equivalence", lambda: check_dedup(r, 10 if quick else 50)),
        ("upright.normalisation", lambda: check_upright(scene)),
        ("metrics.oracles", lambda: check_metrics(r, 30 if quick else 200)),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"name": name, "ok": bool(ok), "detail": detail})
    return results

