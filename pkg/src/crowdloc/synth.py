"""Synthetic crowd scenes with exact ground truth, a simulated keypoint
detector and an oracle upright-space body regressor.

Randomness comes from numpy's Philox counter-based bit generator keyed by a
64-bit seed; per-crop detection streams are keyed by ``(seed, crop index)`` so
results do not depend on evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .errors import PlacementInfeasible, ValidationError
from .geometry import (
    CameraIntrinsics,
    GroundPlane,
    normal_from_angles,
    project,
    rotation_about,
)
from .skeleton import JOINT_INDEX, JOINT_NAMES, NUM_JOINTS, TORSO, Skeleton2D, apply_homography
from .upright import OrthoCam

# stature fractions
SHANK = 0.246
THIGH = 0.245
TRUNK = 0.30
UPPER_ARM = 0.17
LOWER_ARM = 0.16
HEAD = 0.13
HIP_HALF = 0.05
SHOULDER_HALF = 0.115
HIP_HEIGHT = SHANK + THIGH
SHOULDER_HEIGHT = HIP_HEIGHT + TRUNK
NOSE_HEIGHT = SHOULDER_HEIGHT + HEAD
TORSO_HEIGHT = 0.5 * (HIP_HEIGHT + SHOULDER_HEIGHT)

SCHEMA_VERSION = 1


def rng(seed, *stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass
class SkeletonModel:
    """Fixed-proportion body: model frame has y up, z facing forward, ankles at y = 0.

    Pose perturbation is a handful of joint angles in degrees; zero angles
    give a straight standing A-pose.
    """

    stature: float = 1.7
    yaw: float = 0.0
    arm_abduction: float = 8.0
    arm_swing: tuple = (0.0, 0.0)  # shoulder flexion (left, right)
    elbow_bend: tuple = (0.0, 0.0)
    leg_swing: tuple = (0.0, 0.0)  # hip flexion (left, right)
    knee_bend: tuple = (0.0, 0.0)

    def joints(self):
        """(17, 3) joint positions in metres, lowest ankle at height 0."""
        s = self.stature
        J = np.zeros((NUM_JOINTS, 3))

        def put(name, xyz):
            J[JOINT_INDEX[name]] = xyz

        put("nose", (0.0, NOSE_HEIGHT * s, 0.05 * s))
        put("left_eye", (0.03 * s, (NOSE_HEIGHT + 0.02) * s, 0.04 * s))
        put("right_eye", (-0.03 * s, (NOSE_HEIGHT + 0.02) * s, 0.04 * s))
        put("left_ear", (0.07 * s, (NOSE_HEIGHT + 0.01) * s, -0.01 * s))
        put("right_ear", (-0.07 * s, (NOSE_HEIGHT + 0.01) * s, -0.01 * s))

        for side, sx, k in (("left", 1.0, 0), ("right", -1.0, 1)):
            shoulder = np.array([sx * SHOULDER_HALF * s, SHOULDER_HEIGHT * s, 0.0])
            hip = np.array([sx * HIP_HALF * s, HIP_HEIGHT * s, 0.0])
            # arm hangs down, abducted outwards, swung forward
            down = np.array([0.0, -1.0, 0.0])
            abd = math.radians(self.arm_abduction)
            upper = rotation_about((0, 0, 1), sx * abd) @ down
            upper = rotation_about((1, 0, 0), -math.radians(self.arm_swing[k])) @ upper
            lower = rotation_about((1, 0, 0), -math.radians(self.elbow_bend[k])) @ upper
            elbow = shoulder + UPPER_ARM * s * upper
            wrist = elbow + LOWER_ARM * s * lower
            thigh = rotation_about((1, 0, 0), -math.radians(self.leg_swing[k])) @ down
            shank = rotation_about((1, 0, 0), math.radians(self.knee_bend[k])) @ thigh
            knee = hip + THIGH * s * thigh
            ankle = knee + SHANK * s * shank
            put(f"{side}_shoulder", shoulder)
            put(f"{side}_hip", hip)
            put(f"{side}_elbow", elbow)
            put(f"{side}_wrist", wrist)
            put(f"{side}_knee", knee)
            put(f"{side}_ankle", ankle)

        low = min(J[JOINT_INDEX["left_ankle"], 1], J[JOINT_INDEX["right_ankle"], 1])
        J[:, 1] -= low
        return J


def body_frame(normal, yaw):
    """Rotation taking model axes (x left, y up, z forward) to camera space.

    Up maps to the ground normal; yaw 0 faces the camera.
    """
    up = np.asarray(normal, dtype=float)
    toward_cam = np.array([0.0, 0.0, -1.0])
    fwd = toward_cam - up * (toward_cam @ up)
    fwd /= np.linalg.norm(fwd)
    fwd = rotation_about(up, yaw) @ fwd
    left = np.cross(up, fwd)
    return np.column_stack([left, up, fwd])


@dataclass
class SceneSpec:
    fov_deg: float = 90.0
    image_w: int = 9600
    image_h: int = 5400
    n_people: int = 100
    pitch_deg: tuple = (0.0, 15.0)
    roll_deg: tuple = (-3.0, 3.0)
    camera_height: tuple = (6.0, 12.0)
    stature_range: tuple = (1.6, 1.8)
    depth_range: tuple = (8.0, 120.0)
    min_separation: float = 1.0
    pose_jitter_deg: float = 0.0
    placement: str = "image"
    seed: int = 0
    max_attempts_per_person: int = 500

    def __post_init__(self):
        if not 20.0 <= self.fov_deg <= 150.0:
            raise ValidationError("fov must lie in [20, 150] degrees")
        if self.n_people < 1:
            raise ValidationError("n_people must be >= 1")
        if self.placement not in ("depth", "image"):
            raise ValidationError("placement must be 'depth' or 'image'")


@dataclass
class PersonTruth:
    id: str
    model: SkeletonModel
    root: np.ndarray
    joints_cam: np.ndarray
    joints_2d: np.ndarray
    P_t: np.ndarray
    P_v: np.ndarray
    p_t: np.ndarray
    p_v: np.ndarray
    d: float
    pixel_height: float
    occluded: bool = False
    truncated: bool = False

    def skeleton2d(self, conf=1.0):
        return Skeleton2D(self.joints_2d.copy(), np.full(NUM_JOINTS, conf), id=self.id)

    def eligible(self, min_pixel_height):
        return (not self.occluded) and (not self.truncated) and self.pixel_height >= min_pixel_height


@dataclass
class SceneTruth:
    K: CameraIntrinsics
    G: GroundPlane
    persons: list
    seed: int
    spec: SceneSpec = field(default_factory=SceneSpec)

    def person(self, pid):
        for p in self.persons:
            if p.id == pid:
                return p
        raise KeyError(pid)


def sample_pose(r, jitter):
    if jitter <= 0:
        return {}
    u = lambda: tuple(float(x) for x in r.uniform(-jitter, jitter, 2))
    return {
        "arm_swing": u(),
        "elbow_bend": tuple(abs(x) for x in u()),
        "leg_swing": u(),
        "knee_bend": tuple(abs(x) for x in u()),
    }


def place_person(K, G, pid, model, root):
    R = body_frame(G.N, model.yaw)
    J = root + model.joints() @ R.T
    P_t = J[list(TORSO)].mean(axis=0)
    d = float(G.signed_height(P_t))
    P_v = P_t - d * G.N
    j2 = project(K, J)
    u0, v0 = j2.min(axis=0)
    u1, v1 = j2.max(axis=0)
    truncated = bool(u0 < 0 or v0 < 0 or u1 > K.image_w or v1 > K.image_h)
    return PersonTruth(pid, model, np.asarray(root, float), J, j2, P_t, P_v,
                       project(K, P_t), project(K, P_v), d, float(v1 - v0), truncated=truncated)


def _torso_box(p):
    t = p.joints_2d[list(TORSO)]
    return (*t.min(axis=0), *t.max(axis=0))


def flag_occlusions(persons):
    """A person is occluded when its torso box intersects the torso box of someone nearer."""
    order = sorted(range(len(persons)), key=lambda i: persons[i].P_t[2])
    boxes = [_torso_box(p) for p in persons]
    for a, i in enumerate(order):
        bi = boxes[i]
        persons[i].occluded = any(
            bi[0] < boxes[j][2] and boxes[j][0] < bi[2] and bi[1] < boxes[j][3] and boxes[j][1] < bi[3]
            for j in order[:a]
        )


def generate_scene(spec=SceneSpec()):
    """Random camera, tilted ground and a standing crowd on it."""
    r = rng(spec.seed)
    K = CameraIntrinsics.from_fov(spec.fov_deg, spec.image_w, spec.image_h)
    pitch = math.radians(r.uniform(*spec.pitch_deg))
    roll = math.radians(r.uniform(*spec.roll_deg))
    N = normal_from_angles(pitch, roll)
    G = GroundPlane.from_normal(N, r.uniform(*spec.camera_height))
    nx, ny, nz = G.normal

    persons = []
    roots = []
    attempts = 0
    limit = spec.max_attempts_per_person * spec.n_people
    while len(persons) < spec.n_people:
        attempts += 1
        if attempts > limit:
            raise PlacementInfeasible(
                f"placed {len(persons)} of {spec.n_people} people after {limit} attempts")
        if spec.placement == "depth":
            z = r.uniform(*spec.depth_range)
            u = r.uniform(0.0, K.image_w)
            # pixel row of the ground point at depth z in column u
            v = K.cy + K.f / ny * (-G.D / z - nz - nx * (u - K.cx) / K.f)
        else:
            u = r.uniform(0.0, K.image_w)
            v = r.uniform(0.0, K.image_h)
            denom = (nx * (u - K.cx) + ny * (v - K.cy)) / K.f + nz
            z = -G.D / denom if denom < 0 else math.inf
        stature = r.uniform(*spec.stature_range)
        yaw = r.uniform(-math.pi, math.pi)
        pose = sample_pose(r, spec.pose_jitter_deg)
        if not (0.0 <= v <= K.image_h and spec.depth_range[0] <= z <= spec.depth_range[1]):
            continue
        root = np.array([(u - K.cx) / K.f, (v - K.cy) / K.f, 1.0]) * z
        if roots and np.min(np.linalg.norm(np.asarray(roots) - root, axis=1)) < spec.min_separation:
            continue
        model = SkeletonModel(stature=stature, yaw=yaw, **pose)
        person = place_person(K, G, f"p{len(persons):04d}", model, root)
        roots.append(root)
        persons.append(person)
    flag_occlusions(persons)
    return SceneTruth(K, G, persons, spec.seed, spec)


def simulate_detection(scene, crops, cap, seed=0):
    """Per-crop crop-local detections from the capability model."""
    return [detect_in_crop(scene, crop, cap, seed, k) for k, crop in enumerate(crops)]


def detect_in_crop(scene, crop, cap, seed, crop_index, stream=None):
    """Crop-local detections; the RNG stream is ``crop_index`` unless ``stream`` is given."""
    r = rng(seed, *(stream if stream is not None else (crop_index,)))
    K = scene.K
    a0, b0, a1, b1 = crop.clipped(K.image_w, K.image_h)
    lo = max(cap.min_pixel_height, cap.min_height_fraction * crop.size)
    hi = cap.max_height_fraction * crop.size
    out = []
    for p in scene.persons:
        if p.occluded and not cap.emit_occluded:
            continue
        j = p.joints_2d
        if not (j[:, 0].min() >= a0 and j[:, 1].min() >= b0 and j[:, 0].max() <= a1 and j[:, 1].max() <= b1):
            continue
        if not lo <= p.pixel_height <= hi:
            continue
        if cap.miss_rate > 0 and r.random() < cap.miss_rate:
            continue
        out.append(_noisy(r, j, cap.keypoint_noise_sigma, crop, p.id, crop_index))
    if cap.false_positive_rate > 0 and r.random() < cap.false_positive_rate:
        out.append(_false_positive(r, crop, lo, hi, crop_index))
    return out


def _noisy(r, joints_2d, sigma, crop, pid, crop_index):
    if sigma > 0:
        noise = r.normal(0.0, sigma, joints_2d.shape)
        conf = np.clip(1.0 - np.linalg.norm(noise, axis=1) / (3.0 * sigma), 0.5, 1.0)
    else:
        noise = np.zeros_like(joints_2d)
        conf = np.ones(NUM_JOINTS)
    xy = joints_2d + noise - np.array([crop.u0, crop.v0])
    return Skeleton2D(xy, conf, id=pid, source_crop=crop_index)


def _false_positive(r, crop, lo, hi, crop_index):
    height = r.uniform(lo, max(lo, hi))
    J = SkeletonModel(stature=1.0).joints()
    xy = np.column_stack([J[:, 0], -J[:, 1]]) * (height / NOSE_HEIGHT)
    xy -= xy.min(axis=0)
    span = xy.max(axis=0)
    off = r.uniform(0.0, 1.0, 2) * np.maximum(crop.size - span, 0.0)
    fid = f"fp-{crop.u0:.0f}-{crop.v0:.0f}-{crop.size:.0f}"
    return Skeleton2D(xy + off, r.uniform(0.4, 0.9, NUM_JOINTS), id=fid, source_crop=crop_index)


def oracle_upright_regression(scene, person_id, frame):
    """Ground-truth body expressed in the frame's upright 3D space plus a fitted orthographic camera.

    Joints are centred on the torso and measured in units of the person's
    stature.  Returns ``(joints_u3, OrthoCam, max_residual_px)``.
    """
    p = scene.person(person_id)
    R = frame.basis
    X = (p.joints_cam - p.P_t) @ R / p.model.stature
    q = apply_homography(frame.H_upright, p.joints_2d)
    xm = X[:, :2].mean(axis=0)
    qm = q.mean(axis=0)
    xc = X[:, :2] - xm
    qc = q - qm
    s = float((xc * qc).sum() / (xc * xc).sum())
    t = qm - s * xm
    O = OrthoCam(s, s, float(t[0]), float(t[1]))
    resid = float(np.linalg.norm(O.project(X) - q, axis=1).max())
    return X, O, resid


def oracle_hvip(scene, person_id, frame):
    """Normalised vertical offset of the true HVIP below the frame's torso anchor."""
    p = scene.person(person_id)
    pv_up = apply_homography(frame.H_upright, p.p_v)
    return float((pv_up[1] - frame.anchor[1]) / frame.resolution)


# -- serialisation --------------------------------------------------------

def _person_to_dict(p):
    return {
        "id": p.id,
        "model": asdict(p.model),
        "root": p.root.tolist(),
        "joints_cam": {n: p.joints_cam[i].tolist() for i, n in enumerate(JOINT_NAMES)},
        "joints_2d": {n: p.joints_2d[i].tolist() for i, n in enumerate(JOINT_NAMES)},
        "P_t": p.P_t.tolist(), "P_v": p.P_v.tolist(),
        "p_t": p.p_t.tolist(), "p_v": p.p_v.tolist(),
        "d": p.d, "pixel_height": p.pixel_height,
        "occluded": p.occluded, "truncated": p.truncated,
    }


def scene_to_dict(scene):
    spec = asdict(scene.spec)
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": scene.seed,
        "spec": spec,
        "camera": scene.K.to_dict(),
        "ground": scene.G.to_dict(),
        "persons": [_person_to_dict(p) for p in scene.persons],
    }


def scene_from_dict(data):
    K = CameraIntrinsics(**data["camera"])
    G = GroundPlane(tuple(data["ground"]["normal"]), data["ground"]["offset"])
    spec_d = dict(data.get("spec", {}))
    for k, v in spec_d.items():
        if isinstance(v, list):
            spec_d[k] = tuple(v)
    spec = SceneSpec(**spec_d) if spec_d else SceneSpec()
    persons = []
    for d in data["persons"]:
        m = {k: tuple(v) if isinstance(v, list) else v for k, v in d["model"].items()}
        persons.append(PersonTruth(
            id=d["id"], model=SkeletonModel(**m), root=np.array(d["root"]),
            joints_cam=np.array([d["joints_cam"][n] for n in JOINT_NAMES]),
            joints_2d=np.array([d["joints_2d"][n] for n in JOINT_NAMES]),
            P_t=np.array(d["P_t"]), P_v=np.array(d["P_v"]),
            p_t=np.array(d["p_t"]), p_v=np.array(d["p_v"]),
            d=float(d["d"]), pixel_height=float(d["pixel_height"]),
            occluded=bool(d["occluded"]), truncated=bool(d["truncated"]),
        ))
    return SceneTruth(K, G, persons, int(data.get("seed", 0)), spec)


def ground_truth_dict(scene, min_pixel_height=60.0):
    """Ground truth in the shared persons schema consumed by the evaluator."""
    return {
        "schema_version": SCHEMA_VERSION,
        "camera": scene.K.to_dict(),
        "persons": [{
            "id": p.id,
            "joints_cam": {n: p.joints_cam[i].tolist() for i, n in enumerate(JOINT_NAMES)},
            "torso": p.P_t.tolist(),
            "excluded": not p.eligible(min_pixel_height),
        } for p in scene.persons],
    }
