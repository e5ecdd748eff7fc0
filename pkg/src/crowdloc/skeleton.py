"""COCO-17 keypoint layout and the 2D skeleton container."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MissingChain, ValidationError

JOINT_NAMES = (
    "nose",
    "left_eye", "right_eye",
    "left_ear", "right_ear",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}
NUM_JOINTS = len(JOINT_NAMES)

# COCO per-keypoint sigmas (cocoeval uses k = 2 * sigma)
COCO_SIGMAS = np.array([
    .26, .25, .25, .35, .35, .79, .79, .72, .72, .62, .62, 1.07, 1.07, .87, .87, .89, .89,
]) / 10.0

L_SHOULDER, R_SHOULDER = JOINT_INDEX["left_shoulder"], JOINT_INDEX["right_shoulder"]
L_HIP, R_HIP = JOINT_INDEX["left_hip"], JOINT_INDEX["right_hip"]
L_ANKLE, R_ANKLE = JOINT_INDEX["left_ankle"], JOINT_INDEX["right_ankle"]
TORSO = (L_SHOULDER, R_SHOULDER, L_HIP, R_HIP)

ARM_CHAINS = (
    ("left_shoulder", "left_elbow", "left_wrist"),
    ("right_shoulder", "right_elbow", "right_wrist"),
)
LEG_CHAINS = (
    ("left_hip", "left_knee", "left_ankle"),
    ("right_hip", "right_knee", "right_ankle"),
)


@dataclass
class Skeleton2D:
    """Named 2D keypoints with confidences.

    ``xy`` is ``(17, 2)`` in pixels, ``conf`` is ``(17,)``; a missing joint has
    confidence 0 and NaN coordinates.
    """

    xy: np.ndarray
    conf: np.ndarray
    id: str = ""
    source_crop: int = -1

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=float).reshape(NUM_JOINTS, 2)
        self.conf = np.asarray(self.conf, dtype=float).reshape(NUM_JOINTS)
        if np.any((self.conf < 0) | (self.conf > 1)) or np.any(np.isnan(self.conf)):
            raise ValidationError("keypoint confidences must lie in [0, 1]")
        missing = self.conf <= 0
        if np.any(missing):
            self.xy = self.xy.copy()
            self.xy[missing] = np.nan

    @classmethod
    def from_joints(cls, joints, id="", source_crop=-1):
        """From ``{name: (u, v, conf)}``; absent names are missing joints."""
        xy = np.full((NUM_JOINTS, 2), np.nan)
        conf = np.zeros(NUM_JOINTS)
        for name, val in joints.items():
            if name not in JOINT_INDEX:
                raise ValidationError(f"unknown joint {name!r}")
            i = JOINT_INDEX[name]
            xy[i] = val[0], val[1]
            conf[i] = val[2] if len(val) > 2 else 1.0
        return cls(xy, conf, id=id, source_crop=source_crop)

    @property
    def joints(self):
        return {name: (float(self.xy[i, 0]), float(self.xy[i, 1]), float(self.conf[i]))
                for i, name in enumerate(JOINT_NAMES) if self.conf[i] > 0}

    @property
    def present(self):
        return self.conf > 0

    def bbox(self):
        """Tight box ``(u0, v0, u1, v1)`` over present joints."""
        pts = self.xy[self.present]
        if len(pts) == 0:
            raise ValidationError("skeleton has no joints")
        return (*pts.min(axis=0), *pts.max(axis=0))

    @property
    def pixel_height(self):
        u0, v0, u1, v1 = self.bbox()
        return v1 - v0

    @property
    def mean_confidence(self):
        return float(self.conf.mean())

    def has_torso(self):
        return bool(np.all(self.present[list(TORSO)]))

    def torso_center(self):
        """Mean of the two shoulders and two hips."""
        if not self.has_torso():
            raise MissingChain("torso centre needs both shoulders and both hips")
        return self.xy[list(TORSO)].mean(axis=0)

    def midpoint(self, a, b):
        ia, ib = JOINT_INDEX[a], JOINT_INDEX[b]
        if not (self.present[ia] and self.present[ib]):
            raise MissingChain(f"need {a} and {b}")
        return 0.5 * (self.xy[ia] + self.xy[ib])

    def translated(self, du, dv, source_crop=None):
        return replace(self, xy=self.xy + np.array([du, dv]),
                       source_crop=self.source_crop if source_crop is None else source_crop)

    def transformed(self, H):
        """Apply a 3x3 homography to every joint."""
        return replace(self, xy=apply_homography(H, self.xy))


def apply_homography(H, pts):
    pts = np.asarray(pts, dtype=float)
    h = pts @ H[:, :2].T + H[:, 2]
    return h[..., :2] / h[..., 2:3]


def pose_free_pixel_height(skel):
    """Trunk length plus the longer arm chain plus the longer leg chain.

    Trunk is measured between the shoulder and hip midpoints; a side whose
    chain has a missing joint is skipped.
    """
    if not skel.has_torso():
        raise MissingChain("pose-free height needs both shoulders and both hips")
    xy = skel.xy
    trunk = np.linalg.norm(xy[[L_SHOULDER, R_SHOULDER]].mean(0) - xy[[L_HIP, R_HIP]].mean(0))

    def longest(chains):
        best = None
        for chain in chains:
            idx = [JOINT_INDEX[n] for n in chain]
            if not np.all(skel.present[idx]):
                continue
            length = np.linalg.norm(np.diff(xy[idx], axis=0), axis=1).sum()
            best = length if best is None else max(best, length)
        return best

    arm = longest(ARM_CHAINS)
    leg = longest(LEG_CHAINS)
    if arm is None or leg is None:
        raise MissingChain("need at least one complete arm and one complete leg")
    return float(trunk + arm + leg)
