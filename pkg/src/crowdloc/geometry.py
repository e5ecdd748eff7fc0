"""Pinhole camera, ground plane and the torso/HVIP position transform.

Camera frame is right-handed with x right, y down and z forward, so a ground
plane seen below the camera has a normal with a negative y component
(the normal points from the ground towards the camera side).  Signed heights
above the ground are ``N.P + D``.

All functions accept single points or stacks of points (leading axes are
broadcast) and work in float64.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import (
    DegenerateDenominator,
    HVIPAboveVanishingLine,
    IntersectionBehindCamera,
    NonPositiveDepth,
    RayParallelToGround,
    ValidationError,
)

#: absolute guard used for every denominator / depth test
EPS = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Square-pixel pinhole camera (``f = f_x = f_y``)."""

    f: float
    cx: float
    cy: float
    image_w: float
    image_h: float

    def __post_init__(self):
        if not (np.isfinite(self.f) and self.f > 0):
            raise ValidationError(f"focal length must be positive, got {self.f}")
        if not (0 <= self.cx <= self.image_w and 0 <= self.cy <= self.image_h):
            raise ValidationError("principal point must lie inside the image")

    @classmethod
    def centered(cls, f, image_w, image_h):
        return cls(float(f), image_w / 2.0, image_h / 2.0, float(image_w), float(image_h))

    @classmethod
    def from_fov(cls, fov_deg, image_w, image_h):
        """Horizontal field of view -> focal length, principal point at the centre."""
        f = (image_w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls.centered(f, image_w, image_h)

    @property
    def matrix(self):
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    @property
    def fov_deg(self):
        return math.degrees(2.0 * math.atan(self.image_w / 2.0 / self.f))

    def scaled(self, s):
        return CameraIntrinsics(self.f * s, self.cx * s, self.cy * s, self.image_w * s, self.image_h * s)

    def to_dict(self):
        return {"f": self.f, "cx": self.cx, "cy": self.cy,
                "image_w": self.image_w, "image_h": self.image_h}


@dataclass(frozen=True)
class GroundPlane:
    """Plane ``{P : N.P + D = 0}`` with unit normal ``N``."""

    normal: tuple
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,) or not np.all(np.isfinite(n)):
            raise ValidationError("ground normal must be a finite 3-vector")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValidationError(f"ground normal must be unit length, |N| = {np.linalg.norm(n)}")
        object.__setattr__(self, "normal", tuple(float(x) for x in n))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_normal(cls, normal, offset):
        """Build from a not-necessarily-normalised normal."""
        n = np.asarray(normal, dtype=float)
        return cls(tuple(n / np.linalg.norm(n)), offset)

    @property
    def N(self):
        return np.array(self.normal)

    @property
    def D(self):
        return self.offset

    def signed_height(self, P):
        """``N.P + D`` for a point or a stack of points."""
        return np.asarray(P, dtype=float) @ self.N + self.D

    def translate(self, h):
        """Parallel plane shifted by ``h`` metres along the normal."""
        return GroundPlane(self.normal, self.offset - h)

    def visible_in(self, K):
        """True if some pixel of the image sees the plane at positive depth."""
        us = np.linspace(0.0, K.image_w, 9)
        vs = np.linspace(0.0, K.image_h, 9)
        uu, vv = np.meshgrid(us, vs)
        rays = pixel_rays(K, np.stack([uu.ravel(), vv.ravel()], axis=-1))
        denom = rays @ self.N
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -self.offset / denom
        return bool(np.any((np.abs(denom) > EPS) & (t > 0)))

    def to_dict(self):
        return {"normal": list(self.normal), "offset": self.offset}


def translate_ground(G, h):
    """Plane containing ``P + h N`` for every ``P`` on ``G``."""
    return G.translate(h)


def pixel_rays(K, p):
    """Unnormalised viewing rays ``((u - cx)/f, (v - cy)/f, 1)``."""
    p = np.asarray(p, dtype=float)
    rays = np.empty(p.shape[:-1] + (3,))
    rays[..., 0] = (p[..., 0] - K.cx) / K.f
    rays[..., 1] = (p[..., 1] - K.cy) / K.f
    rays[..., 2] = 1.0
    return rays


def project(K, P):
    """Perspective projection ``u = f x/z + cx``, ``v = f y/z + cy``.

    Raises NonPositiveDepth if any point has ``z <= 1e-9``.
    """
    P = np.asarray(P, dtype=float)
    z = P[..., 2]
    if np.any(z <= EPS):
        raise NonPositiveDepth("point at or behind the camera plane")
    out = np.empty(P.shape[:-1] + (2,))
    out[..., 0] = K.f * P[..., 0] / z + K.cx
    out[..., 1] = K.f * P[..., 1] / z + K.cy
    return out


def _ray_ground_params(K, normal, offset, p):
    """Ray parameters ``t`` (P = t * ray) and the ray-normal dot products."""
    rays = pixel_rays(K, p)
    denom = rays @ np.asarray(normal, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -offset / denom
    return rays, denom, t


def reverse_project_to_ground(K, G, p):
    """Intersect the viewing ray of pixel ``p`` with the ground plane."""
    rays, denom, t = _ray_ground_params(K, G.N, G.D, p)
    if np.any(np.abs(denom) <= EPS):
        raise RayParallelToGround("viewing ray is parallel to the ground")
    if np.any(t <= EPS):
        raise IntersectionBehindCamera("pixel is above the vanishing line of the ground")
    return rays * t[..., None]


def hvip_height(K, G, p_t, P_v):
    """Signed distance ``d`` from the torso centre to the ground.

    Closed form using only the row of the torso pixel and the 3D HVIP::

        d = (f y_v - (v_t - cy) z_v) / ((v_t - cy) z_n - f y_n)
    """
    p_t = np.asarray(p_t, dtype=float)
    P_v = np.asarray(P_v, dtype=float)
    _, yn, zn = G.normal
    dv = p_t[..., 1] - K.cy
    denom = dv * zn - K.f * yn
    if np.any(np.abs(denom) <= EPS):
        raise DegenerateDenominator("torso row is singular for the height equation")
    return (K.f * P_v[..., 1] - dv * P_v[..., 2]) / denom


def progressive_position_transform(K, G, p_t, p_v):
    """Recover the 3D torso centre from its pixel and the pixel of its HVIP.

    Returns ``(P_t, d)`` where ``P_t = P_v + d N`` and ``P_v`` is the ground
    point under the torso.
    """
    try:
        P_v = reverse_project_to_ground(K, G, p_v)
    except IntersectionBehindCamera as exc:
        raise HVIPAboveVanishingLine(str(exc)) from exc
    d = hvip_height(K, G, p_t, P_v)
    P_t = P_v + np.asarray(d)[..., None] * G.N
    return P_t, d


def rotation_about(axis, angle):
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def angle_between(a, b):
    """Angle in radians between two vectors (robust near 0 and pi)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b))))


def normal_from_angles(pitch, roll):
    """Upward ground normal for a camera pitched down by ``pitch`` and rolled by ``roll`` (radians).

    ``N = (cos(pitch) sin(roll), -cos(pitch) cos(roll), -sin(pitch))``; any
    ``|pitch|, |roll| < pi/2`` gives ``y_n < 0``.
    """
    cp = math.cos(pitch)
    return np.array([cp * math.sin(roll), -cp * math.cos(roll), -math.sin(pitch)])


def angles_from_normal(normal):
    """Inverse of :func:`normal_from_angles`."""
    x, y, z = normal
    pitch = math.asin(max(-1.0, min(1.0, -z)))
    roll = math.atan2(x, -y)
    return pitch, roll
