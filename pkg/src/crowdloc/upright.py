"""Per-person upright normalisation.

Image -> upright 2D space (U2) is a homography ``H_trans @ H_scale @ H_warp``
built from the camera, the ground and a rough 3D torso position.  In U2 the
ground normal is vertical with +v pointing towards the ground, the body has a
fixed pose-free height and the torso sits at a fixed anchor.  Bodies estimated
in the matching upright 3D space (U3) come back to camera space through a
rotation, a scale and a translation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateBasis,
    IntersectionBehindCamera,
    MissingAnkles,
    MissingChain,
    NumericalError,
    RayParallelToGround,
    TorsoRayMissesPlane,
    ValidationError,
)
from .geometry import progressive_position_transform, project, reverse_project_to_ground
from .skeleton import JOINT_NAMES, L_ANKLE, R_ANKLE, TORSO, apply_homography, pose_free_pixel_height

RESOLUTION = 512
TORSO_ELEVATION = 1.15  # metres, rough torso height used to place the local frame
HEIGHT_FRACTION = 0.75
ANCHOR_TOP = 0.375  # torso anchor row as a fraction of the resolution
CORNERS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


def homography_dlt(src, dst):
    """Normalised DLT; exact for four points in general position, least squares beyond."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.shape[0] < 4:
        raise ValidationError("need at least four point correspondences")

    def conditioner(p):
        m = p.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(p - m, axis=1)), 1e-300)
        return np.array([[scale, 0, -scale * m[0]], [0, scale, -scale * m[1]], [0, 0, 1]])

    C1, C2 = conditioner(src), conditioner(dst)
    s = apply_homography(C1, src)
    d = apply_homography(C2, dst)
    rows = []
    for (x, y), (u, v) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    H = vt[-1].reshape(3, 3)
    H = np.linalg.inv(C2) @ H @ C1
    return H / H[2, 2]


@dataclass(frozen=True)
class OrthoCam:
    """Orthographic camera ``u = s_x X + t_x``, ``v = s_y Y + t_y``."""

    sx: float
    sy: float
    tx: float
    ty: float

    def project(self, X):
        X = np.asarray(X, dtype=float)
        return np.column_stack([X[:, 0] * self.sx + self.tx, X[:, 1] * self.sy + self.ty])


def _translation(du, dv):
    return np.array([[1.0, 0, du], [0, 1.0, dv], [0, 0, 1.0]])


@dataclass
class UprightFrame:
    H_warp: np.ndarray
    H_scale: np.ndarray
    H_trans: np.ndarray
    basis: np.ndarray  # columns V_cam_x, V_cam_y, V_cam_z
    P_t_rough: np.ndarray
    p_t: np.ndarray
    resolution: int = RESOLUTION
    H_upright: np.ndarray = field(init=False)

    def __post_init__(self):
        H = self.H_trans @ self.H_scale @ self.H_warp
        self.H_upright = H / H[2, 2]
        if abs(np.linalg.det(self.H_upright)) <= 1e-12:
            raise DegenerateBasis("upright homography is singular")

    @property
    def anchor(self):
        """Torso centre in U2."""
        return apply_homography(self.H_upright, self.p_t)

    def to_upright(self, pts):
        return apply_homography(self.H_upright, pts)

    def to_image(self, pts):
        return apply_homography(np.linalg.inv(self.H_upright), pts)


def upright_basis(G, P):
    """``(V_x, V_y, V_z)`` with ``V_z`` along the viewing ray and ``V_y`` towards the ground.

    ``V_x = normalize(P x N)``; with the upward normal this equals
    ``normalize(-N x P)``, i.e. the cross product taken with the groundward
    normal, which keeps U2 unmirrored with +v groundward.
    """
    cx = np.cross(P, G.N)
    norm = np.linalg.norm(cx)
    if norm <= 1e-9 * max(np.linalg.norm(P), 1.0):
        raise DegenerateBasis("torso lies on the vertical through the camera")
    Vx = cx / norm
    Vz = P / np.linalg.norm(P)
    Vy = np.cross(Vz, Vx)
    return np.column_stack([Vx, Vy, Vz])


def build_upright_frame(K, G, skel, resolution=RESOLUTION, torso_elevation=TORSO_ELEVATION,
                        height_fraction=HEIGHT_FRACTION, anchor_top=ANCHOR_TOP):
    """Image -> U2 homography chain for one detected person."""
    p_t = skel.torso_center()
    try:
        P = reverse_project_to_ground(K, G.translate(torso_elevation), p_t)
    except (RayParallelToGround, IntersectionBehindCamera) as exc:
        raise TorsoRayMissesPlane(str(exc)) from exc
    B = upright_basis(G, P)
    corners3d = P + CORNERS @ B[:, :2].T
    try:
        src = project(K, corners3d)
    except NumericalError as exc:
        raise TorsoRayMissesPlane("local frame crosses the camera plane") from exc
    H_warp = homography_dlt(src, CORNERS)
    warped = skel.transformed(H_warp)
    h = pose_free_pixel_height(warped)
    if h <= 0:
        raise MissingChain("zero pose-free height")
    s = height_fraction * resolution / h
    H_scale = np.diag([s, s, 1.0])
    c = apply_homography(H_scale @ H_warp, p_t)
    H_trans = _translation(resolution / 2.0 - c[0], anchor_top * resolution - c[1])
    return UprightFrame(H_warp, H_scale, H_trans, B, P, np.asarray(p_t, float), resolution)


def compose_hvip(p_t_up, d_hvip, frame):
    """Image-space HVIP from the U2 torso centre and a normalised vertical offset."""
    p_v_up = np.asarray(p_t_up, dtype=float) + frame.resolution * np.array([0.0, d_hvip])
    return frame.to_image(p_v_up)


def heuristic_hvip(skel_up, resolution=RESOLUTION):
    """Ankle midpoint row below the torso centre, as a fraction of the U2 resolution."""
    if not (skel_up.present[L_ANKLE] and skel_up.present[R_ANKLE]):
        raise MissingAnkles("heuristic HVIP needs both ankles")
    ankle = 0.5 * (skel_up.xy[L_ANKLE] + skel_up.xy[R_ANKLE])
    return float((ankle[1] - skel_up.torso_center()[1]) / resolution)


def torso_center_3d(joints):
    return np.asarray(joints, dtype=float)[list(TORSO)].mean(axis=0)


@dataclass
class Placement3D:
    joints_cam: np.ndarray
    P_t: np.ndarray
    P_v: np.ndarray
    p_v: np.ndarray
    p_t: np.ndarray
    d: float
    S_toCam: float
    R_toCam: np.ndarray
    T_toCam: np.ndarray
    shape_params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    id: str = ""
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {
            "id": self.id,
            "joints_cam": {n: self.joints_cam[i].tolist() for i, n in enumerate(JOINT_NAMES)},
            "torso": self.P_t.tolist(),
            "hvip_2d": self.p_v.tolist(),
            "hvip_3d": self.P_v.tolist(),
            "s_tocam": self.S_toCam,
            "r_tocam": self.R_toCam.ravel().tolist(),
            "t_tocam": self.T_toCam.tolist(),
            "flags": list(self.flags),
        }


def pixels_per_metre(K, G, frame, P_t, axis="upright"):
    """U2 length of a one-metre segment centred on ``P_t``.

    ``axis="upright"`` measures along ``V_cam_y``, the direction U3's vertical
    axis maps to, so the result matches the orthographic scale of a U3 body
    at any viewing angle.  ``axis="normal"`` measures along the ground normal;
    that reading is foreshortened by the cosine of the angle between the
    normal and the image-parallel plane at the person.
    """
    if axis == "upright":
        direction = frame.basis[:, 1]
    elif axis == "normal":
        direction = G.N
    else:
        raise ValidationError(f"unknown scale axis {axis!r}")
    ends = project(K, np.stack([P_t + 0.5 * direction, P_t - 0.5 * direction]))
    up = frame.to_upright(ends)
    return float(np.linalg.norm(up[0] - up[1]))


def upright_to_camera(joints_u3, O, frame, p_t, p_v, K, G, shape_params=None, id="",
                      scale_axis="upright"):
    """Place a U3 body in camera space from its torso pixel and HVIP pixel."""
    P_t, d = progressive_position_transform(K, G, p_t, p_v)
    P_v = P_t - d * G.N
    R = frame.basis
    rho = pixels_per_metre(K, G, frame, P_t, scale_axis)
    S = O.sy / rho
    X = np.asarray(joints_u3, dtype=float)
    T = P_t - S * (R @ torso_center_3d(X))
    J = S * X @ R.T + T
    return Placement3D(J, P_t, P_v, np.asarray(p_v, float), np.asarray(p_t, float), float(d),
                       float(S), R, T,
                       np.zeros(1) if shape_params is None else np.asarray(shape_params, float), id)


def planar_lift(skel_up, frame):
    """Stand-in body regressor: U2 keypoints lifted onto the zero-depth plane of U3.

    U3 is U2 shifted to the torso anchor and divided by the normalised body
    height, with an orthographic camera that undoes exactly that.
    """
    if not np.all(skel_up.present):
        raise MissingChain("planar lift needs every joint")
    s = HEIGHT_FRACTION * frame.resolution
    a = frame.anchor
    X = np.zeros((len(JOINT_NAMES), 3))
    X[:, :2] = (skel_up.xy - a) / s
    return X, OrthoCam(s, s, float(a[0]), float(a[1]))
