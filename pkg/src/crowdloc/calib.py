"""Camera focal length and ground plane from the keypoints of a crowd.

Each person contributes a vertical axis from the ankle midpoint (assumed on
the ground) to the shoulder midpoint.  A trial ``(f, N, D)`` predicts where
the shoulders of a person of height ``h`` standing on that ankle pixel should
appear; the per-person loss combines the cosine distance between predicted
and observed axes with their relative length difference.  The mean loss is
minimised with a multi-start bounded Nelder-Mead over
``(pitch, roll, log D, log f)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.optimize import least_squares, minimize, minimize_scalar

from .errors import InsufficientAxes, OptimizerDiverged, ValidationError
from .geometry import EPS, CameraIntrinsics, GroundPlane, angles_from_normal, normal_from_angles

#: loss assigned to a person whose ankle pixel misses the trial ground
INFEASIBLE_PENALTY = 10.0
MAX_TILT = math.radians(89.0)


@dataclass(frozen=True)
class PersonAxis:
    p_top: tuple
    p_bot: tuple
    weight: float = 1.0


@dataclass(frozen=True)
class CalibConfig:
    """Loss weights, priors and optimiser controls.

    ``h`` is the ankle-to-shoulder height prior in metres (1.35 m is the
    shoulder height of a 1.7 m adult with standard proportions).  ``f_bounds``
    defaults to ``[0.2, 5] * image_w``.
    """

    h: float = 1.35
    lambda_angle: float = 1.0
    lambda_mod: float = 1.0
    f_bounds: tuple | None = None
    fixed_K: CameraIntrinsics | None = None
    multistart_count: int = 8
    max_iterations: int = 4000
    convergence_tol: float = 1e-12
    trim_quantile: float = 0.9
    trim_weight: float = 0.1
    trim_min_axes: int = 10

    def __post_init__(self):
        if self.h <= 0:
            raise ValidationError("height prior must be positive")
        if self.lambda_angle < 0 or self.lambda_mod < 0 or self.lambda_angle + self.lambda_mod == 0:
            raise ValidationError("loss weights must be >= 0 and not both zero")
        if self.f_bounds is not None and not (0 < self.f_bounds[0] < self.f_bounds[1]):
            raise ValidationError("f_bounds must satisfy 0 < min < max")
        if self.multistart_count < 1:
            raise ValidationError("multistart_count must be positive")


@dataclass
class CalibResult:
    K: CameraIntrinsics
    G: GroundPlane
    residual: float
    num_axes: int
    per_person: np.ndarray = field(repr=False, default=None)

    def __iter__(self):
        return iter((self.K, self.G, self.residual))

    def to_dict(self):
        return {**self.K.to_dict(), **self.G.to_dict(),
                "residual": self.residual, "num_axes": self.num_axes}


def axes_from_skeletons(skeletons, min_length=1.0):
    """Shoulder-midpoint over ankle-midpoint axes; incomplete or degenerate people are skipped."""
    from .skeleton import JOINT_INDEX
    idx = [JOINT_INDEX[n] for n in ("left_shoulder", "right_shoulder", "left_ankle", "right_ankle")]
    axes = []
    for s in skeletons:
        if not np.all(s.present[idx]):
            continue
        top = s.xy[idx[:2]].mean(axis=0)
        bot = s.xy[idx[2:]].mean(axis=0)
        if np.linalg.norm(top - bot) <= min_length:
            continue
        axes.append(PersonAxis(tuple(top), tuple(bot), float(s.conf[idx].mean())))
    return axes


def _stack(axes):
    top = np.array([a.p_top for a in axes], dtype=float)
    bot = np.array([a.p_bot for a in axes], dtype=float)
    w = np.array([a.weight for a in axes], dtype=float)
    return top, bot, w


def axis_losses(f, cx, cy, N, D, top, bot, h, lambda_angle=1.0, lambda_mod=1.0):
    """Vectorised per-person loss; infeasible people get ``INFEASIBLE_PENALTY``."""
    N = np.asarray(N, dtype=float)
    rx = (bot[:, 0] - cx) / f
    ry = (bot[:, 1] - cy) / f
    denom = rx * N[0] + ry * N[1] + N[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -D / denom
        ok = (np.abs(denom) > EPS) & (t > EPS)
        qx = t * rx + h * N[0]
        qy = t * ry + h * N[1]
        qz = t + h * N[2]
        ok &= qz > EPS
        pu = f * qx / qz + cx
        pv = f * qy / qz + cy
    a = np.stack([pu - bot[:, 0], pv - bot[:, 1]], axis=1)
    b = top - bot
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.einsum("ij,ij->i", a, b) / (na * nb)
    cos = np.where(na > 0, cos, 0.0)
    loss = lambda_angle * (1.0 - cos) + lambda_mod * np.abs(na - nb) / nb
    return np.where(ok & np.isfinite(loss), loss, INFEASIBLE_PENALTY)


def person_loss(K, G, axis, cfg=CalibConfig()):
    top = np.array([axis.p_top], dtype=float)
    bot = np.array([axis.p_bot], dtype=float)
    return float(axis_losses(K.f, K.cx, K.cy, G.N, G.D, top, bot, cfg.h,
                             cfg.lambda_angle, cfg.lambda_mod)[0])


class _Problem:
    """Objective over ``(pitch, roll, log D[, log f])``."""

    def __init__(self, axes, cfg, image_w, image_h):
        self.top, self.bot, self.w = _stack(axes)
        self.cfg = cfg
        if cfg.fixed_K is not None:
            self.K0 = cfg.fixed_K
        else:
            self.K0 = CameraIntrinsics.centered(image_w, image_w, image_h)
        self.cx, self.cy = self.K0.cx, self.K0.cy
        lo, hi = cfg.f_bounds or (0.2 * self.K0.image_w, 5.0 * self.K0.image_w)
        self.logf_bounds = (math.log(lo), math.log(hi))
        self.weights = self.w.copy()

    @property
    def free_f(self):
        return self.cfg.fixed_K is None

    def unpack(self, x):
        pitch, roll, logD = x[:3]
        f = math.exp(x[3]) if self.free_f else self.K0.f
        return f, normal_from_angles(pitch, roll), math.exp(logD)

    def losses(self, x):
        f, N, D = self.unpack(x)
        return axis_losses(f, self.cx, self.cy, N, D, self.top, self.bot, self.cfg.h,
                           self.cfg.lambda_angle, self.cfg.lambda_mod)

    def __call__(self, x):
        return float(np.dot(self.weights, self.losses(x)) / self.weights.sum())

    def displacement(self, x):
        """Smooth residuals sharing the loss's zero set: predicted minus observed top over axis length."""
        f, N, D = self.unpack(x)
        rx = (self.bot[:, 0] - self.cx) / f
        ry = (self.bot[:, 1] - self.cy) / f
        denom = rx * N[0] + ry * N[1] + N[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -D / denom
            qz = t + self.cfg.h * N[2]
            pu = f * (t * rx + self.cfg.h * N[0]) / qz + self.cx
            pv = f * (t * ry + self.cfg.h * N[1]) / qz + self.cy
        L = np.linalg.norm(self.top - self.bot, axis=1)
        sw = np.sqrt(self.weights)
        r = np.concatenate([sw * (pu - self.top[:, 0]) / L, sw * (pv - self.top[:, 1]) / L])
        ok = (np.abs(denom) > EPS) & (t > EPS) & (qz > EPS)
        bad = ~np.concatenate([ok, ok]) | ~np.isfinite(r)
        return np.where(bad, INFEASIBLE_PENALTY, r)

    def bounds(self):
        b = [(-MAX_TILT, MAX_TILT), (-MAX_TILT, MAX_TILT), (math.log(1e-3), math.log(1e5))]
        if self.free_f:
            b.append(self.logf_bounds)
        return b

    def starts(self):
        pitches = [math.radians(5.0), math.radians(30.0)]
        if self.free_f:
            lo, hi = self.logf_bounds
            n_f = max(1, self.cfg.multistart_count // len(pitches))
            logfs = [lo + (hi - lo) * (k + 0.5) / n_f for k in range(n_f)]
        else:
            logfs = [None]
        out = []
        for logf in logfs:
            for pitch in pitches:
                x = [pitch, 0.0, 0.0] + ([logf] if logf is not None else [])
                out.append(self._best_logD(np.array(x)))
        return out[: max(self.cfg.multistart_count, 1)]

    def _best_logD(self, x):
        def obj(logD):
            y = x.copy()
            y[2] = logD
            return self(y)
        res = minimize_scalar(obj, bounds=(math.log(1e-2), math.log(1e4)), method="bounded",
                              options={"xatol": 1e-6})
        x = x.copy()
        x[2] = res.x
        return x

    def refine(self, x0):
        """Gauss-Newton style step on :meth:`displacement`, kept only if the loss drops."""
        lo, hi = np.array(self.bounds()).T
        x0 = np.clip(np.asarray(x0, dtype=float), lo + 1e-12, hi - 1e-12)
        try:
            res = least_squares(self.displacement, x0, bounds=(lo, hi), method="trf",
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * len(x0))
        except ValueError:
            return x0
        return res.x if self(res.x) <= self(x0) else x0

    def _simplex(self, x, scale):
        steps = np.array([math.radians(2.0), math.radians(2.0), 0.05, 0.1][: len(x)]) * scale
        lo, hi = np.array(self.bounds()).T
        simplex = [x]
        for i, st in enumerate(steps):
            y = x.copy()
            y[i] = y[i] + st if y[i] + st <= hi[i] else y[i] - st
            simplex.append(y)
        return np.array(simplex)

    def polish(self, x0, restarts=6):
        """Nelder-Mead restarted from fresh, shrinking simplices until it stops improving."""
        bounds = self.bounds()
        x = self.refine(x0)
        fx = self(x)
        scale = 1.0
        for _ in range(restarts):
            res = minimize(self, x, method="Nelder-Mead", bounds=bounds,
                           options={"xatol": 1e-10, "fatol": 1e-15,
                                    "maxiter": self.cfg.max_iterations,
                                    "maxfev": 2 * self.cfg.max_iterations, "adaptive": True,
                                    "initial_simplex": self._simplex(x, scale)})
            improved = fx - res.fun
            if res.fun < fx:
                x, fx = res.x, res.fun
            if improved <= self.cfg.convergence_tol:
                if scale < 0.05:
                    break
            scale *= 0.3
        return x, fx


def _check_axes(axes):
    if len(axes) < 3:
        raise InsufficientAxes(f"need at least 3 person axes, got {len(axes)}")
    bot = np.array([a.p_bot for a in axes], dtype=float)
    sv = np.linalg.svd(bot - bot.mean(axis=0), compute_uv=False)
    if sv[0] <= 0 or sv[-1] <= 1e-6 * sv[0]:
        raise InsufficientAxes("ankle points are collinear")


def estimate_camera_ground(axes, cfg=CalibConfig(), image_w=None, image_h=None):
    """Fit ``(K, G)`` to person axes.  Image size is needed unless ``cfg.fixed_K`` is set."""
    _check_axes(axes)
    if cfg.fixed_K is None and (image_w is None or image_h is None):
        raise ValidationError("image size is required when the focal length is estimated")
    prob = _Problem(axes, cfg, image_w, image_h)

    candidates = []
    for x0 in prob.starts():
        x, fx = prob.polish(x0)
        if np.isfinite(fx):
            candidates.append((fx, tuple(x)))
    if not candidates or min(c[0] for c in candidates) >= INFEASIBLE_PENALTY:
        raise OptimizerDiverged("no start produced a feasible configuration")
    fx, x = min(candidates)
    x = np.array(x)

    if len(axes) >= cfg.trim_min_axes and cfg.trim_weight < 1.0:
        per = prob.losses(x)
        cut = np.quantile(per, cfg.trim_quantile)
        if per.max() > cut:
            prob.weights = prob.w * np.where(per > cut, cfg.trim_weight, 1.0)
            x, _ = prob.polish(x)
            prob.weights = prob.w.copy()

    f, N, D = prob.unpack(x)
    K = replace(prob.K0, f=f) if prob.free_f else prob.K0
    G = GroundPlane.from_normal(N, D)
    per = prob.losses(x)
    residual = float(np.dot(prob.w, per) / prob.w.sum())
    return CalibResult(K, G, residual, len(axes), per)


def initial_angles(G):
    return angles_from_normal(G.normal)
