"""Ground-aware crop planning and the uniform-crop bootstrap.

Rows are built bottom-up.  ``d_bot`` is the distance in pixels of the current
row's lower edge from the image bottom (``v = image_h - d_bot``).  For each row
the tallest admissible person standing on that row fixes the square crop size;
the row then advances by the pixel height of a person whose *head* sits on the
current row, which makes consecutive bands overlap exactly enough for a
``s_ratio = 0.5`` plan to keep everyone whole.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
import math

import numpy as np

from .errors import NoValidRows, RowAboveVanishingLine, ValidationError
from .geometry import EPS, _ray_ground_params, translate_ground

#: pixels sampled along a row when searching for the extremal person height
ROW_SAMPLES = 33
MAX_ROWS = 10_000


@dataclass(frozen=True)
class CropBox:
    """Square crop; ``(u0, v0)`` is the top-left corner in image pixels."""

    u0: float
    v0: float
    size: float
    row: int = 0
    col: int = 0

    @property
    def u1(self):
        return self.u0 + self.size

    @property
    def v1(self):
        return self.v0 + self.size

    def clipped(self, image_w, image_h):
        """``(u0, v0, u1, v1)`` intersected with the image rectangle."""
        return (max(self.u0, 0.0), max(self.v0, 0.0),
                min(self.u1, float(image_w)), min(self.v1, float(image_h)))

    def contains(self, u0, v0, u1, v1, image_w=None, image_h=None, tol=1e-9):
        if image_w is None:
            a0, b0, a1, b1 = self.u0, self.v0, self.u1, self.v1
        else:
            a0, b0, a1, b1 = self.clipped(image_w, image_h)
        return (u0 >= a0 - tol and v0 >= b0 - tol and u1 <= a1 + tol and v1 <= b1 + tol)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TilingConfig:
    s_ratio: float = 0.5
    s_minPixel: float = 60.0
    H_personMax: float = 2.1
    horizontal_overlap: float = 0.5

    def __post_init__(self):
        if not 0 < self.s_ratio <= 1:
            raise ValidationError("s_ratio must be in (0, 1]")
        if self.s_minPixel < 1:
            raise ValidationError("s_minPixel must be >= 1")
        if self.H_personMax <= 0:
            raise ValidationError("H_personMax must be positive")
        if not 0 <= self.horizontal_overlap < 1:
            raise ValidationError("horizontal_overlap must be in [0, 1)")


def _row_lengths(v_row, K, G, L, samples=ROW_SAMPLES):
    """Signed upward pixel lengths of ``L N`` erected on the row's ground points (NaN where invalid)."""
    us = np.linspace(0.0, K.image_w, samples)
    pix = np.stack([us, np.full_like(us, v_row)], axis=-1)
    rays, denom, t = _ray_ground_params(K, G.N, G.D, pix)
    ok = (np.abs(denom) > EPS) & (t > EPS)
    P = rays * np.where(ok, t, 0.0)[:, None]
    Q = P + L * G.N
    ok &= Q[:, 2] > EPS
    zq = np.where(ok, Q[:, 2], 1.0)
    vq = K.f * Q[:, 1] / zq + K.cy
    return np.where(ok, -(vq - v_row), np.nan)


def max_pixel_height_on_row(d_bot, K, G, L, samples=ROW_SAMPLES):
    """Extremal signed pixel length of a 3D segment ``L N`` standing on row ``d_bot``.

    Upward in the image is positive.  The extremum is the largest magnitude,
    sign preserved.
    """
    if L == 0:
        return 0.0
    lengths = _row_lengths(K.image_h - d_bot, K, G, L, samples)
    if np.all(np.isnan(lengths)):
        raise RowAboveVanishingLine(f"row d_bot={d_bot} does not see the plane")
    i = int(np.nanargmax(np.abs(lengths)))
    return float(lengths[i])


def cut_row(d_bot, size, image_w, image_h, row, overlap=0.5):
    """Square tiles of one row, left to right, the last one reaching the right edge."""
    v0 = image_h - d_bot - size
    if v0 < 0 and size <= image_h:
        v0 = 0.0  # slide down to end at the top edge instead of poking out
    stride = size * (1.0 - overlap)
    boxes = []
    u0 = 0.0
    col = 0
    while True:
        boxes.append(CropBox(u0, v0, size, row, col))
        if u0 + size >= image_w:
            break
        u0 += stride
        col += 1
    return boxes


def plan_crops(K, G, cfg=TilingConfig()):
    """Ground-aware crop plan for camera ``K`` and ground ``G``."""
    G_head = translate_ground(G, cfg.H_personMax)
    d_bot = 0.0
    boxes = []
    row = 0
    while row < MAX_ROWS:
        try:
            h_max = max_pixel_height_on_row(d_bot, K, G, cfg.H_personMax)
        except RowAboveVanishingLine:
            break
        if h_max < cfg.s_minPixel:
            break  # too close to the vanishing line
        size = h_max / cfg.s_ratio
        boxes.extend(cut_row(d_bot, size, K.image_w, K.image_h, row, cfg.horizontal_overlap))
        row += 1
        try:
            step = max_pixel_height_on_row(d_bot, K, G_head, -cfg.H_personMax)
        except RowAboveVanishingLine:
            break
        if abs(step) < 1e-6:
            break
        d_bot = d_bot + abs(step)
        if d_bot > K.image_h:
            break  # reached the top of the image
    if not boxes and not G.visible_in(K):
        raise NoValidRows("ground plane is not visible in the image")
    return boxes


def uniform_crop_sizes(image_w, image_h, base=512):
    """512, 1024, ... up to a quarter of the longer image side (always at least one)."""
    bound = max(image_w, image_h) / 4.0
    sizes = [base]
    while sizes[-1] * 2 <= bound:
        sizes.append(sizes[-1] * 2)
    return sizes


def uniform_grid(image_w, image_h, size, overlap=0.5):
    stride = size * (1.0 - overlap)
    ncols = max(1, math.ceil(max(image_w - size, 0) / stride) + 1)
    nrows = max(1, math.ceil(max(image_h - size, 0) / stride) + 1)
    return [CropBox(c * stride, r * stride, float(size), r, c)
            for r in range(nrows) for c in range(ncols)]


def uniform_crops(image_w, image_h):
    """One 50%-overlap tiling per bootstrap size."""
    return [uniform_grid(image_w, image_h, s) for s in uniform_crop_sizes(image_w, image_h)]


def edge_neighbors(box, image_w, image_h):
    """Which crop edges face another crop (i.e. are interior to the image)."""
    return {
        "left": box.u0 > 0,
        "top": box.v0 > 0,
        "right": box.u1 < image_w,
        "bottom": box.v1 < image_h,
    }


def plan_to_dict(boxes, image_w, image_h):
    return {"image_w": image_w, "image_h": image_h, "boxes": [b.to_dict() for b in boxes]}


def plan_from_dict(data):
    return [CropBox(**b) for b in data["boxes"]]
