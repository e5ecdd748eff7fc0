"""Per-crop detection ingest: truncation filter, coordinate mapping, de-duplication.

A detector is any callable ``detector(crop: CropBox) -> list[Skeleton2D]``
returning skeletons in crop-local pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoCommonKeypoints, ValidationError
from .skeleton import Skeleton2D
from .tiling import edge_neighbors

LOW_CONFIDENCE = 0.2
HIGH_CONFIDENCE = 0.35
EDGE_MARGIN = 0.02
DEFAULT_TAU_DUP = 0.25


@dataclass(frozen=True)
class DetectorCapability:
    """What the simulated keypoint detector can see.

    A person is found in a crop when it lies wholly inside the crop and its
    pixel height is at least ``min_pixel_height`` and within
    ``[min_height_fraction, max_height_fraction] * crop size``.  The lower
    fraction stands in for the detector's fixed input resolution.
    """

    min_pixel_height: float = 60.0
    max_height_fraction: float = 0.6
    min_height_fraction: float = 0.08
    keypoint_noise_sigma: float = 0.0
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    emit_occluded: bool = False

    def __post_init__(self):
        if self.min_pixel_height < 1:
            raise ValidationError("min_pixel_height must be >= 1")
        for name in ("miss_rate", "false_positive_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must be in [0, 1]")
        if self.keypoint_noise_sigma < 0:
            raise ValidationError("keypoint_noise_sigma must be >= 0")
        if not 0 <= self.min_height_fraction <= self.max_height_fraction:
            raise ValidationError("need 0 <= min_height_fraction <= max_height_fraction")


def filter_truncated(detections, crop, has_neighbor):
    """Drop detections that have a low-confidence joint *and* hug an edge shared with another crop.

    ``detections`` are crop-local; ``has_neighbor`` maps ``left/top/right/bottom`` to bool.
    """
    margin = EDGE_MARGIN * crop.size
    kept = []
    for det in detections:
        low = bool(np.any(det.conf < LOW_CONFIDENCE))
        if not low:
            kept.append(det)
            continue
        u0, v0, u1, v1 = det.bbox()
        near = {
            "left": u0 <= margin,
            "top": v0 <= margin,
            "right": u1 >= crop.size - margin,
            "bottom": v1 >= crop.size - margin,
        }
        if any(near[e] and has_neighbor.get(e, False) for e in near):
            continue
        kept.append(det)
    return kept


def to_image_coords(detections, crop, crop_index=None):
    src = crop_index if crop_index is not None else None
    return [d.translated(crop.u0, crop.v0, source_crop=src) for d in detections]


def pose_similarity(a, b):
    """Mean distance of joints confident (>0.35) in both, over the mean bbox height."""
    common = (a.conf > HIGH_CONFIDENCE) & (b.conf > HIGH_CONFIDENCE)
    if not np.any(common):
        raise NoCommonKeypoints("no keypoint is confident in both detections")
    dist = np.linalg.norm(a.xy[common] - b.xy[common], axis=1).mean()
    norm = 0.5 * (a.pixel_height + b.pixel_height)
    if norm <= 0:
        return float("inf") if dist > 0 else 0.0
    return float(dist / norm)


def _anchor(det):
    if det.has_torso():
        return det.torso_center()
    u0, v0, u1, v1 = det.bbox()
    return np.array([(u0 + u1) / 2, (v0 + v1) / 2])


def candidate_pairs_brute(detections, tau=None):
    """Every pair, or with ``tau`` every pair a vectorised all-pairs screen keeps.

    The screen has a small relative margin so that float differences from
    :func:`pose_similarity` can never drop a pair it would link.
    """
    n = len(detections)
    if tau is None:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    xy = np.stack([d.xy for d in detections])
    hi = np.stack([d.conf > HIGH_CONFIDENCE for d in detections])
    h = np.array([d.pixel_height for d in detections])
    pairs = []
    for i in range(n - 1):
        common = hi[i] & hi[i + 1:]
        cnt = common.sum(axis=1)
        dist = np.where(common, np.linalg.norm(xy[i + 1:] - xy[i], axis=2), 0.0).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            sim = dist / np.maximum(cnt, 1) / (0.5 * (h[i] + h[i + 1:]))
        keep = (cnt > 0) & ~(sim >= tau * (1 + 1e-9))
        pairs.extend((i, i + 1 + int(k)) for k in np.flatnonzero(keep))
    return pairs


def candidate_pairs_kdtree(detections, tau):
    """Pairs whose anchors lie within a radius that provably covers every similar pair.

    If two detections are similar, some common joint is closer than
    ``tau * max_height``; each joint is within ``reach`` of its anchor, so the
    anchors are within ``2 reach + tau max_height``.  The radius used is the
    larger of that bound and twice the largest pixel height.
    """
    anchors = np.array([_anchor(d) for d in detections])
    heights = np.array([d.pixel_height for d in detections])
    reach = max(float(np.nanmax(np.linalg.norm(d.xy[d.present] - a, axis=1)))
                for d, a in zip(detections, anchors))
    radius = max(2.0 * heights.max(), 2.0 * reach + tau * heights.max()) + 1e-6
    tree = cKDTree(anchors)
    return sorted(tree.query_pairs(radius, output_type="set"))


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def group_detections(detections, tau=DEFAULT_TAU_DUP, method="kdtree", crop_exclusive=True):
    """Single-linkage groups (lists of indices, each sorted) of mutually similar detections.

    With ``crop_exclusive`` two groups holding detections from the same crop
    are never joined: a detector does not report one person twice in a crop,
    so such a link can only bridge two different people.  Links are applied
    from most to least similar, which makes the result order independent.
    """
    n = len(detections)
    if n == 0:
        return []
    if method == "kdtree":
        pairs = candidate_pairs_kdtree(detections, tau)
    elif method == "brute":
        pairs = candidate_pairs_brute(detections, tau)
    else:
        raise ValidationError(f"unknown grouping method {method!r}")
    links = []
    for i, j in pairs:
        try:
            sim = pose_similarity(detections[i], detections[j])
        except NoCommonKeypoints:
            continue
        if sim < tau:
            links.append((sim, i, j))
    links.sort()
    parent = list(range(n))
    crops = [{d.source_crop} if d.source_crop >= 0 else set() for d in detections]
    for _, i, j in links:
        ri, rj = _find(parent, i), _find(parent, j)
        if ri == rj or (crop_exclusive and crops[ri] & crops[rj]):
            continue
        lo, hi = min(ri, rj), max(ri, rj)
        parent[hi] = lo
        crops[lo] |= crops[hi]
    groups = {}
    for i in range(n):
        groups.setdefault(_find(parent, i), []).append(i)
    return sorted(groups.values())


def _survivor_key(det):
    t = _anchor(det)
    # highest confidence first, then lexicographic (v, u, crop id)
    return (-det.mean_confidence, float(t[1]), float(t[0]), det.source_crop)


def deduplicate(detections, tau_dup=DEFAULT_TAU_DUP, method="kdtree", crop_exclusive=True):
    """Keep one detection per group of duplicates, preserving input order of survivors."""
    groups = group_detections(detections, tau_dup, method, crop_exclusive)
    keep = sorted(min(g, key=lambda i: (_survivor_key(detections[i]), i)) for g in groups)
    return [detections[i] for i in keep]


def collect(detector, crops, image_w, image_h, crop_offset=0, executor=None):
    """Run ``detector`` over crops, drop truncated hits, map to image pixels.

    ``source_crop`` of each returned skeleton is the crop's index plus
    ``crop_offset``.  Results are ordered by crop then by detector output.
    """
    mapper = executor.map if executor is not None else map
    outputs = list(mapper(detector, crops))
    dets = []
    for k, (crop, found) in enumerate(zip(crops, outputs)):
        kept = filter_truncated(found, crop, edge_neighbors(crop, image_w, image_h))
        dets.extend(to_image_coords(kept, crop, crop_offset + k))
    return dets


def skeleton_to_dict(s):
    return {"id": s.id, "source_crop": s.source_crop,
            "joints": {k: [u, v, c] for k, (u, v, c) in s.joints.items()}}


def skeleton_from_dict(d):
    return Skeleton2D.from_joints({k: tuple(v) for k, v in d["joints"].items()},
                                  id=str(d.get("id", "")), source_crop=int(d.get("source_crop", -1)))
