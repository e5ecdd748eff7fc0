"""Prediction/ground-truth matching and crowd reconstruction metrics.

Scores (PPDS, PA-PPDS, PCOD, OKS) are "higher is better"; errors
(T-MPJPE, PA-MPJPE) are in metres.  Every metric is reported twice: averaged
over matched pairs ("match") and punished by the detection F1 ("norm").
"""
from __future__ import annotations

from dataclasses import dataclass, field
import csv
import io

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    CoincidentGroundTruth,
    DegenerateConfiguration,
    JointSetMismatch,
    NoLabeledKeypoints,
    TooFewPairs,
    ValidationError,
    ZeroF1,
)
from .geometry import CameraIntrinsics, project
from .skeleton import COCO_SIGMAS, JOINT_NAMES, L_HIP, R_HIP

SCHEMA_VERSION = 1
GATE_FRACTION = 0.5
EPS_TIE = 0.1
SCORES = ("ppds", "pa_ppds", "pcod", "oks")
ERRORS = ("t_mpjpe", "pa_mpjpe")


@dataclass
class MatchResult:
    pairs: list  # (pred id, gt id)
    unmatched_pred: list
    unmatched_gt: list
    excluded_gt: list
    ignored_pred: list = field(default_factory=list)  # matched to an excluded GT

    @property
    def tp(self):
        return len(self.pairs)

    @property
    def precision(self):
        n = self.tp + len(self.unmatched_pred)
        return 1.0 if n == 0 else self.tp / n

    @property
    def recall(self):
        n = self.tp + len(self.unmatched_gt)
        return 1.0 if n == 0 else self.tp / n

    @property
    def f1(self):
        if self.tp == 0:
            return 1.0 if not self.unmatched_pred and not self.unmatched_gt else 0.0
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r)


def _gated_costs(pred_xy, gt_xy, gt_heights, gate_fraction):
    pred_xy = np.asarray(pred_xy, dtype=float).reshape(-1, 2)
    gt_xy = np.asarray(gt_xy, dtype=float).reshape(-1, 2)
    dist = np.linalg.norm(pred_xy[:, None, :] - gt_xy[None, :, :], axis=-1)
    gate = gate_fraction * np.asarray(gt_heights, dtype=float)[None, :]
    return dist, dist <= gate


def optimal_assignment(pred_xy, gt_xy, gt_heights, gate_fraction=GATE_FRACTION):
    """Index pairs maximising the number of gated matches, then minimising total distance."""
    dist, ok = _gated_costs(pred_xy, gt_xy, gt_heights, gate_fraction)
    if dist.size == 0 or not ok.any():
        return []
    big = float(dist[ok].sum()) + 1.0
    cost = np.where(ok, dist, big)
    rows, cols = linear_sum_assignment(cost)
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if ok[i, j])


def exhaustive_assignment(pred_xy, gt_xy, gt_heights, gate_fraction=GATE_FRACTION):
    """Brute-force optimum of the same objective; exponential, for small instances only."""
    dist, ok = _gated_costs(pred_xy, gt_xy, gt_heights, gate_fraction)
    n_p, n_g = dist.shape
    best = (0, 0.0, [])

    def rec(i, used, pairs, total):
        nonlocal best
        if i == n_p:
            key = (len(pairs), -total)
            if key > (best[0], -best[1]):
                best = (len(pairs), total, list(pairs))
            return
        rec(i + 1, used, pairs, total)
        for j in range(n_g):
            if j not in used and ok[i, j]:
                pairs.append((i, j))
                rec(i + 1, used | {j}, pairs, total + dist[i, j])
                pairs.pop()

    rec(0, frozenset(), [], 0.0)
    return best[2]


def assignment_cost(pairs, pred_xy, gt_xy):
    pred_xy = np.asarray(pred_xy, dtype=float).reshape(-1, 2)
    gt_xy = np.asarray(gt_xy, dtype=float).reshape(-1, 2)
    return float(sum(np.linalg.norm(pred_xy[i] - gt_xy[j]) for i, j in pairs))


def match(pred_ids, pred_xy, gt_ids, gt_xy, gt_heights, excluded=None, gate_fraction=GATE_FRACTION):
    """One-to-one matching on 2D torso centres.

    Excluded GTs take part in the assignment so that a prediction of an
    occluded or truncated person is neither a hit nor a false positive.
    """
    excluded = [False] * len(gt_ids) if excluded is None else list(excluded)
    if len(set(pred_ids)) != len(pred_ids) or len(set(gt_ids)) != len(gt_ids):
        raise ValidationError("ids must be unique")
    idx = optimal_assignment(pred_xy, gt_xy, gt_heights, gate_fraction)
    pairs, ignored = [], []
    used_p, used_g = set(), set()
    for i, j in idx:
        used_p.add(i)
        used_g.add(j)
        if excluded[j]:
            ignored.append(pred_ids[i])
        else:
            pairs.append((pred_ids[i], gt_ids[j]))
    return MatchResult(
        pairs=pairs,
        unmatched_pred=[p for i, p in enumerate(pred_ids) if i not in used_p],
        unmatched_gt=[g for j, g in enumerate(gt_ids) if j not in used_g and not excluded[j]],
        excluded_gt=[g for j, g in enumerate(gt_ids) if excluded[j]],
        ignored_pred=ignored,
    )


def _pair_dists(X):
    X = np.asarray(X, dtype=float)
    i, k = np.triu_indices(len(X), 1)
    return np.linalg.norm(X[i] - X[k], axis=1)


def ppds(E, G):
    """Pairwise percentage distance similarity of predicted torsos ``E`` against ``G``."""
    E = np.asarray(E, dtype=float)
    G = np.asarray(G, dtype=float)
    if len(E) != len(G) or len(G) < 2:
        raise TooFewPairs("PPDS needs at least two matched pairs")
    dg = _pair_dists(G)
    if np.any(dg <= 1e-9):
        raise CoincidentGroundTruth("two ground-truth torsos coincide")
    d = np.abs(_pair_dists(E) - dg) / dg
    return float(100.0 * np.mean(1.0 - np.minimum(d, 1.0)))


def similarity_procrustes(X, Y):
    """``(s, R, t)`` minimising ``sum |s R x + t - y|^2`` with ``det R = +1``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var = (Xc ** 2).sum()
    if var <= 1e-18:
        raise DegenerateConfiguration("source points coincide")
    U, S, Vt = np.linalg.svd(Yc.T @ Xc)
    sign = np.ones(len(S))
    sign[-1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ np.diag(sign) @ Vt
    s = float((S * sign).sum() / var)
    return s, R, my - s * R @ mx


def align(X, Y):
    s, R, t = similarity_procrustes(X, Y)
    return s * np.asarray(X, float) @ R.T + t


def pa_ppds(E, G):
    E = np.asarray(E, dtype=float)
    G = np.asarray(G, dtype=float)
    if len(G) < 3:
        raise DegenerateConfiguration("PA-PPDS needs at least three pairs")
    for X in (E, G):
        sv = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
        if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateConfiguration("collinear torso layout")
    return ppds(align(E, G), G)


def pcod(Ez, Gz, eps_tie=EPS_TIE):
    """Percentage of pairs whose predicted depth order agrees with the ground truth."""
    Ez = np.asarray(Ez, dtype=float)
    Gz = np.asarray(Gz, dtype=float)
    if len(Ez) != len(Gz) or len(Gz) < 2:
        raise TooFewPairs("PCOD needs at least two matched pairs")
    i, k = np.triu_indices(len(Gz), 1)
    de, dg = Ez[i] - Ez[k], Gz[i] - Gz[k]
    te, tg = np.abs(de) < eps_tie, np.abs(dg) < eps_tie
    ok = np.where(te | tg, te & tg, np.sign(de) == np.sign(dg))
    return float(100.0 * ok.mean())


def oks(pred_xy, gt_xy, area, labeled=None, sigmas=COCO_SIGMAS):
    """COCO object keypoint similarity with ``k_i = 2 sigma_i`` and ``s^2 = area``."""
    pred_xy = np.asarray(pred_xy, dtype=float)
    gt_xy = np.asarray(gt_xy, dtype=float)
    labeled = np.all(np.isfinite(gt_xy), axis=1) if labeled is None else np.asarray(labeled, bool)
    if not labeled.any():
        raise NoLabeledKeypoints("ground truth has no labeled keypoint")
    if area <= 0:
        raise ValidationError("ground-truth area must be positive")
    k = 2.0 * np.asarray(sigmas, dtype=float)
    d2 = ((pred_xy - gt_xy) ** 2).sum(axis=1)
    e = np.exp(-d2[labeled] / (2.0 * area * k[labeled] ** 2))
    return float(np.nan_to_num(e, nan=0.0).mean())


def _root(J):
    return 0.5 * (J[L_HIP] + J[R_HIP])


def _check_joints(P, G):
    P = np.asarray(P, dtype=float)
    G = np.asarray(G, dtype=float)
    if P.shape != G.shape or P.ndim != 2:
        raise JointSetMismatch(f"joint arrays differ: {P.shape} vs {G.shape}")
    return P, G


def t_mpjpe(P, G, root=_root):
    """Mean joint error after moving the predicted root (mid-hip) onto the true root."""
    P, G = _check_joints(P, G)
    P = P - root(P) + root(G)
    return float(np.linalg.norm(P - G, axis=1).mean())


def pa_mpjpe(P, G):
    P, G = _check_joints(P, G)
    return float(np.linalg.norm(align(P, G) - G, axis=1).mean())


def punish(values, f1):
    """``{name: {"match", "norm"}}``: scores times F1, errors over F1 (None when F1 is 0)."""
    if not 0 <= f1 <= 1:
        raise ValidationError("f1 must lie in [0, 1]")
    out = {}
    for name, v in values.items():
        if v is None:
            out[name] = {"match": None, "norm": None}
        elif name in ERRORS:
            out[name] = {"match": v, "norm": None if f1 == 0 else v / f1}
        else:
            out[name] = {"match": v, "norm": v * f1}
    return out


def punished_error(value, f1):
    if f1 <= 0:
        raise ZeroF1("error punishment is undefined at F1 = 0")
    return value / f1


@dataclass
class MetricsReport:
    metrics: dict
    precision: float
    recall: float
    f1: float
    counts: dict
    match: MatchResult = field(repr=False, default=None)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "counts": self.counts,
                "metrics": self.metrics,
                "pairs": [list(p) for p in self.match.pairs] if self.match else []}


def _joints_array(d):
    j = d["joints_cam"]
    if isinstance(j, dict):
        if set(j) != set(JOINT_NAMES):
            raise JointSetMismatch("joints_cam must name every skeleton joint")
        return np.array([j[n] for n in JOINT_NAMES], dtype=float)
    return np.asarray(j, dtype=float)


def _camera(doc):
    return CameraIntrinsics(**doc["camera"])


def _guard(fn, *args):
    try:
        return fn(*args)
    except (TooFewPairs, DegenerateConfiguration, CoincidentGroundTruth):
        return None


def evaluate(pred_doc, gt_doc, gate_fraction=GATE_FRACTION, eps_tie=EPS_TIE):
    """Match predictions to ground truth for one image and compute every metric."""
    K = _camera(gt_doc)
    Kp = _camera(pred_doc) if "camera" in pred_doc else K  # predictions project with their own camera
    gts = gt_doc["persons"]
    preds = pred_doc["persons"]
    GJ = [_joints_array(g) for g in gts]
    PJ = [_joints_array(p) for p in preds]
    GT = np.array([g["torso"] for g in gts], dtype=float).reshape(-1, 3)
    PT = np.array([p["torso"] for p in preds], dtype=float).reshape(-1, 3)
    G2 = [project(K, J) for J in GJ]
    gt_xy = project(K, GT) if len(GT) else np.zeros((0, 2))
    pred_xy = project(Kp, PT) if len(PT) else np.zeros((0, 2))
    heights = np.array([g2[:, 1].max() - g2[:, 1].min() for g2 in G2])
    m = match([p["id"] for p in preds], pred_xy, [g["id"] for g in gts], gt_xy, heights,
              [bool(g.get("excluded", False)) for g in gts], gate_fraction)

    pi = {p["id"]: i for i, p in enumerate(preds)}
    gi = {g["id"]: j for j, g in enumerate(gts)}
    ii = [pi[a] for a, _ in m.pairs]
    jj = [gi[b] for _, b in m.pairs]
    E, G = PT[ii], GT[jj]

    values = {
        "ppds": _guard(ppds, E, G),
        "pa_ppds": _guard(pa_ppds, E, G),
        "pcod": _guard(pcod, E[:, 2], G[:, 2], eps_tie) if len(ii) >= 2 else None,
        "oks": None, "t_mpjpe": None, "pa_mpjpe": None,
    }
    if ii:
        o, t, pa = [], [], []
        for i, j in zip(ii, jj):
            g2 = G2[j]
            w, h = g2.max(axis=0) - g2.min(axis=0)
            o.append(oks(project(Kp, PJ[i]), g2, float(w * h)))
            t.append(t_mpjpe(PJ[i], GJ[j]))
            pa.append(pa_mpjpe(PJ[i], GJ[j]))
        values.update(oks=float(np.mean(o)), t_mpjpe=float(np.mean(t)), pa_mpjpe=float(np.mean(pa)))
    counts = {"tp": m.tp, "fp": len(m.unmatched_pred), "fn": len(m.unmatched_gt),
              "excluded_gt": len(m.excluded_gt), "ignored_pred": len(m.ignored_pred)}
    return MetricsReport(punish(values, m.f1), m.precision, m.recall, m.f1, counts, m)


def reports_csv(reports, names=None):
    """One row per image: precision, recall, f1 and ``<metric>_match``/``<metric>_norm`` columns."""
    names = names or [f"image{i}" for i in range(len(reports))]
    buf = io.StringIO()
    cols = ["image", "precision", "recall", "f1"]
    for m in SCORES + ERRORS:
        cols += [f"{m}_match", f"{m}_norm"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for name, r in zip(names, reports):
        row = [name, r.precision, r.recall, r.f1]
        for m in SCORES + ERRORS:
            row += ["" if r.metrics[m][k] is None else repr(r.metrics[m][k]) for k in ("match", "norm")]
        w.writerow(row)
    return buf.getvalue()

