"""Detection and identification metrics.

A ground-truth vertebra counts as detected when its centroid, taken in its
annotated mid-slice, lies inside exactly one detected quadrilateral. The
centroid is a point, so "contained within a single quadrilateral" excludes
the case where it falls inside two overlapping detections. Each detection's
quadrilateral comes from the ground-truth slice, or from the volume's
nearest slice when it does not reach that slice.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core.types import AnnotationSet, VertebraVolume
from .geometry import point_in_polygon
from .label import LEVELS, N_LEVELS, TOKEN_INDEX, LabelSequence


@dataclass
class Matching:
    pairs: dict[int, int]  # ground-truth index -> detection id
    false_negatives: list[int]
    false_positives: list[int]  # detection ids
    n_gt: int
    n_det: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)


@dataclass
class EvalReport:
    precision: float
    recall: float
    le_mean_mm: float
    le_std_mm: float
    idr: float
    idr_pm1: float
    tp: int
    fp: int
    fn: int
    per_level_recall: list[float] = field(default_factory=list)
    per_level_idr: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def match_detections(gt: AnnotationSet, dets: Sequence[VertebraVolume]) -> Matching:
    candidates: dict[int, list[int]] = {}  # detection index -> gt indices containing only it
    false_negatives = []
    for g, vert in enumerate(gt.vertebrae):
        c = vert.centroid
        inside = [d for d, det in enumerate(dets) if point_in_polygon(c, det.quad_nearest(vert.mid_slice))]
        if len(inside) == 1:
            candidates.setdefault(inside[0], []).append(g)
        else:
            false_negatives.append(g)

    pairs = {}
    for d, gts in candidates.items():
        qc = dets[d].quad_nearest(gt.vertebrae[gts[0]].mid_slice).centroid
        best = min(gts, key=lambda g: (np.hypot(*(gt.vertebrae[g].centroid - qc)), g))
        pairs[best] = dets[d].id
        false_negatives.extend(g for g in gts if g != best)

    matched = set(pairs.values())
    false_positives = sorted(det.id for det in dets if det.id not in matched)
    return Matching(dict(sorted(pairs.items())), sorted(false_negatives), false_positives, len(gt), len(dets))


def precision_recall(m: Matching) -> tuple[float, float]:
    precision = m.tp / (m.tp + m.fp) if m.tp + m.fp else 1.0
    recall = m.tp / m.n_gt if m.n_gt else 1.0
    return precision, recall


def localisation_error(
    gt: AnnotationSet, dets: Sequence[VertebraVolume], pixel_spacing_mm: Sequence[float] | None = None
) -> tuple[float, float]:
    """Mean and std (mm) of the distance from each GT centroid to the nearest detection centroid."""
    if not dets:
        raise ValueError("localisation error is undefined without detections")
    if not len(gt):
        return 0.0, 0.0
    row_mm, col_mm = pixel_spacing_mm or gt.pixel_spacing_mm
    dists = []
    for vert in gt.vertebrae:
        c = vert.centroid
        centres = np.array([d.quad_nearest(vert.mid_slice).centroid for d in dets])
        dx = (centres[:, 0] - c[0]) * col_mm
        dy = (centres[:, 1] - c[1]) * row_mm
        dists.append(np.hypot(dx, dy).min())
    return float(np.mean(dists)), float(np.std(dists))


def corner_error(gt: AnnotationSet, dets: Sequence[VertebraVolume], m: Matching) -> float:
    """Mean corner distance (px) over matched pairs, in the GT mid-slice."""
    by_id = {d.id: d for d in dets}
    errs = []
    for g, det_id in m.pairs.items():
        vert = gt.vertebrae[g]
        q = by_id[det_id].quad_nearest(vert.mid_slice)
        errs.extend(np.hypot(*(q.corners - vert.quads[vert.mid_slice]).T))
    return float(np.mean(errs)) if errs else 0.0


def level_distance(predicted: str, true: str, extended: bool = False) -> int:
    """Level-index error. The extended order (with L6) is used only when the
    spine has a sixth lumbar vertebra or L6 is predicted; otherwise L5 and S1
    are neighbours."""
    if extended or "L6" in (predicted, true):
        return abs(TOKEN_INDEX[predicted] - TOKEN_INDEX[true])
    return abs(LEVELS.index(predicted) - LEVELS.index(true))


def _labels_map(labels: LabelSequence | Mapping[int, str]) -> dict[int, str]:
    return labels.as_dict() if isinstance(labels, LabelSequence) else dict(labels)


def identification_rate(
    m: Matching, labels: LabelSequence | Mapping[int, str], gt_levels: Sequence[str]
) -> tuple[float, float]:
    """(IDR, IDR+-1) over all ground-truth vertebrae."""
    assigned = _labels_map(labels)
    n = len(gt_levels)
    if n == 0:
        return 1.0, 1.0
    extended = "L6" in gt_levels
    exact = near = 0
    for g, det_id in m.pairs.items():
        if det_id not in assigned:
            continue
        err = level_distance(assigned[det_id], gt_levels[g], extended)
        exact += err == 0
        near += err <= 1
    return exact / n, near / n


def per_level_breakdown(
    m: Matching, labels: LabelSequence | Mapping[int, str], gt_levels: Sequence[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Recall and IDR per canonical level (NaN where a level has no GT vertebra)."""
    assigned = _labels_map(labels)
    total = np.zeros(N_LEVELS)
    found = np.zeros(N_LEVELS)
    correct = np.zeros(N_LEVELS)
    for g, level in enumerate(gt_levels):
        if level not in LEVELS:
            continue
        i = LEVELS.index(level)
        total[i] += 1
        if g in m.pairs:
            found[i] += 1
            correct[i] += assigned.get(m.pairs[g]) == level
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, found / total, np.nan), np.where(total > 0, correct / total, np.nan)


def per_level_table(recall: np.ndarray, idr: np.ndarray) -> str:
    lines = ["level,recall,idr"]
    for name, r, i in zip(LEVELS, recall, idr):
        lines.append(f"{name},{'' if np.isnan(r) else f'{r:.6f}'},{'' if np.isnan(i) else f'{i:.6f}'}")
    return "\n".join(lines) + "\n"


def evaluate(
    gt: AnnotationSet,
    dets: Sequence[VertebraVolume],
    labels: LabelSequence | Mapping[int, str] | None = None,
    pixel_spacing_mm: Sequence[float] | None = None,
) -> EvalReport:
    m = match_detections(gt, dets)
    precision, recall = precision_recall(m)
    le = localisation_error(gt, dets, pixel_spacing_mm) if dets else (float("nan"), float("nan"))
    labels = labels if labels is not None else {}
    idr, idr1 = identification_rate(m, labels, gt.levels)
    rec, ids = per_level_breakdown(m, labels, gt.levels)
    return EvalReport(
        precision=precision,
        recall=recall,
        le_mean_mm=le[0],
        le_std_mm=le[1],
        idr=idr,
        idr_pm1=idr1,
        tp=m.tp,
        fp=m.fp,
        fn=m.fn,
        per_level_recall=[None if np.isnan(x) else float(x) for x in rec],
        per_level_idr=[None if np.isnan(x) else float(x) for x in ids],
    )


def format_report(report: EvalReport) -> str:
    return (
        f"precision {report.precision:.4f}  recall {report.recall:.4f}  "
        f"(TP {report.tp}, FP {report.fp}, FN {report.fn})\n"
        f"LE {report.le_mean_mm:.3f} +- {report.le_std_mm:.3f} mm\n"
        f"IDR {report.idr:.4f}  IDR+-1 {report.idr_pm1:.4f}\n"
    )
