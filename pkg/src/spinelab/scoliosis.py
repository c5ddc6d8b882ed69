"""Scoliosis features from detected vertebrae and a threshold classifier.

The coronal curve is a quintic x = f(y) through the vertebra centres, where
y is the centroid height and x the lateral position: the area-weighted mean
slice index of a volume times the slice spacing.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core.types import VertebraVolume
from .geometry import (
    Polynomial,
    fit_polynomial,
    fit_residual,
    max_abs_curvature,
    max_centreline_deviation,
)

QUINTIC = 5
FEATURES = ("max_curvature", "max_deviation")


@dataclass(frozen=True)
class ScoliosisFeatures:
    max_curvature: float  # 1/px
    max_deviation: float  # px
    fit_residual: float  # px, RMS

    def to_dict(self) -> dict:
        return asdict(self)

    def deviation_mm(self, spacing_mm: float) -> float:
        return self.max_deviation * spacing_mm


def coronal_points(volumes: Sequence[VertebraVolume], slice_spacing: float = 1.0) -> np.ndarray:
    """(y, x) points: centroid height vs lateral position, ordered top-down."""
    pts = np.array([(v.centroid3d[1], v.lateral_position(slice_spacing)) for v in volumes], dtype=float)
    return pts[np.argsort(pts[:, 0], kind="stable")] if len(pts) else pts.reshape(0, 2)


def sagittal_points(volumes: Sequence[VertebraVolume]) -> np.ndarray:
    """(y, x) centroid points in the sagittal plane, for kyphosis/lordosis exploration."""
    pts = np.array([(v.centroid3d[1], v.centroid3d[0]) for v in volumes], dtype=float)
    return pts[np.argsort(pts[:, 0], kind="stable")] if len(pts) else pts.reshape(0, 2)


def curve_features(points: np.ndarray, degree: int = QUINTIC, samples_per_px: float = 1.0) -> tuple[ScoliosisFeatures, Polynomial]:
    poly = fit_polynomial(points, degree)
    y_range = (points[:, 0].min(), points[:, 0].max())
    return (
        ScoliosisFeatures(
            max_curvature=max_abs_curvature(poly, y_range, samples_per_px),
            max_deviation=max_centreline_deviation(points),
            fit_residual=fit_residual(poly, points),
        ),
        poly,
    )


def scoliosis_features(
    volumes: Sequence[VertebraVolume],
    slice_spacing: float = 1.0,
    allow_lower_degree: bool = False,
) -> ScoliosisFeatures:
    points = coronal_points(volumes, slice_spacing)
    degree = QUINTIC
    if len(points) < QUINTIC + 1:
        if not allow_lower_degree or len(points) < 2:
            raise ValueError(f"a quintic fit needs {QUINTIC + 1} vertebrae, got {len(points)}")
        degree = len(points) - 1
    return curve_features(points, degree)[0]


def classify(features: ScoliosisFeatures, threshold: float, feature: str = "max_deviation") -> tuple[bool, float]:
    """Predict scoliosis when the chosen feature exceeds ``threshold``."""
    if feature not in FEATURES:
        raise ValueError(f"unknown feature {feature!r}; choose from {FEATURES}")
    score = float(getattr(features, feature))
    return score > threshold, score


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> tuple[list[tuple[float, float]], float]:
    """ROC points (fpr, tpr) from a sweep over unique thresholds, and trapezoidal AUC."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative examples")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    # keep the last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tpr = np.r_[0.0, tps[last] / n_pos]
    fpr = np.r_[0.0, fps[last] / n_neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return list(zip(fpr.tolist(), tpr.tolist())), auc
