"""Ground-truth detection/grouping maps and the two training losses.

Each landmark is rendered as an isotropic Gaussian whose variance scales with
the square root of the vertebra's area. Grouping targets hold, around every
corner, the displacement from the owning vertebra's centroid to the pixel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core.types import (
    CORNER_KINDS,
    AnnotationSet,
    HeatmapStack,
    LandmarkKind,
    VectorFieldStack,
    quad_index,
)
from .geometry import polygon_area

DETECT_THRESHOLD = 0.01
TRUNCATE_SIGMAS = 4.0


@dataclass(frozen=True, eq=False)
class TargetMaps:
    detection: np.ndarray  # 5 x H x W
    grouping: np.ndarray  # 4 x 2 x H x W
    mask: np.ndarray  # 4 x H x W, bool


def landmark_sigma(corners: np.ndarray, c_var: float = 1.0) -> float:
    return float(np.sqrt(c_var * np.sqrt(polygon_area(corners))))


def _window(shape, x: float, y: float, radius: float):
    h, w = shape
    r0, r1 = max(int(np.floor(y - radius)), 0), min(int(np.ceil(y + radius)) + 1, h)
    c0, c1 = max(int(np.floor(x - radius)), 0), min(int(np.ceil(x + radius)) + 1, w)
    if r0 >= r1 or c0 >= c1:
        return None
    yy, xx = np.mgrid[r0:r1, c0:c1]
    return (slice(r0, r1), slice(c0, c1)), xx, yy


def render_targets(
    quads: Sequence[np.ndarray],
    shape: tuple[int, int],
    c_var: float = 1.0,
    nbhd_radius_factor: float = 2.0,
) -> TargetMaps:
    """Render one slice's targets from (4, 2) corner arrays ordered TL, TR, BR, BL."""
    h, w = shape
    detection = np.zeros((len(LandmarkKind), h, w))
    grouping = np.zeros((4, 2, h, w))
    mask = np.zeros((4, h, w), dtype=bool)
    nearest = np.full((4, h, w), np.inf)

    for corners in quads:
        corners = np.asarray(corners, dtype=float).reshape(4, 2)
        centroid = corners.mean(axis=0)
        sigma = landmark_sigma(corners, c_var)
        points = {kind: corners[quad_index(kind)] for kind in CORNER_KINDS}
        points[LandmarkKind.CENTROID] = centroid

        for kind, (x, y) in points.items():
            win = _window(shape, x, y, TRUNCATE_SIGMAS * sigma)
            if win is None:
                continue
            sl, xx, yy = win
            d2 = (xx - x) ** 2 + (yy - y) ** 2
            g = np.where(d2 <= (TRUNCATE_SIGMAS * sigma) ** 2, np.exp(-d2 / (2 * sigma**2)), 0.0)
            np.maximum(detection[kind][sl], g, out=detection[kind][sl])

        rho = nbhd_radius_factor * sigma
        for kind in CORNER_KINDS:
            x, y = points[kind]
            win = _window(shape, x, y, rho)
            if win is None:
                continue
            sl, xx, yy = win
            d = np.hypot(xx - x, yy - y)
            closer = (d <= rho) & (d < nearest[kind][sl])
            nearest[kind][sl][closer] = d[closer]
            mask[kind][sl][closer] = True
            grouping[kind, 0][sl][closer] = (xx - centroid[0])[closer]
            grouping[kind, 1][sl][closer] = (yy - centroid[1])[closer]

    return TargetMaps(detection, grouping, mask)


def render_annotation(
    ann: AnnotationSet,
    shape: tuple[int, int, int],
    c_var: float = 1.0,
    nbhd_radius_factor: float = 2.0,
    exclude: Sequence[int] = (),
) -> tuple[HeatmapStack, VectorFieldStack, np.ndarray]:
    """Render a whole scan; vertebrae whose index is in ``exclude`` are left out."""
    s, h, w = shape
    heat = np.zeros((s, len(LandmarkKind), h, w), dtype=np.float32)
    fields = np.zeros((s, 4, 2, h, w), dtype=np.float32)
    masks = np.zeros((s, 4, h, w), dtype=bool)
    skip = set(exclude)
    for k in range(s):
        quads = [v.quads[k] for i, v in enumerate(ann.vertebrae) if k in v.quads and i not in skip]
        if not quads:
            continue
        t = render_targets(quads, (h, w), c_var, nbhd_radius_factor)
        heat[k], fields[k], masks[k] = t.detection, t.grouping, t.mask
    return HeatmapStack(heat, ann.pixel_spacing_mm), VectorFieldStack(fields), masks


def detect_weights(target: np.ndarray, threshold: float = DETECT_THRESHOLD) -> np.ndarray:
    """Per-pixel class-balancing weights, shape of ``target`` (C x H x W)."""
    target = np.asarray(target, dtype=float)
    if target.ndim == 2:
        target = target[None]
    weights = np.empty_like(target)
    for k, channel in enumerate(target):
        positive = channel >= threshold
        n_pos = int(positive.sum())
        n_neg = channel.size - n_pos
        if n_pos == 0 or n_neg == 0:
            weights[k] = 1.0 / channel.size
        else:
            weights[k] = np.where(positive, n_neg, n_pos) / (n_pos + n_neg)
    return weights


def detect_loss(response: np.ndarray, target: np.ndarray, threshold: float = DETECT_THRESHOLD) -> float:
    """Class-balanced L1 loss between a response map and its target (C x H x W)."""
    response = np.asarray(response, dtype=float)
    target = np.asarray(target, dtype=float)
    if response.shape != target.shape:
        raise ValueError(f"shape mismatch: {response.shape} vs {target.shape}")
    weights = detect_weights(target, threshold).reshape(response.shape)
    return float(np.sum(weights * np.abs(response - target)))


def group_loss(fields: np.ndarray, targets: TargetMaps) -> float:
    """Squared vector error summed over the corner neighbourhoods only."""
    fields = np.asarray(fields, dtype=float)
    if fields.shape != targets.grouping.shape:
        raise ValueError(f"shape mismatch: {fields.shape} vs {targets.grouping.shape}")
    sq = ((fields - targets.grouping) ** 2).sum(axis=1)
    return float(sq[targets.mask].sum())
