"""Vertebra detection from landmark heatmaps and corner grouping fields.

Three stages: threshold each detection channel into connected components
(one landmark per component), group corners with centroids using the
predicted centroid positions read from the grouping fields, then chain the
per-slice quadrilaterals across adjacent slices by IoU.

Field sign convention: the grouping field at a pixel near a corner holds the
displacement from the vertebra's centroid to that pixel, so a corner at ``p``
predicts its centroid at ``p - v(p)``. Set ``field_sign=-1`` for fields
trained to point from the corner towards the centroid.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import ndimage

from .core.types import (
    CORNER_KINDS,
    QUAD_ORDER,
    HeatmapStack,
    Landmark,
    LandmarkKind,
    Quadrilateral,
    VectorFieldStack,
    VertebraVolume,
)
from .geometry import is_convex, polygon_iou

log = logging.getLogger(__name__)

SLICE_IOU_THRESHOLD = 0.5
AUTO_RANGE_CLAMP = (10.0, 100.0)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectConfig:
    threshold: float = 0.4
    max_range: Union[float, str] = "auto"
    iou_threshold: float = SLICE_IOU_THRESHOLD
    min_area: int = 3
    field_sign: int = 1
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.max_range != "auto" and not float(self.max_range) > 0:
            raise ValueError("max_range must be positive or 'auto'")
        if self.field_sign not in (1, -1):
            raise ValueError("field_sign must be +1 or -1")


def extract_landmarks(heatmaps: np.ndarray, cfg: DetectConfig = DetectConfig(), slice_index: int = 0) -> list[Landmark]:
    """Threshold each channel and turn every connected component into a landmark."""
    heatmaps = np.asarray(heatmaps, dtype=float)
    out = []
    for kind in LandmarkKind:
        channel = heatmaps[kind]
        labels, n = ndimage.label(channel >= cfg.threshold, structure=_EIGHT_CONNECTED)
        if n == 0:
            continue
        for label, box in enumerate(ndimage.find_objects(labels), start=1):
            member = labels[box] == label
            if member.sum() < cfg.min_area:
                continue
            weights = np.where(member, channel[box], 0.0)
            yy, xx = np.mgrid[box]
            total = weights.sum()
            cx, cy = (weights * xx).sum() / total, (weights * yy).sum() / total
            out.append(Landmark(kind, (float(cx), float(cy)), slice_index, float(weights.max())))
    return out


def _sample_field(field: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Bilinearly sample a 2 x H x W field at (x, y) positions."""
    coords = [xy[:, 1], xy[:, 0]]
    return np.stack(
        [ndimage.map_coordinates(field[c], coords, order=1, mode="nearest") for c in range(2)], axis=1
    )


def _auto_range(spans: np.ndarray) -> float:
    if spans.size == 0:
        return AUTO_RANGE_CLAMP[0]
    lo, hi = AUTO_RANGE_CLAMP
    return float(np.clip(2.0 * np.median(spans), lo, hi))


def _canonical(landmarks: Sequence[Landmark]) -> list[Landmark]:
    return sorted(landmarks, key=lambda lm: (lm.kind, lm.position[1], lm.position[0], -lm.score))


def group_slice(
    landmarks: Sequence[Landmark],
    fields: np.ndarray,
    cfg: DetectConfig = DetectConfig(),
    slice_index: int | None = None,
) -> list[Quadrilateral]:
    """Assign corners to centroids and emit one quadrilateral per complete group.

    Each centroid claims, per corner type, the in-range corner whose predicted
    centroid lies nearest to it. A corner claimed twice stays with the
    centroid it points closest to; the losers re-select among the corners
    left unclaimed. Centroids still missing a corner type are discarded.
    """
    fields = np.asarray(fields, dtype=float)
    landmarks = _canonical(landmarks)
    centroids = [lm for lm in landmarks if lm.kind is LandmarkKind.CENTROID]
    if slice_index is None:
        slice_index = landmarks[0].slice if landmarks else 0
    if not centroids:
        return []
    cxy = np.array([c.position for c in centroids])

    corners_by_kind: dict[LandmarkKind, tuple[np.ndarray, np.ndarray]] = {}
    all_spans = []
    for kind in CORNER_KINDS:
        pts = np.array([lm.position for lm in landmarks if lm.kind is kind], dtype=float).reshape(-1, 2)
        vec = _sample_field(fields[kind], pts) if len(pts) else np.zeros((0, 2))
        predicted = pts - cfg.field_sign * vec
        corners_by_kind[kind] = (pts, predicted)
        all_spans.append(np.hypot(*(pts - predicted).T) if len(pts) else np.zeros(0))
    max_range = _auto_range(np.concatenate(all_spans)) if cfg.max_range == "auto" else float(cfg.max_range)

    chosen = {kind: _assign(cxy, *corners_by_kind[kind], max_range) for kind in CORNER_KINDS}
    quads = []
    for i in range(len(centroids)):
        if any(chosen[kind][i] < 0 for kind in CORNER_KINDS):
            continue
        pts = np.array([corners_by_kind[kind][0][chosen[kind][i]] for kind in QUAD_ORDER])
        quad = Quadrilateral(pts, slice_index)
        if not (is_convex(pts) and quad.is_upright()):
            log.debug("slice %d: dropping malformed quadrilateral %s", slice_index, quad)
            continue
        quads.append(quad)
    return quads


def _assign(centroids: np.ndarray, positions: np.ndarray, predicted: np.ndarray, max_range: float) -> np.ndarray:
    """Corner index chosen by each centroid for one corner type (-1: none)."""
    n_c, n_k = len(centroids), len(positions)
    result = np.full(n_c, -1)
    if n_k == 0:
        return result
    reach = np.hypot(*(centroids[:, None, :] - positions[None, :, :]).transpose(2, 0, 1))
    pointing = np.hypot(*(centroids[:, None, :] - predicted[None, :, :]).transpose(2, 0, 1))
    allowed = reach <= max_range
    cost = np.where(allowed, pointing, np.inf)

    # first pass: everyone claims their best corner, conflicts go to the closest pointer
    first = np.argmin(cost, axis=1)
    claims: dict[int, list[int]] = {}
    for i in range(n_c):
        if np.isfinite(cost[i, first[i]]):
            claims.setdefault(int(first[i]), []).append(i)
    losers = []
    for k, claimants in claims.items():
        winner = min(claimants, key=lambda i: (cost[i, k], i))
        result[winner] = k
        losers.extend(i for i in claimants if i != winner)

    # second pass: losers pick among unclaimed corners, closest pointers first
    taken = set(claims)
    options = sorted(
        (cost[i, k], i, k) for i in losers for k in range(n_k) if k not in taken and np.isfinite(cost[i, k])
    )
    for _, i, k in options:
        if result[i] < 0 and k not in taken:
            result[i] = k
            taken.add(k)
    return result


def group_slices(per_slice: Mapping[int, Sequence[Quadrilateral]], iou_threshold: float = SLICE_IOU_THRESHOLD) -> list[VertebraVolume]:
    """Chain quadrilaterals across adjacent slices into vertebra volumes."""
    chains: list[dict[int, Quadrilateral]] = []
    open_chains: list[int] = []  # chains whose last slice is the previous slice
    prev_slice = None
    for s in sorted(per_slice):
        quads = sorted(per_slice[s], key=lambda q: (q.centroid[1], q.centroid[0]))
        active = open_chains if prev_slice == s - 1 else []
        pairs = []
        for qi, q in enumerate(quads):
            lo, hi = q.corners.min(axis=0), q.corners.max(axis=0)
            for ci in active:
                other = chains[ci][s - 1].corners
                if np.any(lo > other.max(axis=0)) or np.any(hi < other.min(axis=0)):
                    continue
                iou = polygon_iou(q, chains[ci][s - 1])
                if iou > iou_threshold:
                    pairs.append((-iou, qi, ci))
        pairs.sort()
        used_q, used_c = set(), set()
        assigned = {}
        for _, qi, ci in pairs:
            if qi in used_q or ci in used_c:
                continue
            assigned[qi] = ci
            used_q.add(qi)
            used_c.add(ci)
        open_chains = []
        for qi, q in enumerate(quads):
            if qi in assigned:
                ci = assigned[qi]
            else:
                chains.append({})
                ci = len(chains) - 1
            chains[ci][s] = q
            open_chains.append(ci)
        prev_slice = s

    volumes = [VertebraVolume(0, chain) for chain in chains]
    volumes.sort(key=lambda v: (v.centroid3d[1], v.centroid3d[0], v.centroid3d[2]))
    return [VertebraVolume(i, v.quads) for i, v in enumerate(volumes)]


def _score_volumes(volumes: list[VertebraVolume], landmarks: Mapping[int, list[Landmark]]) -> list[VertebraVolume]:
    """Volume score: mean peak response of the centroid landmarks inside it."""
    scored = []
    for v in volumes:
        peaks = []
        for s, q in v.quads.items():
            cents = [lm for lm in landmarks.get(s, []) if lm.kind is LandmarkKind.CENTROID]
            if cents:
                d = [np.hypot(*(lm.xy - q.centroid)) for lm in cents]
                peaks.append(cents[int(np.argmin(d))].score)
        scored.append(VertebraVolume(v.id, v.quads, float(np.mean(peaks)) if peaks else 1.0))
    return scored


def detect_slice(
    heatmaps: np.ndarray, fields: np.ndarray, cfg: DetectConfig = DetectConfig(), slice_index: int = 0
) -> tuple[list[Landmark], list[Quadrilateral]]:
    landmarks = extract_landmarks(heatmaps, cfg, slice_index)
    return landmarks, group_slice(landmarks, fields, cfg, slice_index)


def detect_scan(
    heatmaps: HeatmapStack | np.ndarray | Mapping[str, np.ndarray],
    fields: VectorFieldStack | np.ndarray | None = None,
    cfg: DetectConfig = DetectConfig(),
) -> list[VertebraVolume]:
    """Run all three detection stages over a scan.

    Accepts the two stacks, or a bundle mapping with ``heatmaps`` and
    ``fields`` arrays. Slices may be processed by several threads; the
    result does not depend on the thread count.
    """
    if isinstance(heatmaps, Mapping):
        fields = heatmaps["fields"]
        heatmaps = heatmaps["heatmaps"]
    heat = heatmaps if isinstance(heatmaps, HeatmapStack) else HeatmapStack(np.asarray(heatmaps))
    if fields is None:
        raise ValueError("grouping fields are required")
    fld = fields if isinstance(fields, VectorFieldStack) else VectorFieldStack(np.asarray(fields))
    fld.check_companion(heat)

    def run(s: int):
        return detect_slice(heat.data[s], fld.data[s], cfg, s)

    n_slices = heat.shape[0]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, range(n_slices)))
    else:
        results = [run(s) for s in range(n_slices)]
    landmarks = {s: r[0] for s, r in enumerate(results)}
    per_slice = {s: r[1] for s, r in enumerate(results) if r[1]}
    volumes = group_slices(per_slice, cfg.iou_threshold)
    return _score_volumes(volumes, landmarks)
