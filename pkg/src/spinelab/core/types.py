"""Domain types shared across the detection and labelling pipeline.

Image coordinates follow the usual raster convention: ``x`` is the column,
``y`` is the row and increases downward, so the top of the spine has the
smallest ``y``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class LandmarkKind(enum.IntEnum):
    """Landmark types; the integer value is the heatmap channel index."""

    TOP_LEFT = 0
    TOP_RIGHT = 1
    BOTTOM_LEFT = 2
    BOTTOM_RIGHT = 3
    CENTROID = 4

    @property
    def is_corner(self) -> bool:
        return self is not LandmarkKind.CENTROID


CORNER_KINDS = (
    LandmarkKind.TOP_LEFT,
    LandmarkKind.TOP_RIGHT,
    LandmarkKind.BOTTOM_LEFT,
    LandmarkKind.BOTTOM_RIGHT,
)

# Quadrilateral corners are stored TL, TR, BR, BL (polygon order); the
# heatmap/field channels follow LandmarkKind order (TL, TR, BL, BR).
QUAD_ORDER = (
    LandmarkKind.TOP_LEFT,
    LandmarkKind.TOP_RIGHT,
    LandmarkKind.BOTTOM_RIGHT,
    LandmarkKind.BOTTOM_LEFT,
)


def quad_index(kind: LandmarkKind) -> int:
    """Row of ``kind`` inside a (4, 2) quadrilateral corner array."""
    return QUAD_ORDER.index(kind)


@dataclass(frozen=True)
class Landmark:
    kind: LandmarkKind
    position: tuple[float, float]  # (x, y)
    slice: int
    score: float

    def __post_init__(self) -> None:
        if not self.score >= 0:
            raise ValueError(f"landmark score must be >= 0, got {self.score}")

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True, eq=False)
class Quadrilateral:
    """Per-slice vertebral body outline, corners ordered TL, TR, BR, BL."""

    corners: np.ndarray
    slice: int = 0

    def __post_init__(self) -> None:
        corners = np.array(self.corners, dtype=float).reshape(4, 2)
        if not np.all(np.isfinite(corners)):
            raise ValueError("quadrilateral corners must be finite")
        corners.setflags(write=False)
        object.__setattr__(self, "corners", corners)

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)

    @property
    def area(self) -> float:
        x, y = self.corners[:, 0], self.corners[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def is_upright(self) -> bool:
        """Top corners lie above (smaller y than) the bottom corners."""
        return self.corners[:2, 1].mean() < self.corners[2:, 1].mean()

    def translated(self, dx: float, dy: float) -> Quadrilateral:
        return Quadrilateral(self.corners + np.array([dx, dy]), self.slice)

    def __repr__(self) -> str:
        pts = ", ".join(f"({x:.1f}, {y:.1f})" for x, y in self.corners)
        return f"Quadrilateral(slice={self.slice}, [{pts}])"


@dataclass(frozen=True, eq=False)
class VertebraVolume:
    """One detected vertebra: quadrilaterals over a contiguous slice range."""

    id: int
    quads: Mapping[int, Quadrilateral]
    score: float = 1.0

    def __post_init__(self) -> None:
        if not self.quads:
            raise ValueError("a vertebra volume needs at least one quadrilateral")
        slices = sorted(self.quads)
        if slices != list(range(slices[0], slices[-1] + 1)):
            raise ValueError(f"slice range is not contiguous: {slices}")
        object.__setattr__(self, "quads", {s: self.quads[s] for s in slices})

    @property
    def slices(self) -> list[int]:
        return list(self.quads)

    @property
    def centroid3d(self) -> tuple[float, float, float]:
        """(x, y, slice): mean of the per-slice quadrilateral centroids."""
        c = np.mean([q.centroid for q in self.quads.values()], axis=0)
        return float(c[0]), float(c[1]), float(np.mean(self.slices))

    @property
    def height_span(self) -> tuple[float, float]:
        ys = np.concatenate([q.corners[:, 1] for q in self.quads.values()])
        return float(ys.min()), float(ys.max())

    def lateral_position(self, slice_spacing: float = 1.0) -> float:
        """Area-weighted mean slice position, scaled by the slice spacing."""
        areas = np.array([q.area for q in self.quads.values()])
        slices = np.array(self.slices, dtype=float)
        if areas.sum() <= 0:
            return float(slices.mean() * slice_spacing)
        return float(np.dot(areas, slices) / areas.sum() * slice_spacing)

    def quad_nearest(self, slice_index: int) -> Quadrilateral:
        """Quadrilateral at ``slice_index`` or, failing that, the nearest slice."""
        if slice_index in self.quads:
            return self.quads[slice_index]
        nearest = min(self.quads, key=lambda s: (abs(s - slice_index), s))
        return self.quads[nearest]


@dataclass(frozen=True, eq=False)
class HeatmapStack:
    """S x 5 x H x W landmark detection responses."""

    data: np.ndarray
    pixel_spacing_mm: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[1] != len(LandmarkKind):
            raise ValueError(f"heatmaps must be S x 5 x H x W, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("heatmaps contain non-finite values")
        if np.any(data < 0):
            raise ValueError("heatmaps must be non-negative")
        if min(self.pixel_spacing_mm) <= 0:
            raise ValueError("pixel spacing must be positive")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        s, _, h, w = self.data.shape
        return s, h, w


@dataclass(frozen=True, eq=False)
class VectorFieldStack:
    """S x 4 x 2 x H x W corner grouping fields (x, y components, pixels)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 5 or data.shape[1:3] != (4, 2):
            raise ValueError(f"fields must be S x 4 x 2 x H x W, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("fields contain non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        s, _, _, h, w = self.data.shape
        return s, h, w

    def check_companion(self, heatmaps: HeatmapStack) -> None:
        if self.shape != heatmaps.shape:
            raise ValueError(
                f"field stack {self.shape} does not match heatmap stack {heatmaps.shape}"
            )


@dataclass(eq=False)
class AnnotatedVertebra:
    level: str
    quads: dict[int, np.ndarray]  # slice -> (4, 2) corners, TL TR BR BL
    mid_slice: int

    def __post_init__(self) -> None:
        self.quads = {
            int(s): np.array(c, dtype=float).reshape(4, 2) for s, c in sorted(self.quads.items())
        }
        if self.mid_slice not in self.quads:
            raise ValueError(f"mid slice {self.mid_slice} has no annotation")

    @property
    def centroid(self) -> np.ndarray:
        """Centroid (x, y) of the annotated mid-slice quadrilateral."""
        return self.quads[self.mid_slice].mean(axis=0)

    def quadrilateral(self, slice_index: int | None = None) -> Quadrilateral:
        s = self.mid_slice if slice_index is None else slice_index
        return Quadrilateral(self.quads[s], s)


@dataclass(eq=False)
class AnnotationSet:
    vertebrae: list[AnnotatedVertebra] = field(default_factory=list)
    pixel_spacing_mm: tuple[float, float] = (1.0, 1.0)
    slice_spacing_px: float = 1.0

    def __len__(self) -> int:
        return len(self.vertebrae)

    @property
    def levels(self) -> list[str]:
        return [v.level for v in self.vertebrae]

    def quads_in_slice(self, slice_index: int) -> list[np.ndarray]:
        return [v.quads[slice_index] for v in self.vertebrae if slice_index in v.quads]
