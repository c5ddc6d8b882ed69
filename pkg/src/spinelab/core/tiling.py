"""Split tall scans into overlapping square tiles and stitch them back."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

OVERLAP = 0.4
DEFAULT_TILE_SIZE = 224


@dataclass(frozen=True, eq=False)
class Tile:
    data: np.ndarray  # target x target
    row: int  # footprint origin in image coordinates (negative inside padding)
    col: int
    side: int  # footprint side length in image pixels

    @property
    def offset(self) -> tuple[int, int]:
        return self.row, self.col


def resize_bilinear(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize mapping corner pixel centres onto corner pixel centres."""
    image = np.asarray(image, dtype=float)
    h, w = image.shape
    oh, ow = shape
    if (h, w) == (oh, ow):
        return image.copy()
    rows = np.linspace(0.0, h - 1.0, oh) if oh > 1 else np.array([(h - 1) / 2.0])
    cols = np.linspace(0.0, w - 1.0, ow) if ow > 1 else np.array([(w - 1) / 2.0])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(image, [rr, cc], order=1, mode="nearest")


def _axis_offsets(length: int, side: int) -> list[int]:
    stride = side - int(round(OVERLAP * side))
    stride = max(stride, 1)
    offsets = [0]
    while offsets[-1] + side < length:
        offsets.append(min(offsets[-1] + stride, length - side))
    return offsets


def _pad_widths(h: int, w: int, target: int) -> tuple[int, int]:
    """Zero padding (rows, cols) added symmetrically to the short axis."""
    short, long_ = min(h, w), max(h, w)
    goal = min(target, long_)
    extra = max(goal - short, 0)
    return (extra, 0) if h < w else (0, extra) if w < h else (0, 0)


def tile_scan(image: np.ndarray, target: int = DEFAULT_TILE_SIZE) -> list[Tile]:
    """Cut ``image`` into squares overlapping by 40% along its long axis.

    The tile side is the (padded) short side of the image; each footprint is
    resized to ``target`` x ``target``.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or min(image.shape) < 1:
        raise ValueError(f"expected a non-empty 2-d image, got shape {image.shape}")
    h, w = image.shape
    pad_r, pad_c = _pad_widths(h, w, target)
    top, left = pad_r // 2, pad_c // 2
    padded = np.pad(image, ((top, pad_r - top), (left, pad_c - left)))
    ph, pw = padded.shape
    side = min(ph, pw)
    tiles = []
    for r in _axis_offsets(ph, side):
        for c in _axis_offsets(pw, side):
            patch = padded[r : r + side, c : c + side]
            tiles.append(Tile(resize_bilinear(patch, (target, target)), r - top, c - left, side))
    return tiles


def stitch_tiles(tiles: list[Tile], shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`tile_scan`; overlapping footprints are averaged."""
    h, w = shape
    if not tiles:
        raise ValueError("no tiles to stitch")
    for t in tiles:
        if t.row >= h or t.col >= w or t.row + t.side <= 0 or t.col + t.side <= 0:
            raise ValueError(f"tile at offset {t.offset} lies outside a {shape} image")
    min_r = min(0, *(t.row for t in tiles))
    min_c = min(0, *(t.col for t in tiles))
    max_r = max(h, *(t.row + t.side for t in tiles))
    max_c = max(w, *(t.col + t.side for t in tiles))
    acc = np.zeros((max_r - min_r, max_c - min_c))
    weight = np.zeros_like(acc)
    inside = np.zeros_like(acc)
    inside[-min_r : -min_r + h, -min_c : -min_c + w] = 1.0
    for t in tiles:
        r, c = t.row - min_r, t.col - min_c
        fp = (slice(r, r + t.side), slice(c, c + t.side))
        acc[fp] += resize_bilinear(t.data, (t.side, t.side))
        # the same up/down resampling applied to the in-image mask: padding
        # zeros leak into edge pixels identically, so dividing removes them
        target = t.data.shape
        weight[fp] += resize_bilinear(resize_bilinear(inside[fp], target), (t.side, t.side))
    r0, c0 = -min_r, -min_c
    acc, weight = acc[r0 : r0 + h, c0 : c0 + w], weight[r0 : r0 + h, c0 : c0 + w]
    if np.any(weight <= 0):
        raise ValueError("tiles do not cover the requested shape")
    return acc / weight
