"""Synthetic spine phantoms with exact ground truth.

A phantom is a stack of sagittal slices through a column of quadrilateral
vertebral bodies. The column follows a smooth sagittal curve (lordosis and
kyphosis) and, laterally, a single sinusoid whose amplitude controls the
degree of scoliosis. Each vertebra appears in the slices within a fixed
lateral half-width of its own lateral centre, shrinking towards its edges.

The appearance-network stand-in leaks probability mass to the levels next to
the true one. That adjacent-level confusion structure is an assumption; the
confusion of a real appearance network is not known.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .core.types import AnnotatedVertebra, AnnotationSet, HeatmapStack, VectorFieldStack
from .label import LEVELS, N_LEVELS, level_index
from .targets import render_annotation

# augmentation regime used when training the labelling networks
TRAINING_DROP_MAX = 4
TRAINING_DROP_PROB = 0.2

MIN_PITCH_PX = 8.0
LATERAL_SHRINK = 0.3
COLLAPSED_HEIGHT = 0.3
HEMI_SIDE_HEIGHT = 0.5


class InfeasibleSpecError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (16, 512, 128)  # slices, rows, cols
    n_vertebrae: int = 24
    pixel_spacing_mm: tuple[float, float] = (0.5, 0.5)
    slice_spacing_px: float = 4.0
    margin_px: float = 24.0
    # vertebral body size relative to the per-vertebra pitch
    height_fraction: tuple[float, float] = (0.62, 0.72)
    aspect: tuple[float, float] = (1.3, 1.7)
    sagittal_control: tuple[float, ...] = (0.0, 8.0, -6.0, 6.0, 0.0)
    sagittal_jitter: float = 3.0
    lateral_amplitude: float = 0.0
    lateral_wavelength: float | None = None  # default: spine length
    lateral_phase: float | None = None  # default: random
    lateral_halfwidth_px: float = 12.0
    noise_sigma: float = 0.0
    confusion: float = 0.0
    drop_top: int = 0
    drop_bottom: int = 0
    random_drop_max: int = 0  # extra top/bottom drops drawn from 0..max
    drop_prob: float = 0.0
    fused: bool = False
    collapsed: bool = False
    hemivertebra: bool = False
    c_var: float = 1.0
    nbhd_radius_factor: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValueError(f"invalid image shape {self.shape}")
        if not 1 <= self.n_vertebrae <= N_LEVELS + 1:
            raise ValueError(f"vertebra count must be 1..{N_LEVELS + 1}, got {self.n_vertebrae}")
        if not 0 <= self.confusion < 0.5:
            raise ValueError("confusion must lie in [0, 0.5)")
        if self.lateral_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("amplitudes and noise must be non-negative")
        if min(self.drop_top, self.drop_bottom, self.random_drop_max) < 0 or not 0 <= self.drop_prob <= 1:
            raise ValueError("invalid drop specification")
        if min(self.pixel_spacing_mm) <= 0 or self.slice_spacing_px <= 0:
            raise ValueError("spacings must be positive")

    def with_training_drops(self) -> PhantomSpec:
        return replace(self, random_drop_max=TRAINING_DROP_MAX, drop_prob=TRAINING_DROP_PROB)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class PhantomTruth:
    spec: PhantomSpec
    annotations: AnnotationSet
    heatmaps: HeatmapStack
    fields: VectorFieldStack
    masks: np.ndarray
    appearance: np.ndarray  # V x 24
    lateral_centres: np.ndarray  # px, per vertebra
    pathologies: dict[str, list[int]] = field(default_factory=dict)

    @property
    def levels(self) -> list[str]:
        return self.annotations.levels


@dataclass(eq=False)
class CorruptedScan:
    heatmaps: HeatmapStack
    fields: VectorFieldStack
    appearance: np.ndarray
    dropped: list[int]


def level_names(n: int) -> list[str]:
    """Levels for an n-vertebra column ending at S1."""
    if n == N_LEVELS + 1:
        return list(LEVELS[:-1]) + ["L6", "S1"]
    if n == N_LEVELS - 1:
        return [lv for lv in LEVELS if lv != "L5"]
    return list(LEVELS[N_LEVELS - n :])


def appearance_vector(level: str, confusion: float) -> np.ndarray:
    """(1 - 2e) on the level, e on each neighbour, renormalised at the ends."""
    idx = level_index(level)
    vec = np.zeros(N_LEVELS)
    vec[idx] = 1.0 - 2.0 * confusion
    for nb in (idx - 1, idx + 1):
        if 0 <= nb < N_LEVELS:
            vec[nb] = confusion
    return vec / vec.sum()


def _box_corners(centre: np.ndarray, height: float, width: float, slope: float) -> np.ndarray:
    """Rectangle corners TL, TR, BR, BL tilted to follow the spine tangent."""
    norm = np.hypot(slope, 1.0)
    down = np.array([slope, 1.0]) / norm
    across = np.array([1.0, -slope]) / norm
    hh, hw = height / 2, width / 2
    return np.array(
        [
            centre - across * hw - down * hh,
            centre + across * hw - down * hh,
            centre + across * hw + down * hh,
            centre - across * hw + down * hh,
        ]
    )


def _sagittal_geometry(spec: PhantomSpec, rng: np.random.Generator):
    s, h, w = spec.shape
    n = spec.n_vertebrae
    top, bottom = spec.margin_px, h - spec.margin_px
    length = bottom - top
    pitch = length / n if length > 0 else 0.0
    if pitch < MIN_PITCH_PX:
        raise InfeasibleSpecError(
            f"{n} vertebrae need at least {n * MIN_PITCH_PX + 2 * spec.margin_px:.0f} rows, image has {h}"
        )
    control = np.asarray(spec.sagittal_control, dtype=float)
    control = control + rng.uniform(-spec.sagittal_jitter, spec.sagittal_jitter, len(control))
    knots = np.linspace(top, bottom, len(control))
    curve = CubicSpline(knots, control, bc_type="natural")

    centres_y = top + (np.arange(n) + 0.5) * pitch
    heights = pitch * rng.uniform(*spec.height_fraction, n)
    widths = heights * rng.uniform(*spec.aspect, n)
    if widths.max() + 2 * (np.abs(control).max() + 2) > w:
        raise InfeasibleSpecError(f"vertebrae of width {widths.max():.0f}px do not fit {w} columns")
    quads = []
    for y, hv, wv in zip(centres_y, heights, widths):
        centre = np.array([w / 2 + curve(y), y])
        quads.append(_box_corners(centre, hv, wv, float(curve(y, 1))))
    return quads, centres_y, top, length


def _apply_pathologies(spec: PhantomSpec, quads: list[np.ndarray], rng: np.random.Generator) -> dict:
    n = len(quads)
    chosen: dict[str, list[int]] = {}
    free = list(range(1, n - 1)) if n > 2 else []
    rng.shuffle(free)

    if spec.fused and n >= 2:
        i = free.pop() if free else 0
        i = min(i, n - 2)
        upper, lower = quads[i], quads[i + 1]
        # shared edge half-way across the disc
        left = (upper[3] + lower[0]) / 2
        right = (upper[2] + lower[1]) / 2
        upper[3], upper[2] = left, right
        lower[0], lower[1] = left, right
        chosen["fused"] = [i, i + 1]
        free = [j for j in free if j not in (i, i + 1)]
    if spec.collapsed and free:
        i = free.pop()
        q = quads[i]
        c = q.mean(axis=0)
        top_mid, bot_mid = (q[0] + q[1]) / 2, (q[2] + q[3]) / 2
        shrink = (1 - COLLAPSED_HEIGHT) / 2
        q[0:2] += (bot_mid - top_mid) * shrink
        q[2:4] -= (bot_mid - top_mid) * shrink
        assert np.allclose(q.mean(axis=0), c)
        chosen["collapsed"] = [i]
    if spec.hemivertebra and free:
        i = free.pop()
        q = quads[i]
        shrink = (1 - HEMI_SIDE_HEIGHT) / 2
        side = (q[2] - q[1]) * shrink  # right-hand (TR-BR) side becomes a wedge
        q[1] += side
        q[2] -= side
        chosen["hemivertebra"] = [i]
    return chosen


def generate(spec: PhantomSpec) -> PhantomTruth:
    """Build the phantom geometry, its annotations and ideal network outputs."""
    rng = np.random.default_rng(spec.seed)
    s, h, w = spec.shape
    levels = level_names(spec.n_vertebrae)
    quads, centres_y, top, length = _sagittal_geometry(spec, rng)
    pathologies = _apply_pathologies(spec, quads, rng)

    wavelength = spec.lateral_wavelength or length
    phase = rng.uniform(0, 2 * np.pi) if spec.lateral_phase is None else spec.lateral_phase
    mid = (s - 1) / 2 * spec.slice_spacing_px
    lateral = mid + spec.lateral_amplitude * np.sin(2 * np.pi * (centres_y - top) / wavelength + phase)

    slice_pos = np.arange(s) * spec.slice_spacing_px
    vertebrae = []
    for level, corners, lat in zip(levels, quads, lateral):
        offsets = slice_pos - lat
        present = np.flatnonzero(np.abs(offsets) <= spec.lateral_halfwidth_px)
        if present.size == 0:
            present = np.array([int(np.argmin(np.abs(offsets)))])
        centre = corners.mean(axis=0)
        per_slice = {}
        for k in present:
            scale = 1.0 - LATERAL_SHRINK * min((offsets[k] / spec.lateral_halfwidth_px) ** 2, 1.0)
            per_slice[int(k)] = centre + scale * (corners - centre)
        mid_slice = int(present[np.argmin(np.abs(offsets[present]))])
        vertebrae.append(AnnotatedVertebra(level, per_slice, mid_slice))

    ann = AnnotationSet(vertebrae, spec.pixel_spacing_mm, spec.slice_spacing_px)
    heat, fields, masks = render_annotation(ann, spec.shape, spec.c_var, spec.nbhd_radius_factor)
    appearance = np.array([appearance_vector(lv, spec.confusion) for lv in levels])
    return PhantomTruth(spec, ann, heat, fields, masks, appearance, lateral, pathologies)


def choose_drops(spec: PhantomSpec, n: int, rng: np.random.Generator) -> list[int]:
    top = spec.drop_top
    bottom = spec.drop_bottom
    if spec.random_drop_max:
        top += int(rng.integers(0, spec.random_drop_max + 1))
        bottom += int(rng.integers(0, spec.random_drop_max + 1))
    dropped = set(range(min(top, n))) | set(range(max(n - bottom, 0), n))
    if spec.drop_prob > 0:
        for i in range(n):
            if i not in dropped and rng.random() < spec.drop_prob:
                dropped.add(i)
    return sorted(dropped)


def corrupt(truth: PhantomTruth, spec: PhantomSpec | None = None) -> CorruptedScan:
    """Apply drops, map noise and appearance confusion; deterministic in the seed.

    Dropped vertebrae keep their annotations but vanish from the heatmaps.
    Confusion moves each vertebra's appearance vector, with probability
    ``confusion`` each way, onto the template of a neighbouring level.
    """
    spec = spec or truth.spec
    rng = np.random.default_rng([spec.seed, 1])
    n = len(truth.annotations)
    dropped = choose_drops(spec, n, rng)

    if dropped:
        heat, fields, _ = render_annotation(
            truth.annotations, spec.shape, spec.c_var, spec.nbhd_radius_factor, exclude=dropped
        )
        heat_data, field_data = heat.data.copy(), fields.data.copy()
    else:
        heat_data, field_data = truth.heatmaps.data.copy(), truth.fields.data.copy()

    if spec.noise_sigma > 0:
        heat_data += rng.normal(0.0, spec.noise_sigma, heat_data.shape).astype(heat_data.dtype)
        np.maximum(heat_data, 0, out=heat_data)
        field_data += rng.normal(0.0, spec.noise_sigma, field_data.shape).astype(field_data.dtype)

    appearance = truth.appearance.copy()
    if spec.confusion > 0:
        for i, level in enumerate(truth.levels):
            idx = level_index(level)
            u = rng.random()
            shift = -1 if u < spec.confusion else 1 if u < 2 * spec.confusion else 0
            seen = int(np.clip(idx + shift, 0, N_LEVELS - 1))
            appearance[i] = appearance_vector(LEVELS[seen], spec.confusion)

    return CorruptedScan(
        HeatmapStack(heat_data, truth.heatmaps.pixel_spacing_mm),
        VectorFieldStack(field_data),
        appearance,
        dropped,
    )
