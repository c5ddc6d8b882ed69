"""Level labelling: volume boxes, the probability-height map and beam decoding.

Levels run top-down C2..C7, T1..T12, L1..L5, S1 (24 classes). A 25th token,
L6, only appears in decoded sequences for spines with a sixth lumbar
vertebra. The decoder orders tokens as C2..L5, L6, S1 ("extended" indices).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core.types import VertebraVolume

LEVELS: tuple[str, ...] = (
    tuple(f"C{i}" for i in range(2, 8))
    + tuple(f"T{i}" for i in range(1, 13))
    + tuple(f"L{i}" for i in range(1, 6))
    + ("S1",)
)
N_LEVELS = len(LEVELS)
LEVEL_INDEX = {name: i for i, name in enumerate(LEVELS)}

L5 = LEVEL_INDEX["L5"]
S1 = LEVEL_INDEX["S1"]
LUMBAR = range(LEVEL_INDEX["L1"], L5 + 1)

# extended ordering used by the decoder
TOKENS: tuple[str, ...] = LEVELS[:S1] + ("L6", "S1")
TOKEN_INDEX = {name: i for i, name in enumerate(TOKENS)}
L6_TOKEN = TOKEN_INDEX["L6"]
S1_TOKEN = TOKEN_INDEX["S1"]

APPEARANCE_SHAPE = (224, 224, 16)


def level_index(name: str) -> int:
    """Canonical 0..23 index; L6 maps onto L5, whose output it borrows."""
    if name == "L6":
        return L5
    return LEVEL_INDEX[name]


def token_index(name: str) -> int:
    return TOKEN_INDEX[name]


def _std(token: int) -> int:
    """Canonical level index of a non-L6 token."""
    return S1 if token == S1_TOKEN else token


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 5
    skip_penalty: float = 0.1
    lumbar_penalty: float = 0.2
    temperature: float = 10.0
    prob_floor: float = 1e-12

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")
        for name in ("skip_penalty", "lumbar_penalty"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class VolumeBox:
    x0: float
    x1: float
    y0: float
    y1: float
    slice0: int
    slice1: int
    resample_shape: tuple[int, int, int] = APPEARANCE_SHAPE


def extract_volume_box(volume: VertebraVolume, scan_shape: tuple[int, int, int]) -> VolumeBox:
    """Bounding box of a volume, doubled in-plane about its centre and clamped."""
    _, h, w = scan_shape
    pts = np.concatenate([q.corners for q in volume.quads.values()])
    (x0, y0), (x1, y1) = pts.min(axis=0), pts.max(axis=0)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise ValueError(f"volume {volume.id} has a degenerate bounding box")
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    hw, hh = x1 - x0, y1 - y0
    return VolumeBox(
        x0=float(max(cx - hw, 0.0)),
        x1=float(min(cx + hw, w)),
        y0=float(max(cy - hh, 0.0)),
        y1=float(min(cy + hh, h)),
        slice0=min(volume.slices),
        slice1=max(volume.slices),
    )


def softmax_temperature(logits: Sequence[float], temperature: float = 10.0) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def volume_span_rows(volume: VertebraVolume) -> tuple[int, int]:
    lo, hi = volume.height_span
    return int(round(lo)), int(round(hi))


def build_phm(volumes: Sequence[VertebraVolume], probs: np.ndarray, height: int) -> np.ndarray:
    """Probability-height map: each volume's vector fills the rows it spans.

    Where spans overlap, a row keeps the vector of the highest-scoring
    volume claiming it (ties broken by volume id).
    """
    probs = np.asarray(probs, dtype=float).reshape(len(volumes), N_LEVELS) if len(volumes) else np.zeros((0, N_LEVELS))
    phm = np.zeros((height, N_LEVELS))
    claimed = np.zeros(height, dtype=bool)
    order = sorted(range(len(volumes)), key=lambda i: (-volumes[i].score, volumes[i].id))
    for i in order:
        h1, h2 = volume_span_rows(volumes[i])
        if h1 < 0 or h2 >= height or h1 > h2:
            raise ValueError(f"volume {volumes[i].id} spans rows {h1}..{h2} outside a {height}-row image")
        rows = np.arange(h1, h2 + 1)
        rows = rows[~claimed[rows]]
        phm[rows] = probs[i]
        claimed[rows] = True
    return phm


@dataclass
class LabelSequence:
    ids: list[int]
    tokens: list[str]
    log_score: float
    skips: int = 0
    variant: str | None = None  # "+1" (L6 inserted), "-1" (one lumbar level absent)

    @property
    def token_indices(self) -> list[int]:
        return [TOKEN_INDEX[t] for t in self.tokens]

    def as_dict(self) -> dict[int, str]:
        return dict(zip(self.ids, self.tokens))


@dataclass(order=False)
class _Hyp:
    tokens: tuple[int, ...]
    score: float
    variant: str | None
    skips: int

    @property
    def key(self):
        return (-self.score, self.tokens)


def _capacity(last: int, variant: str | None) -> int:
    """How many more tokens can follow ``last`` in a valid sequence."""
    if last == L6_TOKEN:
        return 1
    remaining = S1 - _std(last)
    if variant is None and last < L6_TOKEN:
        remaining += 1
    return remaining


def _expansions(hyp: _Hyp | None, log_probs: np.ndarray, log_gamma: float, log_lambda: float):
    """Yield (token, added score, new variant, added skips) from ``hyp``."""
    variant = hyp.variant if hyp else None
    last = hyp.tokens[-1] if hyp else None
    for tok in range(len(TOKENS)):
        if last is not None and tok <= last:
            continue
        if tok == L6_TOKEN:
            if variant is not None:
                continue
            skipped = 0 if last is None else L6_TOKEN - last - 1
            yield tok, log_probs[L5] + log_lambda + skipped * log_gamma, "+1", skipped
            continue
        base = log_probs[_std(tok)]
        if last is None or last == L6_TOKEN:
            yield tok, base, variant, 0
            continue
        a, b = _std(last), _std(tok)
        skipped = b - a - 1
        yield tok, base + skipped * log_gamma, variant, skipped
        lumbar_skipped = sum(1 for lv in range(a + 1, b) if lv in LUMBAR)
        if variant is None and lumbar_skipped:
            yield tok, base + (skipped - 1) * log_gamma + log_lambda, "-1", skipped - 1


def beam_decode(
    probs: np.ndarray,
    cfg: BeamConfig = BeamConfig(),
    ids: Sequence[int] | None = None,
) -> LabelSequence:
    """Assign levels to vertebrae ordered top-down under ordering constraints.

    Levels must strictly increase down the spine. Every skipped level costs a
    factor ``skip_penalty``; a sixth lumbar vertebra (L6, scored with the
    vertebra's L5 probability) or one missing lumbar level costs a single
    ``lumbar_penalty`` instead. Partial hypotheses with identical last token
    and variant state are recombined, keeping the better one.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] != N_LEVELS:
        raise ValueError(f"expected an (n, {N_LEVELS}) probability array, got {probs.shape}")
    n = len(probs)
    if n == 0:
        raise ValueError("nothing to decode")
    if n > len(TOKENS):
        raise ValueError(f"{n} vertebrae cannot be labelled with {len(TOKENS)} levels")
    ids = list(range(n)) if ids is None else list(ids)
    log_probs = np.log(np.maximum(probs, cfg.prob_floor))
    log_gamma = math.log(cfg.skip_penalty)
    log_lambda = math.log(cfg.lumbar_penalty)

    beam: list[_Hyp | None] = [None]
    for step in range(n):
        remaining = n - step - 1
        best: dict[tuple[int, str | None], _Hyp] = {}
        for hyp in beam:
            for tok, gain, variant, skipped in _expansions(hyp, log_probs[step], log_gamma, log_lambda):
                if _capacity(tok, variant) < remaining:
                    continue
                cand = _Hyp(
                    tokens=(hyp.tokens if hyp else ()) + (tok,),
                    score=(hyp.score if hyp else 0.0) + gain,
                    variant=variant,
                    skips=(hyp.skips if hyp else 0) + skipped,
                )
                state = (tok, variant)
                if state not in best or cand.key < best[state].key:
                    best[state] = cand
        beam = sorted(best.values(), key=lambda h: h.key)[: cfg.beam_width]
        if not beam:
            raise ValueError(f"no valid labelling for {n} vertebrae")

    top = beam[0]
    return LabelSequence(
        ids=ids,
        tokens=[TOKENS[t] for t in top.tokens],
        log_score=top.score,
        skips=top.skips,
        variant=top.variant,
    )


def argmax_labels(probs: np.ndarray, ids: Sequence[int] | None = None) -> LabelSequence:
    """Unconstrained per-vertebra argmax (the naive baseline)."""
    probs = np.asarray(probs, dtype=float)
    ids = list(range(len(probs))) if ids is None else list(ids)
    best = probs.argmax(axis=1) if len(probs) else np.zeros(0, dtype=int)
    score = float(np.log(np.maximum(probs[np.arange(len(probs)), best], 1e-300)).sum()) if len(probs) else 0.0
    return LabelSequence(ids=ids, tokens=[LEVELS[i] for i in best], log_score=score)


def order_top_down(volumes: Sequence[VertebraVolume]) -> list[int]:
    return sorted(range(len(volumes)), key=lambda i: (volumes[i].centroid3d[1], volumes[i].id))


def probs_at_centroids(phm: np.ndarray, volumes: Sequence[VertebraVolume]) -> np.ndarray:
    """Read each volume's probability vector from the map at its centroid height."""
    h = phm.shape[0]
    out = np.zeros((len(volumes), N_LEVELS))
    for i, v in enumerate(volumes):
        row = int(np.clip(round(v.centroid3d[1]), 0, h - 1))
        vec = phm[row]
        total = vec.sum()
        out[i] = vec / total if total > 0 else np.full(N_LEVELS, 1.0 / N_LEVELS)
    return out


@dataclass
class LabelResult:
    phm: np.ndarray
    labels: LabelSequence
    baseline: LabelSequence = field(repr=False, default=None)


def label_scan(
    volumes: Sequence[VertebraVolume],
    probs: np.ndarray,
    height: int,
    cfg: BeamConfig = BeamConfig(),
    refine: Callable[[np.ndarray], np.ndarray] | None = None,
) -> LabelResult:
    """Map -> optional refinement -> per-volume read-out -> constrained decode.

    ``refine`` stands in for a trained context network; identity by default.
    """
    phm = build_phm(volumes, probs, height)
    if refine is not None:
        phm = np.asarray(refine(phm), dtype=float)
        if phm.shape != (height, N_LEVELS):
            raise ValueError(f"refined map has shape {phm.shape}")
    order = order_top_down(volumes)
    ordered = [volumes[i] for i in order]
    per_volume = probs_at_centroids(phm, ordered)
    ids = [v.id for v in ordered]
    if not ordered:
        empty = LabelSequence(ids=[], tokens=[], log_score=0.0)
        return LabelResult(phm, empty, empty)
    return LabelResult(phm, beam_decode(per_volume, cfg, ids), argmax_labels(per_volume, ids))


def labels_to_dict(labels: LabelSequence) -> dict:
    return {
        "labels": [{"id": i, "level": t} for i, t in zip(labels.ids, labels.tokens)],
        "log_score": labels.log_score,
        "skips": labels.skips,
        "variant": labels.variant,
    }


def labels_from_dict(doc: dict) -> LabelSequence:
    entries = doc.get("labels", [])
    return LabelSequence(
        ids=[int(e["id"]) for e in entries],
        tokens=[str(e["level"]) for e in entries],
        log_score=float(doc.get("log_score", 0.0)),
        skips=int(doc.get("skips", 0)),
        variant=doc.get("variant"),
    )
