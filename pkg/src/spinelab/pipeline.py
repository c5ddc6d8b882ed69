"""End-to-end phantom experiments: phantom -> corrupt -> detect -> label -> evaluate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core.types import AnnotationSet, VertebraVolume
from .detect import DetectConfig, detect_scan
from .evaluate import EvalReport, Matching, evaluate, match_detections
from .label import N_LEVELS, BeamConfig, LabelResult, label_scan
from .phantom import CorruptedScan, PhantomSpec, PhantomTruth, corrupt, generate


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def appearance_for_volumes(
    ann: AnnotationSet, appearance: np.ndarray, volumes: Sequence[VertebraVolume], matching: Matching | None = None
) -> np.ndarray:
    """Give each detected volume the appearance vector of the vertebra it covers.

    Volumes matching no annotated vertebra get a uniform vector.
    """
    matching = matching or match_detections(ann, volumes)
    by_det = {det_id: g for g, det_id in matching.pairs.items()}
    out = np.full((len(volumes), N_LEVELS), 1.0 / N_LEVELS)
    for i, v in enumerate(volumes):
        if v.id in by_det:
            out[i] = appearance[by_det[v.id]]
    return out


@dataclass(eq=False)
class ScanResult:
    truth: PhantomTruth
    scan: CorruptedScan
    volumes: list[VertebraVolume]
    probs: np.ndarray
    labelling: LabelResult
    report: EvalReport
    baseline_idr: float


def run_scan(
    spec: PhantomSpec,
    detect_cfg: DetectConfig = DetectConfig(),
    beam_cfg: BeamConfig = BeamConfig(),
) -> ScanResult:
    stage = "phantom"
    try:
        truth = generate(spec)
        stage = "corrupt"
        scan = corrupt(truth, spec)
        stage = "detect"
        volumes = detect_scan(scan.heatmaps, scan.fields, detect_cfg)
        stage = "label"
        matching = match_detections(truth.annotations, volumes)
        probs = appearance_for_volumes(truth.annotations, scan.appearance, volumes, matching)
        labelling = label_scan(volumes, probs, spec.shape[1], beam_cfg)
        stage = "evaluate"
        report = evaluate(truth.annotations, volumes, labelling.labels)
        baseline = evaluate(truth.annotations, volumes, labelling.baseline)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(stage, exc) from exc
    return ScanResult(truth, scan, volumes, probs, labelling, report, baseline.idr)
