"""JSON text documents for annotations and detections."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .types import AnnotatedVertebra, AnnotationSet, Quadrilateral, VertebraVolume


def _corners(c: np.ndarray) -> list[list[float]]:
    return [[float(x), float(y)] for x, y in np.asarray(c).reshape(4, 2)]


def annotations_to_dict(ann: AnnotationSet) -> dict:
    return {
        "pixel_spacing_mm": list(ann.pixel_spacing_mm),
        "slice_spacing_px": ann.slice_spacing_px,
        "vertebrae": [
            {
                "level": v.level,
                "mid_slice": v.mid_slice,
                "slices": {str(s): _corners(c) for s, c in v.quads.items()},
            }
            for v in ann.vertebrae
        ],
    }


def annotations_from_dict(doc: dict) -> AnnotationSet:
    vertebrae = [
        AnnotatedVertebra(
            level=v["level"],
            quads={int(s): np.array(c, dtype=float) for s, c in v["slices"].items()},
            mid_slice=int(v["mid_slice"]),
        )
        for v in doc.get("vertebrae", [])
    ]
    return AnnotationSet(
        vertebrae=vertebrae,
        pixel_spacing_mm=tuple(doc.get("pixel_spacing_mm", (1.0, 1.0))),
        slice_spacing_px=float(doc.get("slice_spacing_px", 1.0)),
    )


def volumes_to_dict(volumes: list[VertebraVolume]) -> dict:
    out = []
    for v in volumes:
        x, y, s = v.centroid3d
        out.append(
            {
                "id": v.id,
                "score": v.score,
                "centroid3d": [x, y, s],
                "height_span": list(v.height_span),
                "slices": {str(s): _corners(q.corners) for s, q in v.quads.items()},
            }
        )
    return {"volumes": out}


def volumes_from_dict(doc: dict) -> list[VertebraVolume]:
    volumes = []
    for v in doc.get("volumes", []):
        quads = {int(s): Quadrilateral(np.array(c, dtype=float), int(s)) for s, c in v["slices"].items()}
        volumes.append(VertebraVolume(int(v["id"]), quads, float(v.get("score", 1.0))))
    return volumes


def dump_json(doc: dict, path: str | os.PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_json(path: str | os.PathLike) -> dict:
    return json.loads(Path(path).read_text())


def save_annotations(ann: AnnotationSet, path: str | os.PathLike) -> None:
    dump_json(annotations_to_dict(ann), path)


def load_annotations(path: str | os.PathLike) -> AnnotationSet:
    return annotations_from_dict(load_json(path))


def save_volumes(volumes: list[VertebraVolume], path: str | os.PathLike) -> None:
    dump_json(volumes_to_dict(volumes), path)


def load_volumes(path: str | os.PathLike) -> list[VertebraVolume]:
    return volumes_from_dict(load_json(path))
