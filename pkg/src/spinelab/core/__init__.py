from .bundle import BundleError, read_bundle, write_bundle
from .documents import (
    load_annotations,
    load_volumes,
    save_annotations,
    save_volumes,
)
from .tiling import Tile, stitch_tiles, tile_scan
from .types import (
    CORNER_KINDS,
    QUAD_ORDER,
    AnnotatedVertebra,
    AnnotationSet,
    HeatmapStack,
    Landmark,
    LandmarkKind,
    Quadrilateral,
    VectorFieldStack,
    VertebraVolume,
    quad_index,
)

__all__ = [
    "BundleError",
    "read_bundle",
    "write_bundle",
    "load_annotations",
    "load_volumes",
    "save_annotations",
    "save_volumes",
    "Tile",
    "stitch_tiles",
    "tile_scan",
    "CORNER_KINDS",
    "QUAD_ORDER",
    "AnnotatedVertebra",
    "AnnotationSet",
    "HeatmapStack",
    "Landmark",
    "LandmarkKind",
    "Quadrilateral",
    "VectorFieldStack",
    "VertebraVolume",
    "quad_index",
]
