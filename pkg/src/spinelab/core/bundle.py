"""Tensor bundles: a directory with a JSON manifest and one raw file per array.

Every array is stored row-major as little-endian float32 (tag ``f32le``) in
``<name>.raw``. Arrays with a well-known name must use the documented axis
order so that any trainer can exchange them bit-exactly.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping

import numpy as np

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "spinelab-bundle/1"

DTYPES = {"f32le": np.dtype("<f4")}

AXIS_ORDERS = {
    "heatmaps": "S,C,H,W",
    "fields": "S,L,XY,H,W",
    "probs": "V,N",
}


class BundleError(ValueError):
    pass


def _default_axes(name: str, ndim: int) -> str:
    if name in AXIS_ORDERS:
        return AXIS_ORDERS[name]
    return ",".join(f"d{i}" for i in range(ndim))


def write_bundle(
    arrays: Mapping[str, np.ndarray],
    path: str | os.PathLike,
    axes: Mapping[str, str] | None = None,
) -> None:
    """Write ``arrays`` into the bundle directory ``path``.

    Values are converted to float32; callers wanting a bit-exact round trip
    should pass float32 data.
    """
    path = Path(path)
    axes = dict(axes or {})
    entries = []
    prepared = {}
    for name, array in arrays.items():
        if not name or "/" in name or name.startswith("."):
            raise BundleError(f"invalid array name {name!r}")
        data = np.ascontiguousarray(array, dtype=DTYPES["f32le"])
        if not np.all(np.isfinite(data)):
            raise BundleError(f"array {name!r} has non-finite values")
        order = axes.get(name, _default_axes(name, data.ndim))
        if len(order.split(",")) != data.ndim:
            raise BundleError(f"axis order {order!r} does not match {data.ndim}-d array {name!r}")
        if name in AXIS_ORDERS and order != AXIS_ORDERS[name]:
            raise BundleError(f"{name!r} must use axis order {AXIS_ORDERS[name]!r}")
        prepared[name] = data
        entries.append(
            {
                "name": name,
                "dtype": "f32le",
                "shape": [int(n) for n in data.shape],
                "axes": order,
                "byteorder": "little",
                "file": f"{name}.raw",
            }
        )

    try:
        path.mkdir(parents=True, exist_ok=True)
        for name, data in prepared.items():
            (path / f"{name}.raw").write_bytes(data.tobytes(order="C"))
        manifest = {"format": FORMAT_TAG, "arrays": entries}
        (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise BundleError(f"cannot write bundle at {path}: {exc}") from exc


def read_manifest(path: str | os.PathLike) -> dict:
    manifest_path = Path(path) / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no bundle manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"unparseable manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("arrays"), list):
        raise BundleError(f"manifest {manifest_path} has no 'arrays' list")
    return manifest


def read_bundle(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Load every array declared in the manifest; returns (arrays, manifest)."""
    path = Path(path)
    manifest = read_manifest(path)
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        tag = entry.get("dtype")
        if tag not in DTYPES:
            raise BundleError(f"array {name!r}: unknown element type {tag!r}")
        dtype = DTYPES[tag]
        shape = tuple(int(n) for n in entry["shape"])
        axes = entry.get("axes", _default_axes(name, len(shape)))
        if name in AXIS_ORDERS and axes != AXIS_ORDERS[name]:
            raise BundleError(f"array {name!r}: axis order {axes!r}, expected {AXIS_ORDERS[name]!r}")
        raw_path = path / entry.get("file", f"{name}.raw")
        if not raw_path.is_file():
            raise FileNotFoundError(f"missing payload {raw_path}")
        payload = raw_path.read_bytes()
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if len(payload) != expected:
            raise BundleError(
                f"array {name!r}: shape {list(shape)} needs {expected} bytes, payload has {len(payload)}"
            )
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return arrays, manifest
