"""File formats: field files, checkpoint containers, manifests and PGM dumps.

Field files
-----------
An 8-byte magic ``GSHFLD01``, one UTF-8 JSON header line terminated by a
newline, then raw little-endian C-ordered data.  The header records ``dims``,
``channels``, ``dtype``, ``voxel_size`` and ``layout`` (always voxel-major
with channels innermost), plus any extra keys the caller supplies (e.g. the
``kind`` of a deformation map).

Checkpoint containers
---------------------
Same idea, magic ``GSHCKPT1``: a JSON manifest (named arrays with shapes,
dtypes and byte offsets, plus a free-form ``meta`` dict) followed by the
concatenated raw arrays.  Serialisation is fully deterministic, so equal
states produce byte-identical files.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError

FIELD_MAGIC = b"GSHFLD01"
CKPT_MAGIC = b"GSHCKPT1"
LAYOUT = "voxel_major_channels_innermost"

_DTYPES = {"float64": "<f8", "float32": "<f4", "uint8": "|u1"}


def write_field(path, data: np.ndarray, voxel_size=None, channels: int | None = None,
                extra: dict | None = None):
    """Write a field array; ``channels=None`` means scalar (no channel axis)."""
    data = np.asarray(data)
    if channels is None:
        dims, nchan = data.shape, 0
    else:
        if data.shape[-1] != channels:
            raise DataError("declared channel count disagrees with array shape")
        dims, nchan = data.shape[:-1], channels
    dtype_name = {np.dtype("<f8"): "float64", np.dtype("<f4"): "float32",
                  np.dtype("|u1"): "uint8"}.get(data.dtype)
    if dtype_name is None:
        data = data.astype(np.float64)
        dtype_name = "float64"
    header = {
        "dims": list(int(n) for n in dims),
        "channels": int(nchan),
        "dtype": dtype_name,
        "voxel_size": [float(v) for v in (voxel_size or (1.0,) * len(dims))],
        "layout": LAYOUT,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(blob)
        fh.write(np.ascontiguousarray(data, dtype=_DTYPES[dtype_name]).tobytes())


def read_field(path):
    """Read a field file; returns (array, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FIELD_MAGIC:
            raise DataError(f"{path}: not a field file (bad magic {magic!r})")
        header = json.loads(fh.readline().decode())
        if header.get("layout") != LAYOUT:
            raise DataError(f"{path}: unsupported layout {header.get('layout')!r}")
        dims = tuple(header["dims"])
        nchan = int(header["channels"])
        shape = dims if nchan == 0 else (*dims, nchan)
        dtype = _DTYPES[header["dtype"]]
        raw = fh.read()
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return arr, header


def save_container(path, arrays: dict, meta: dict | None = None):
    """Write named float64 arrays plus a meta dict as one deterministic blob."""
    entries = []
    offset = 0
    payload = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
        })
        buf = arr.tobytes()
        payload.append(buf)
        offset += len(buf)
    manifest = {"arrays": entries, "meta": meta or {}}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(blob)
        for buf in payload:
            fh.write(buf)


def load_container(path):
    """Read a container written by :func:`save_container`; (arrays, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint container (bad magic)")
        manifest = json.loads(fh.readline().decode())
        raw = fh.read()
    arrays = {}
    for ent in manifest["arrays"]:
        shape = tuple(ent["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        arrays[ent["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=n, offset=start)
            .reshape(shape)
            .copy()
        )
    return arrays, manifest["meta"]


def write_pgm(path, image: np.ndarray):
    """Dump a 2D array as binary 8-bit PGM, rescaled to the full range."""
    if image.ndim != 2:
        raise DataError("PGM export needs a 2D array")
    lo, hi = float(image.min()), float(image.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    quant = np.clip((image - lo) * scale, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        fh.write(quant.tobytes())


def write_manifest(path, subject_ids, file_names, n_classes, dims):
    manifest = {
        "k": int(n_classes),
        "dims": [int(n) for n in dims],
        "subjects": [
            {"id": sid, "path": fname}
            for sid, fname in zip(subject_ids, file_names)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset(manifest_path):
    """Load every categorical image listed in a dataset manifest.

    Returns (ids, list of (*dims, K) arrays, n_classes).
    """
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    ids, images = [], []
    for entry in manifest["subjects"]:
        arr, header = read_field(os.path.join(base, entry["path"]))
        if header["channels"] != manifest["k"]:
            raise DataError(f"subject {entry['id']}: class count mismatch")
        if tuple(header["dims"]) != tuple(manifest["dims"]):
            raise DataError(f"subject {entry['id']}: lattice mismatch")
        ids.append(entry["id"])
        images.append(arr.astype(np.float64))
    if not images:
        raise DataError("dataset manifest lists no subjects")
    return ids, images, int(manifest["k"])
