"""JSON manifest + raw little-endian float64 blob for named tensors.

The manifest lists every tensor's name, shape, byte offset and byte size
inside the blob; tensors are stored row-major, back to back, in manifest
order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
from collections import OrderedDict
from typing import Mapping, Optional

import numpy as np

FORMAT = "momentloop-tensors"
VERSION = 1
_LE_F64 = np.dtype("<f8")


class TensorFileError(ValueError):
    pass


def save_tensors(manifest_path, tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None,
                 blob_path=None) -> None:
    manifest_path = os.fspath(manifest_path)
    if blob_path is None:
        blob_path = os.path.splitext(manifest_path)[0] + ".bin"
    blob_path = os.fspath(blob_path)
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype=_LE_F64)
            raw = data.tobytes(order="C")
            fh.write(raw)
            entries.append({"name": name, "shape": list(data.shape), "offset": offset,
                            "nbytes": len(raw)})
            offset += len(raw)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "blob": os.path.relpath(blob_path, os.path.dirname(os.path.abspath(manifest_path))),
        "total_bytes": offset,
        "tensors": entries,
        "meta": meta or {},
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensors(manifest_path, blob_path=None):
    """Returns (OrderedDict name -> array, meta dict)."""
    manifest_path = os.fspath(manifest_path)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TensorFileError(f"{manifest_path}: invalid JSON manifest ({exc})") from exc
    if manifest.get("format") != FORMAT or manifest.get("dtype") != "float64":
        raise TensorFileError(f"{manifest_path}: not a float64 {FORMAT} manifest")
    if blob_path is None:
        blob_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), manifest["blob"])
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    if len(blob) != manifest.get("total_bytes", len(blob)):
        raise TensorFileError(
            f"{blob_path}: blob has {len(blob)} bytes, manifest says {manifest['total_bytes']}"
        )
    out = OrderedDict()
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _LE_F64.itemsize
        if entry.get("nbytes", nbytes) != nbytes:
            raise TensorFileError(f"tensor {name}: nbytes {entry['nbytes']} inconsistent with shape {shape}")
        start = entry["offset"]
        if start < 0 or start + nbytes > len(blob):
            raise TensorFileError(f"tensor {name}: byte range outside blob")
        arr = np.frombuffer(blob, dtype=_LE_F64, count=count, offset=start).reshape(shape)
        out[name] = arr.astype(np.float64, copy=True)
    return out, manifest.get("meta", {})


def save_weights(path, weights) -> None:
    save_tensors(path, weights.tensors, meta={"kind": "decoder", "config": weights.cfg.to_dict()})


def load_weights(path):
    from .decoder import DecoderConfig, DecoderWeights

    tensors, meta = load_tensors(path)
    if meta.get("kind") != "decoder" or "config" not in meta:
        raise TensorFileError(f"{path}: manifest is not a decoder weight file")
    cfg = DecoderConfig.from_dict(meta["config"])
    return DecoderWeights(cfg, tensors)
