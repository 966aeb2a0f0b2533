"""Deterministic binary checkpoint container.

Layout: magic "PLMC", u32 version, u64 header length, UTF-8 JSON header,
then raw little-endian C-order tensor bytes. Tensors are stored sorted
by name and the header JSON is canonical (sorted keys, fixed
separators), so save -> load -> save is byte-identical. Model
checkpoints carry the ModelConfig; optimizer state for training resume
goes into a sidecar container so parameter checkpoints stay directly
byte-comparable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataValidationError
from .config import ModelConfig
from .params import validate_params

MAGIC = b"PLMC"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _write_container(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        blob = arr.astype(_DTYPES[dtype], copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def _read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataValidationError(f"{path}: not a checkpoint container (bad magic)")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != FORMAT_VERSION:
        raise DataValidationError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    data = raw[16 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(data[start : start + nbytes], dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["meta"], tensors


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: dict[str, np.ndarray]) -> None:
    validate_params(cfg, params)
    _write_container(path, {"kind": "model", "config": cfg.to_dict()}, params)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    meta, tensors = _read_container(path)
    if meta.get("kind") != "model":
        raise DataValidationError(f"{path}: container holds {meta.get('kind')!r}, not a model")
    cfg = ModelConfig.from_dict(meta["config"])
    validate_params(cfg, tensors)
    return cfg, tensors


def save_optimizer_state(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    _write_container(path, {"kind": "optimizer", **meta}, tensors)


def load_optimizer_state(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    meta, tensors = _read_container(path)
    if meta.get("kind") != "optimizer":
        raise DataValidationError(f"{path}: container holds {meta.get('kind')!r}, not optimizer state")
    return meta, tensors
