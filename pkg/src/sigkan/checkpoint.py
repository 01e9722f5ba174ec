"""Versioned binary container for checkpoints, scaling states and datasets.

Layout::

    b"SGKNCTR\\0"            8-byte magic
    uint32 LE               format version
    uint64 LE               header length in bytes
    header                  UTF-8 JSON, sorted keys, compact separators
    payload                 concatenated little-endian float64 arrays, row-major

The header holds ``{"meta": ..., "tensors": [{"name", "shape", "offset"}, ...]}``
with offsets in elements.  Writing what was read reproduces the same bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SGKNCTR\0"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True,
                        separators=(",", ":"), allow_nan=True).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)),
                     header, *chunks])


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise ContainerError("not a sigkan container (bad magic)")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    (hlen,) = struct.unpack("<Q", blob[12:20])
    header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    payload = np.frombuffer(blob[20 + hlen:], dtype="<f8")
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + count > payload.size:
            raise ContainerError(f"tensor {entry['name']!r} runs past the end of the payload")
        tensors[entry["name"]] = payload[start:start + count].astype(np.float64).reshape(shape)
    return header["meta"], tensors


def save(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(meta, tensors))
    os.replace(tmp, path)


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def state_dict(model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters().items()}


def load_state_dict(model, arrays: dict[str, np.ndarray]) -> None:
    params = model.named_parameters()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ContainerError(f"parameter names differ: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
    for name, p in params.items():
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != p.shape:
            raise ContainerError(f"{name}: stored shape {arr.shape}, model expects {p.shape}")
        p.data = arr.copy()


def build_model(kind: str, config: dict, seed: int = 0):
    from .baselines import MlpConfig, MlpNetwork
    from .model import NetworkConfig, SigKanNetwork

    if kind == "mlp":
        return MlpNetwork.init(MlpConfig.from_dict(config), seed)
    if kind in ("sigkan", "sigdense"):
        cfg = NetworkConfig.from_dict({**config, "variant": kind})
        return SigKanNetwork.init(cfg, seed)
    raise ContainerError(f"unknown model kind {kind!r}")


def clone_model(model):
    """Structurally identical model with fresh leaf tensors holding copies of the weights."""
    twin = build_model(model.kind, model.config.to_dict())
    load_state_dict(twin, state_dict(model))
    return twin


def save_model(path, model, extra: dict | None = None) -> None:
    meta = {"kind": "model", "model": model.kind, "config": model.config.to_dict(),
            "extra": extra or {}}
    save(path, meta, state_dict(model))


def load_model(path):
    meta, tensors = load(path)
    if meta.get("kind") != "model":
        raise ContainerError(f"{path} does not hold a model (kind={meta.get('kind')!r})")
    model = build_model(meta["model"], meta["config"])
    load_state_dict(model, tensors)
    return model, meta
