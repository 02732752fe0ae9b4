"""Binary checkpoint container plus JSON sidecar.

Binary layout (little-endian)::

    b"JMCK"  u32 version=1  u32 tensor_count
    per tensor, in sorted name order:
        u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f64 data[prod(dims)]

The sidecar ``<path>.json`` holds the model config, the vocabulary and free
form training metadata.
"""
from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .core import ModelConfig
from .data import Vocabulary
from .errors import DataError

MAGIC = b"JMCK"
VERSION = 1


def sidecar_path(path: str) -> str:
    return path + ".json"


def write_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_tensors(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise DataError(f"{path}: not a JMCK checkpoint")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        pos, out = 12, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", buf, pos)
            dims = struct.unpack_from(f"<{rank}I", buf, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * size > len(buf):
                raise DataError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
    except struct.error as e:
        raise DataError(f"{path}: truncated checkpoint ({e})") from None
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def save(path: str, model, vocab: Vocabulary, meta: Optional[dict] = None) -> None:
    write_tensors(path, {k: v.data for k, v in model.parameters().items()})
    side = {"config": model.config.to_dict(), "vocab": vocab.to_list(), "meta": meta or {}}
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(side, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load(path: str):
    """Returns ``(model, vocab, meta)``."""
    from .model import JMAN

    try:
        with open(sidecar_path(path), encoding="utf-8") as fh:
            side = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"checkpoint sidecar missing: {sidecar_path(path)}") from None
    vocab = Vocabulary(side["vocab"])
    model = JMAN(ModelConfig.from_dict(side["config"]), len(vocab))
    model.load_state(read_tensors(path))
    return model, vocab, side.get("meta", {})
