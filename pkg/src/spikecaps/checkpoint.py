"""Binary checkpoint format.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"SPKCAPS\\x00"
    offset 8   4 bytes   uint32 format version (currently 1)
    offset 12  4 bytes   uint32 header length H
    offset 16  H bytes   UTF-8 JSON header, keys sorted
    offset 16+H          tensor payload: float64 little-endian, C order,
                         tensors concatenated in header order

The header holds ``config`` (model configuration), ``normalization``
(training-set pixel mean/std, or null), ``metadata`` (free-form) and
``tensors``: a list of ``{"name", "shape", "offset"}`` where ``offset`` is
the byte offset of the tensor inside the payload. Files are byte-for-byte
reproducible for identical inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, check_params

MAGIC = b"SPKCAPS\x00"
VERSION = 1


def encode_checkpoint(cfg: ModelConfig, params: dict, normalization: dict | None = None, metadata=None) -> bytes:
    check_params(params, cfg)
    tensors, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": cfg.to_dict(),
        "normalization": normalization,
        "metadata": metadata or {},
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes, *blobs])


def save_checkpoint(path, cfg: ModelConfig, params: dict, normalization: dict | None = None, metadata=None) -> None:
    Path(path).write_bytes(encode_checkpoint(cfg, params, normalization, metadata))


def load_checkpoint(path) -> tuple[ModelConfig, dict, dict]:
    """Returns ``(config, params, header)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r} at byte offset 0")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated preamble, file ends at offset {len(raw)}")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version} at byte offset 8")
    if len(raw) < 16 + hlen:
        raise FormatError(f"{path}: truncated header, expected {hlen} bytes from offset 16")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable JSON header at byte offset 16: {exc}") from exc
    payload = memoryview(raw)[16 + hlen :]
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        end = t["offset"] + 8 * count
        if end > len(payload):
            raise FormatError(f"{path}: tensor {t['name']} runs past end of file (payload offset {t['offset']})")
        params[t["name"]] = np.frombuffer(payload[t["offset"] : end], dtype="<f8").astype(np.float64).reshape(t["shape"])
    cfg = ModelConfig.from_dict(header["config"])
    check_params(params, cfg)
    return cfg, params, header
