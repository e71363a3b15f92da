"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DNET"                      magic
    u32  version
    u32  n                       length of the JSON block
    n    bytes                   UTF-8 JSON: model config, normalisation, extras
    u32  count                   number of parameter records
    count x record:
        u32 name length, name bytes (UTF-8)
        u32 rank, rank x u64 dims
        prod(dims) x f64 payload
    u32  CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, IntegrityError
from .model import ModelConfig

MAGIC = b"DNET"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    mean: float = 0.0
    std: float = 1.0
    extra: dict = field(default_factory=dict)


def encode(ckpt: Checkpoint) -> bytes:
    header = json.dumps({
        "model": ckpt.config.to_dict(),
        "normalization": {"mean": ckpt.mean, "std": ckpt.std},
        "extra": ckpt.extra,
    }, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header,
             struct.pack("<I", len(ckpt.params))]
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic: not a DetectorNet checkpoint")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(buf) < 4 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise IntegrityError("checkpoint checksum mismatch (file corrupted or truncated)")
    r.buf = buf[:-4]
    try:
        header = json.loads(r.take(r.u32("header length"), "header").decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from exc
    params = {}
    for _ in range(r.u32("parameter count")):
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"dims of {name}"))
        n = int(np.prod(dims, dtype=np.int64))
        payload = r.take(8 * n, f"payload of {name}")
        params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after the last record")
    norm = header.get("normalization", {})
    return Checkpoint(config, params, float(norm.get("mean", 0.0)), float(norm.get("std", 1.0)),
                      header.get("extra", {}))


def save_checkpoint(path, ckpt: Checkpoint):
    Path(path).write_bytes(encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def checkpoint_from_model(model, mean: float, std: float, extra: dict | None = None) -> Checkpoint:
    return Checkpoint(model.config, model.store.state_dict(), mean, std, dict(extra or {}))


def restore_into(model, ckpt: Checkpoint):
    """Copy checkpoint weights into ``model`` after checking the architectures agree.

    ``seed`` and ``dropout`` do not change the parameter layout and are ignored.
    """
    a, b = ckpt.config.to_dict(), model.config.to_dict()
    diff = sorted(k for k in a if a[k] != b[k] and k not in ("seed", "dropout"))
    if diff:
        raise ConfigurationError(f"checkpoint config differs from model config in {diff}")
    model.store.load_state_dict(ckpt.params)
