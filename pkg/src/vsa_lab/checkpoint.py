"""Binary checkpoint format.

Layout::

    b"VSACKPT1"
    u32 length, then the config block (canonical ``key = value`` text, UTF-8)
    blobs until EOF, each:
        u32 name length, name bytes, u8 dtype tag, u32 rank, u64 extents...,
        payload (little-endian, row-major)

Parameters and optimizer moments are stored as f64 (``model.dtype`` in the
config block records the in-memory precision). ``meta.n_blobs`` guards
against truncation at a blob boundary.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .backbone import Backbone, ModelConfig, build_model
from .config import dump_config, parse_config
from .errors import ConfigError, LoadError

MAGIC = b"VSACKPT1"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8")}
_TAGS = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    model: Backbone
    step: int = 0
    seed: int = 0
    optimizer: dict = field(default_factory=dict)   # {"m": {...}, "v": {...}, "t": int}
    meta: dict = field(default_factory=dict)


def _write_blob(fh, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8")
    elif arr.dtype.kind in "iu":
        arr = arr.astype("<i8")
    tag = _TAGS[arr.dtype]
    nb = name.encode()
    fh.write(struct.pack("<I", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<BI", tag, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def save_checkpoint(model: Backbone, path, optimizer=None, step: int = 0, seed: int = 0,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    blobs = [(name, p.data) for name, p in model.named_parameters()]
    if optimizer is not None:
        for name, arr in sorted(optimizer.state["m"].items()):
            blobs.append((f"optim.m.{name}", arr))
        for name, arr in sorted(optimizer.state["v"].items()):
            blobs.append((f"optim.v.{name}", arr))
    meta = dict(model.config.to_dict())
    meta.update({
        "meta.format_version": str(FORMAT_VERSION),
        "meta.step": str(int(step)),
        "meta.seed": str(int(seed)),
        "meta.n_blobs": str(len(blobs)),
        "meta.dtype": np.dtype(model.dtype).name,
        "meta.optim_t": str(optimizer.state["t"] if optimizer is not None else 0),
    })
    for k, v in (extra or {}).items():
        meta[k] = str(v)
    text = dump_config(meta).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for name, arr in blobs:
        _write_blob(buf, name, arr)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())
    return path


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise LoadError(f"truncated checkpoint while reading {what}")
    return data


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    fh = io.BytesIO(raw)
    if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
        raise LoadError("bad magic bytes: not a VSACKPT1 checkpoint")
    (n,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
    try:
        meta = parse_config(_read_exact(fh, n, "config block").decode())
    except (UnicodeDecodeError, ConfigError) as exc:
        raise LoadError(f"unreadable config block: {exc}") from exc
    version = meta.get("meta.format_version")
    if version != str(FORMAT_VERSION):
        raise LoadError(f"unsupported checkpoint version {version!r} (expected {FORMAT_VERSION})")

    blobs = {}
    while fh.tell() < len(raw):
        (ln,) = struct.unpack("<I", _read_exact(fh, 4, "blob name length"))
        name = _read_exact(fh, ln, "blob name").decode()
        tag, rank = struct.unpack("<BI", _read_exact(fh, 5, f"header of {name!r}"))
        if tag not in _DTYPES:
            raise LoadError(f"unknown dtype tag {tag} for {name!r}")
        shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, f"shape of {name!r}"))
        dt = _DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64))
        payload = _read_exact(fh, count * dt.itemsize, f"payload of {name!r}")
        blobs[name] = np.frombuffer(payload, dtype=dt).reshape(shape)
    if len(blobs) != int(meta.get("meta.n_blobs", -1)):
        raise LoadError(f"checkpoint holds {len(blobs)} blobs, header says {meta.get('meta.n_blobs')}")

    config = ModelConfig.from_dict(meta)
    dtype = np.dtype(meta.get("meta.dtype", "float64"))
    model = build_model(config, materialize=False)
    params = dict(model.named_parameters())
    for name in params:
        if name not in blobs:
            raise LoadError(f"missing parameter {name!r}")
    state = {"m": {}, "v": {}, "t": int(meta.get("meta.optim_t", 0))}
    for name, arr in blobs.items():
        if name.startswith("optim.m."):
            state["m"][name[len("optim.m."):]] = arr.astype(dtype)
        elif name.startswith("optim.v."):
            state["v"][name[len("optim.v."):]] = arr.astype(dtype)
        elif name not in params:
            raise LoadError(f"unexpected parameter {name!r}")
        else:
            if tuple(arr.shape) != params[name].shape:
                raise LoadError(f"shape mismatch for {name!r}: {arr.shape} vs {params[name].shape}")
            params[name].data = arr.astype(dtype)
    return Checkpoint(model=model, step=int(meta.get("meta.step", 0)), seed=int(meta.get("meta.seed", 0)),
                      optimizer=state, meta=meta)


def load_checkpoint(path) -> Backbone:
    return read_checkpoint(path).model
