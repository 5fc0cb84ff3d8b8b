"""Binary weight container.

Layout (little-endian throughout):
    magic "MVIG" | version u32 | name_len u32 + variant name utf-8 |
    entry_count u32 | per entry: name_len u32 + utf-8 name, rank u32,
    dims as u32 each, then raw float32 data in C order.

Round-trips are bitwise lossless for float32 arrays.
"""

from __future__ import annotations

import struct

import numpy as np

from .arch import ModelWeights, VariantConfig, build_model, named_params
from .tensor_core import Array

MAGIC = b"MVIG"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


def save_weights(path: str, weights: ModelWeights) -> None:
    entries = list(named_params(weights))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        name_b = weights.variant.encode("utf-8")
        f.write(struct.pack("<I", len(name_b)))
        f.write(name_b)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise WeightsFormatError("truncated weights file")
    return buf


def load_weights(path: str) -> tuple[str, dict[str, Array]]:
    """Reads a weights file into (variant name, name -> float32 array)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise WeightsFormatError(f"{path}: not a MVIG weights file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise WeightsFormatError(
                f"{path}: unsupported format version {version} (expected {VERSION})")
        (nlen,) = struct.unpack("<I", _read_exact(f, 4))
        variant = _read_exact(f, nlen).decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        out: dict[str, Array] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * size), dtype="<f4")
            out[name] = data.reshape(shape).astype(np.float32, copy=True)
        if f.read(1):
            raise WeightsFormatError(f"{path}: trailing bytes after last entry")
    return variant, out


def load_into_model(path: str, cfg: VariantConfig) -> ModelWeights:
    """Builds a weight skeleton for cfg and fills it from the file, checking
    that names and shapes line up exactly.
    """
    variant, loaded = load_weights(path)
    if variant != cfg.name:
        raise WeightsFormatError(
            f"{path}: file holds variant {variant!r}, expected {cfg.name!r}")
    model = build_model(cfg, seed=0)
    expected = list(named_params(model))
    if len(expected) != len(loaded):
        raise WeightsFormatError(
            f"{path}: {len(loaded)} entries, model expects {len(expected)}")
    for name, arr in expected:
        if name not in loaded:
            raise WeightsFormatError(f"{path}: missing parameter {name!r}")
        src = loaded[name]
        if src.shape != arr.shape:
            raise WeightsFormatError(
                f"{path}: parameter {name!r} has shape {src.shape}, "
                f"model expects {arr.shape}")
        arr[...] = src
    return model
