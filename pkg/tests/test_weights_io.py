import struct

import numpy as np
import pytest

from mobilevig.arch import VARIANTS, build_model, model_forward, named_params
from mobilevig.weights_io import (
    MAGIC,
    VERSION,
    WeightsFormatError,
    load_into_model,
    load_weights,
    save_weights,
)


def rand_input(size, seed=0):
    return np.random.default_rng(seed).standard_normal((1, 3, size, size)).astype(np.float32)


def test_roundtrip_is_bitwise_lossless(tmp_path):
    cfg = VARIANTS["Ti"]
    model = build_model(cfg, seed=7)
    path = tmp_path / "ti.mvig"
    save_weights(str(path), model)
    variant, loaded = load_weights(str(path))
    assert variant == "Ti"
    for name, arr in named_params(model):
        assert np.array_equal(loaded[name], arr), name
        assert loaded[name].dtype == np.float32


def test_roundtrip_preserves_logits(tmp_path):
    cfg = VARIANTS["Ti"]
    model = build_model(cfg, seed=3)
    x = rand_input(64, seed=4)
    before = model_forward(x, model, cfg)
    path = tmp_path / "w.mvig"
    save_weights(str(path), model)
    after = model_forward(x, load_into_model(str(path), cfg), cfg)
    assert np.array_equal(before, after)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.mvig"
    path.write_bytes(b"GIVM" + b"\x00" * 64)
    with pytest.raises(WeightsFormatError, match="magic"):
        load_weights(str(path))


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "v9.mvig"
    path.write_bytes(MAGIC + struct.pack("<I", 9) + b"\x00" * 16)
    with pytest.raises(WeightsFormatError, match="version"):
        load_weights(str(path))


def test_truncated_file_rejected(tmp_path):
    cfg = VARIANTS["Ti"]
    path = tmp_path / "trunc.mvig"
    save_weights(str(path), build_model(cfg, 0))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(WeightsFormatError, match="truncated"):
        load_weights(str(path))


def test_variant_mismatch_rejected(tmp_path):
    path = tmp_path / "s.mvig"
    save_weights(str(path), build_model(VARIANTS["S"], 0))
    with pytest.raises(WeightsFormatError, match="variant"):
        load_into_model(str(path), VARIANTS["Ti"])


def _write_raw(path, variant, entries):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        nb = variant.encode()
        f.write(struct.pack("<I", len(nb)))
        f.write(nb)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def test_shape_mismatch_rejected(tmp_path):
    cfg = VARIANTS["Ti"]
    entries = list(named_params(build_model(cfg, 0)))
    entries = [(n, a.T if n == "head.fc.weight" else a) for n, a in entries]
    path = tmp_path / "warp.mvig"
    _write_raw(str(path), "Ti", entries)
    with pytest.raises(WeightsFormatError, match="head.fc.weight"):
        load_into_model(str(path), cfg)


def test_missing_entry_rejected(tmp_path):
    cfg = VARIANTS["Ti"]
    entries = list(named_params(build_model(cfg, 0)))[:-1]
    path = tmp_path / "short.mvig"
    _write_raw(str(path), "Ti", entries)
    with pytest.raises(WeightsFormatError, match="entries"):
        load_into_model(str(path), cfg)


def test_trailing_garbage_rejected(tmp_path):
    cfg = VARIANTS["Ti"]
    path = tmp_path / "trail.mvig"
    save_weights(str(path), build_model(cfg, 0))
    with open(path, "ab") as f:
        f.write(b"\x00")
    with pytest.raises(WeightsFormatError, match="trailing"):
        load_weights(str(path))
