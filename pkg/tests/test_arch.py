import math

import numpy as np
import pytest

from mobilevig.arch import (
    VARIANTS,
    MbconvWeights,
    build_model,
    count_macs,
    count_params,
    downsample_forward,
    get_variant,
    mbconv_forward,
    model_forward,
    model_forward_with_stages,
    named_params,
    stem_forward,
)
from mobilevig.tensor_core import ConvSpec, identity_conv_bn

# Reference budget figures for the four variants (millions / billions).
REFERENCE_PARAMS = {"Ti": 5.2e6, "S": 7.2e6, "M": 14.0e6, "B": 26.7e6}
REFERENCE_GMACS = {"Ti": 0.7e9, "S": 1.0e9, "M": 1.5e9, "B": 2.8e9}


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


# Independent bookkeeping of the layer plan, kept apart from arch internals.

def _conv_bn(cin, cout, kh=1, kw=1, groups=1):
    return cout * (cin // groups) * kh * kw + cout + 2 * cout


def analytic_params(cfg):
    c1, c2, c3, c4 = cfg.stage_channels
    total = _conv_bn(3, c1 // 2, 3, 3) + _conv_bn(c1 // 2, c1, 3, 3)
    for i in range(3):
        c = cfg.stage_channels[i]
        hid = cfg.expansion * c
        block = _conv_bn(c, hid) + _conv_bn(hid, hid, 3, 3, groups=hid) + _conv_bn(hid, c)
        total += cfg.stage_depths[i] * block
        total += _conv_bn(c, cfg.stage_channels[i + 1], 3, 3)
    svga = (_conv_bn(c4, c4) + _conv_bn(2 * c4, 2 * c4) + _conv_bn(2 * c4, c4)
            + _conv_bn(c4, cfg.ffn_ratio * c4) + _conv_bn(cfg.ffn_ratio * c4, c4))
    total += cfg.stage_depths[3] * svga
    total += _conv_bn(c4, cfg.head_hidden)
    total += cfg.head_hidden * cfg.num_classes + cfg.num_classes
    return total


def analytic_macs(cfg, size):
    c1, c2, c3, c4 = cfg.stage_channels
    res = size // 4
    total = (size // 2) ** 2 * (c1 // 2) * 3 * 9 + res ** 2 * c1 * (c1 // 2) * 9
    for i in range(3):
        c = cfg.stage_channels[i]
        hid = cfg.expansion * c
        block = res ** 2 * (c * hid + hid * 9 + hid * c)
        total += cfg.stage_depths[i] * block
        res //= 2
        total += res ** 2 * cfg.stage_channels[i + 1] * c * 9
    px = res ** 2
    svga = px * (c4 * c4 + 4 * c4 * c4 + 2 * c4 * c4
                 + c4 * cfg.ffn_ratio * c4 + cfg.ffn_ratio * c4 * c4)
    total += cfg.stage_depths[3] * svga
    total += px * c4 * cfg.head_hidden
    total += cfg.head_hidden * cfg.num_classes
    return total


@pytest.mark.parametrize("name", list(VARIANTS))
def test_count_params_matches_analytic_plan(name):
    cfg = VARIANTS[name]
    assert count_params(build_model(cfg, seed=0)) == analytic_params(cfg)


@pytest.mark.parametrize("name", list(VARIANTS))
def test_count_macs_matches_analytic_plan(name):
    cfg = VARIANTS[name]
    assert count_macs(cfg, 224, 224) == analytic_macs(cfg, 224)


def test_frozen_totals():
    got_p = {n: count_params(build_model(c, 0)) for n, c in VARIANTS.items()}
    got_m = {n: count_macs(c, 224, 224) for n, c in VARIANTS.items()}
    assert got_p == {"Ti": 5401422, "S": 7406184, "M": 13663560, "B": 26470828}
    assert got_m == {"Ti": 674856320, "S": 996402944,
                     "M": 1512676352, "B": 2815358208}


@pytest.mark.parametrize("name", list(VARIANTS))
def test_params_within_reference_budget(name):
    p = count_params(build_model(VARIANTS[name], 0))
    assert abs(p - REFERENCE_PARAMS[name]) <= 0.10 * REFERENCE_PARAMS[name]


@pytest.mark.parametrize("name", list(VARIANTS))
def test_macs_within_reference_budget(name):
    m = count_macs(VARIANTS[name], 224, 224)
    assert abs(m - REFERENCE_GMACS[name]) <= 0.15 * REFERENCE_GMACS[name]


def test_params_monotone_across_variants():
    p = [count_params(build_model(VARIANTS[n], 0)) for n in ("Ti", "S", "M", "B")]
    assert p == sorted(p) and len(set(p)) == 4


def test_macs_scale_quadratically_with_resolution():
    cfg = VARIANTS["Ti"]
    ratio = count_macs(cfg, 448, 448) / count_macs(cfg, 224, 224)
    assert 3.7 < ratio < 4.05


def test_count_params_seed_independent():
    cfg = VARIANTS["Ti"]
    assert count_params(build_model(cfg, 0)) == count_params(build_model(cfg, 99))


# ------------------------------------------------------------ block forwards

def _zero_mbconv(c, expansion=4):
    hid = expansion * c

    def zcb(spec):
        return identity_conv_bn(spec, np.zeros(spec.weight_shape(), np.float32))

    return MbconvWeights(
        expand=zcb(ConvSpec(c, hid, (1, 1))),
        depthwise=zcb(ConvSpec(hid, hid, (3, 3), 1, 1, groups=hid)),
        project=zcb(ConvSpec(hid, c, (1, 1))),
    )


def test_mbconv_zero_weights_is_identity():
    x = rand((2, 6, 5, 5), seed=1)
    assert np.array_equal(mbconv_forward(x, _zero_mbconv(6)), x)


def test_mbconv_preserves_shape():
    w = build_model(VARIANTS["Ti"], 0)
    x = rand((2, 42, 8, 8), seed=2)
    assert mbconv_forward(x, w.stages[0][0]).shape == x.shape


def test_mbconv_single_pixel_scalar_chain():
    # all conv weights 1, identity BN, expansion 4, 1 channel, 1 pixel:
    # out = x + 4 * gelu(gelu(x))
    def ones_cb(spec):
        return identity_conv_bn(spec, np.ones(spec.weight_shape(), np.float32))

    w = MbconvWeights(
        expand=ones_cb(ConvSpec(1, 4, (1, 1))),
        depthwise=ones_cb(ConvSpec(4, 4, (3, 3), 1, 1, groups=4)),
        project=ones_cb(ConvSpec(4, 1, (1, 1))),
    )

    def g(v):
        return v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))

    for val in (0.9, -0.4, 1.7):
        x = np.full((1, 1, 1, 1), val, np.float32)
        want = val + 4.0 * g(g(val))
        assert abs(mbconv_forward(x, w).item() - want) < 1e-5


def test_stem_resolutions_and_channels():
    w = build_model(VARIANTS["Ti"], 0)
    out = stem_forward(rand((1, 3, 224, 224), seed=3), w.stem)
    assert out.shape == (1, 42, 56, 56)
    out = stem_forward(rand((1, 3, 32, 32), seed=4), w.stem)
    assert out.shape == (1, 42, 8, 8)
    with pytest.raises(ValueError):
        stem_forward(rand((1, 3, 30, 30)), w.stem)


def test_stem_width_is_42_for_every_variant():
    for cfg in VARIANTS.values():
        assert cfg.stage_channels[0] == 42


def test_downsample_halving():
    w = build_model(VARIANTS["Ti"], 0)
    assert downsample_forward(rand((1, 42, 56, 56), 5), w.downsamples[0]).shape \
        == (1, 84, 28, 28)
    assert downsample_forward(rand((1, 84, 28, 28), 6), w.downsamples[1]).shape \
        == (1, 168, 14, 14)
    # odd inputs round up: ceil((7 + 2 - 3) / 2) + 1 = 4
    assert downsample_forward(rand((1, 84, 7, 7), 7), w.downsamples[1]).shape \
        == (1, 168, 4, 4)


# ------------------------------------------------------------- build / model

def test_build_model_deterministic():
    a = build_model(VARIANTS["Ti"], seed=5)
    b = build_model(VARIANTS["Ti"], seed=5)
    for (na, pa), (nb, pb) in zip(named_params(a), named_params(b)):
        assert na == nb
        assert np.array_equal(pa, pb)


def test_build_model_seed_changes_weights():
    a = dict(named_params(build_model(VARIANTS["Ti"], seed=0)))
    b = dict(named_params(build_model(VARIANTS["Ti"], seed=1)))
    assert not np.array_equal(a["stem.0.conv.weight"], b["stem.0.conv.weight"])


def test_build_model_init_statistics():
    w = build_model(VARIANTS["Ti"], seed=0)
    for name, arr in named_params(w):
        if name.endswith(".bn.gamma"):
            assert np.all(arr == 1.0)
        elif name.endswith((".bn.beta", ".bn.mean", ".conv.bias", "fc.bias")):
            assert np.all(arr == 0.0)
        elif name.endswith(".bn.var"):
            assert np.all(arr == 1.0)
        else:
            assert np.all(np.abs(arr) <= 2 * 0.02 + 1e-7), name
            assert arr.dtype == np.float32


def test_named_params_unique():
    names = [n for n, _ in named_params(build_model(VARIANTS["Ti"], 0))]
    assert len(names) == len(set(names))


@pytest.mark.parametrize("name,c4", [("Ti", 256), ("B", 464)])
def test_stage4_shape_at_224(name, c4):
    cfg = VARIANTS[name]
    w = build_model(cfg, 0)
    x = rand((1, 3, 224, 224), seed=8)
    logits, stages = model_forward_with_stages(x, w, cfg)
    assert stages[3].shape == (1, c4, 7, 7)
    assert logits.shape == (1, cfg.num_classes)


def test_model_forward_batch_independence():
    cfg = VARIANTS["Ti"]
    w = build_model(cfg, 0)
    x = rand((2, 3, 64, 64), seed=9)
    both = model_forward(x, w, cfg)
    stacked = np.concatenate(
        [model_forward(x[:1], w, cfg), model_forward(x[1:], w, cfg)], axis=0)
    assert np.array_equal(both, stacked)


def test_model_forward_deterministic():
    cfg = VARIANTS["Ti"]
    w = build_model(cfg, 0)
    x = rand((1, 3, 64, 64), seed=10)
    assert np.array_equal(model_forward(x, w, cfg), model_forward(x, w, cfg))


def test_model_forward_input_validation():
    cfg = VARIANTS["Ti"]
    w = build_model(cfg, 0)
    with pytest.raises(ValueError):
        model_forward(rand((1, 3, 225, 225)), w, cfg)
    with pytest.raises(ValueError):
        model_forward(rand((1, 1, 64, 64)), w, cfg)


def test_get_variant_error():
    with pytest.raises(ValueError):
        get_variant("XL")
