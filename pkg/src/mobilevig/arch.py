"""MobileViG model assembly: stem, three MBConv stages with strided-conv
downsampling, one SVGA stage, and a convolutional classification head.

Stage schedule for a (h, w) input: stem brings the map to h/4, each
downsample halves it again, so the SVGA stage runs at h/32. Per-variant
depths, widths and the SVGA connection stride live in VariantConfig.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .svga import FfnWeights, GrapherWeights, SvgaBlockWeights, svga_block_forward
from .tensor_core import (
    Array,
    ConvBn,
    ConvSpec,
    _require,
    conv_bn,
    elem_add,
    gelu,
    global_avg_pool,
    linear,
)

BN_EPS = 1e-5
INIT_STD = 0.02
INIT_BOUND = 2.0  # truncation in units of sigma


@dataclass(frozen=True)
class VariantConfig:
    name: str
    stage_depths: tuple[int, int, int, int]
    stage_channels: tuple[int, int, int, int]
    k: int = 2
    expansion: int = 4
    ffn_ratio: int = 4
    head_hidden: int = 1024
    num_classes: int = 1000


VARIANTS: dict[str, VariantConfig] = {
    "Ti": VariantConfig("Ti", (2, 2, 6, 2), (42, 84, 168, 256)),
    "S": VariantConfig("S", (3, 3, 9, 3), (42, 84, 176, 256)),
    "M": VariantConfig("M", (3, 3, 9, 3), (42, 84, 224, 400)),
    "B": VariantConfig("B", (5, 5, 15, 5), (42, 84, 240, 464)),
}


def get_variant(name: str) -> VariantConfig:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass
class MbconvWeights:
    expand: ConvBn     # 1x1, C -> expansion*C
    depthwise: ConvBn  # 3x3 depthwise on expansion*C
    project: ConvBn    # 1x1, expansion*C -> C


@dataclass
class ModelWeights:
    variant: str
    stem: list[ConvBn]
    stages: list[list[MbconvWeights]]
    downsamples: list[ConvBn]
    svga_blocks: list[SvgaBlockWeights]
    head_conv: ConvBn
    head_weight: Array = field(default=None)
    head_bias: Array = field(default=None)


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...],
                  std: float = INIT_STD) -> Array:
    vals = rng.standard_normal(shape)
    mask = np.abs(vals) > INIT_BOUND
    while mask.any():
        vals[mask] = rng.standard_normal(int(mask.sum()))
        mask = np.abs(vals) > INIT_BOUND
    return (vals * std).astype(np.float32)


def _init_conv_bn(rng: np.random.Generator, spec: ConvSpec) -> ConvBn:
    c = spec.out_channels
    return ConvBn(
        spec=spec,
        weight=_trunc_normal(rng, spec.weight_shape()),
        bias=np.zeros(c, dtype=np.float32),
        gamma=np.ones(c, dtype=np.float32),
        beta=np.zeros(c, dtype=np.float32),
        mean=np.zeros(c, dtype=np.float32),
        var=np.ones(c, dtype=np.float32),
        eps=BN_EPS,
    )


def _init_mbconv(rng: np.random.Generator, c: int, expansion: int) -> MbconvWeights:
    hidden = expansion * c
    return MbconvWeights(
        expand=_init_conv_bn(rng, ConvSpec(c, hidden, (1, 1))),
        depthwise=_init_conv_bn(rng, ConvSpec(hidden, hidden, (3, 3), 1, 1, groups=hidden)),
        project=_init_conv_bn(rng, ConvSpec(hidden, c, (1, 1))),
    )


def _init_svga_block(rng: np.random.Generator, c: int, k: int, ffn_ratio: int) -> SvgaBlockWeights:
    grapher = GrapherWeights(
        w_in=_init_conv_bn(rng, ConvSpec(c, c, (1, 1))),
        proj=_init_conv_bn(rng, ConvSpec(2 * c, 2 * c, (1, 1))),
        w_out=_init_conv_bn(rng, ConvSpec(2 * c, c, (1, 1))),
    )
    ffn = FfnWeights(
        w1=_init_conv_bn(rng, ConvSpec(c, ffn_ratio * c, (1, 1))),
        w2=_init_conv_bn(rng, ConvSpec(ffn_ratio * c, c, (1, 1))),
        ratio=ffn_ratio,
    )
    return SvgaBlockWeights(grapher=grapher, ffn=ffn, k=k)


def build_model(cfg: VariantConfig, seed: int = 0) -> ModelWeights:
    """Deterministically initialized weights: truncated-normal convs and the
    classifier, zero biases, identity batch norms. Parameters are drawn in
    the fixed named_params order, so equal seeds give bitwise-equal models.
    """
    rng = np.random.default_rng(seed)
    c1, c2, c3, c4 = cfg.stage_channels
    stem = [
        _init_conv_bn(rng, ConvSpec(3, c1 // 2, (3, 3), 2, 1)),
        _init_conv_bn(rng, ConvSpec(c1 // 2, c1, (3, 3), 2, 1)),
    ]
    stages = []
    downsamples = []
    for i in range(3):
        c = cfg.stage_channels[i]
        stages.append([_init_mbconv(rng, c, cfg.expansion)
                       for _ in range(cfg.stage_depths[i])])
        downsamples.append(_init_conv_bn(
            rng, ConvSpec(c, cfg.stage_channels[i + 1], (3, 3), 2, 1)))
    svga_blocks = [_init_svga_block(rng, c4, cfg.k, cfg.ffn_ratio)
                   for _ in range(cfg.stage_depths[3])]
    head_conv = _init_conv_bn(rng, ConvSpec(c4, cfg.head_hidden, (1, 1)))
    head_weight = _trunc_normal(rng, (cfg.num_classes, cfg.head_hidden))
    head_bias = np.zeros(cfg.num_classes, dtype=np.float32)
    return ModelWeights(
        variant=cfg.name, stem=stem, stages=stages, downsamples=downsamples,
        svga_blocks=svga_blocks, head_conv=head_conv,
        head_weight=head_weight, head_bias=head_bias,
    )


def mbconv_forward(x: Array, w: MbconvWeights) -> Array:
    t = gelu(conv_bn(x, w.expand))
    t = gelu(conv_bn(t, w.depthwise))
    t = conv_bn(t, w.project)
    return elem_add(t, x)


def stem_forward(x: Array, stem: list[ConvBn]) -> Array:
    _require(x.shape[2] % 4 == 0 and x.shape[3] % 4 == 0,
             f"stem needs spatial dims divisible by 4, got {x.shape[2]}x{x.shape[3]}")
    t = gelu(conv_bn(x, stem[0]))
    return gelu(conv_bn(t, stem[1]))


def downsample_forward(x: Array, w: ConvBn) -> Array:
    _require(x.shape[2] >= 2 and x.shape[3] >= 2,
             "downsample needs spatial dims >= 2")
    return conv_bn(x, w)


def model_forward_with_stages(x: Array, weights: ModelWeights,
                              cfg: VariantConfig) -> tuple[Array, list[Array]]:
    """Returns (logits, per-stage feature maps)."""
    _require(x.ndim == 4 and x.shape[1] == 3,
             f"input must be (n, 3, h, w), got {x.shape}")
    _require(x.shape[2] % 32 == 0 and x.shape[3] % 32 == 0,
             f"input dims must be divisible by 32, got {x.shape[2]}x{x.shape[3]}")
    t = stem_forward(x, weights.stem)
    stage_outputs = []
    for i in range(3):
        for block in weights.stages[i]:
            t = mbconv_forward(t, block)
        stage_outputs.append(t)
        t = downsample_forward(t, weights.downsamples[i])
    for block in weights.svga_blocks:
        t = svga_block_forward(t, block)
    stage_outputs.append(t)
    t = gelu(conv_bn(t, weights.head_conv))
    pooled = global_avg_pool(t)
    logits = linear(pooled, weights.head_weight, weights.head_bias)
    return logits, stage_outputs


def model_forward(x: Array, weights: ModelWeights, cfg: VariantConfig) -> Array:
    return model_forward_with_stages(x, weights, cfg)[0]


def _conv_bn_entries(prefix: str, p: ConvBn):
    yield prefix + ".conv.weight", p.weight
    yield prefix + ".conv.bias", p.bias
    yield prefix + ".bn.gamma", p.gamma
    yield prefix + ".bn.beta", p.beta
    yield prefix + ".bn.mean", p.mean
    yield prefix + ".bn.var", p.var


def named_params(w: ModelWeights):
    """All parameter arrays with unique names, in deterministic order."""
    for i, p in enumerate(w.stem):
        yield from _conv_bn_entries(f"stem.{i}", p)
    for s, blocks in enumerate(w.stages, start=1):
        for b, mb in enumerate(blocks):
            yield from _conv_bn_entries(f"stage{s}.{b}.expand", mb.expand)
            yield from _conv_bn_entries(f"stage{s}.{b}.depthwise", mb.depthwise)
            yield from _conv_bn_entries(f"stage{s}.{b}.project", mb.project)
        yield from _conv_bn_entries(f"downsample{s}", w.downsamples[s - 1])
    for b, blk in enumerate(w.svga_blocks):
        yield from _conv_bn_entries(f"stage4.{b}.grapher.w_in", blk.grapher.w_in)
        yield from _conv_bn_entries(f"stage4.{b}.grapher.proj", blk.grapher.proj)
        yield from _conv_bn_entries(f"stage4.{b}.grapher.w_out", blk.grapher.w_out)
        yield from _conv_bn_entries(f"stage4.{b}.ffn.w1", blk.ffn.w1)
        yield from _conv_bn_entries(f"stage4.{b}.ffn.w2", blk.ffn.w2)
    yield from _conv_bn_entries("head.conv", w.head_conv)
    yield "head.fc.weight", w.head_weight
    yield "head.fc.bias", w.head_bias


def count_params(w: ModelWeights) -> int:
    """Learnable parameter count: convs, batch-norm affine terms, classifier.
    Batch-norm running statistics are state, not parameters, and are skipped.
    """
    total = 0
    for name, arr in named_params(w):
        if name.endswith(".bn.mean") or name.endswith(".bn.var"):
            continue
        total += arr.size
    return total


def _conv_macs(spec: ConvSpec, h: int, w: int) -> tuple[int, int, int]:
    oh, ow = spec.out_size(h, w)
    kh, kw = spec.kernel
    macs = oh * ow * spec.out_channels * (spec.in_channels // spec.groups) * kh * kw
    return macs, oh, ow


def count_macs(cfg: VariantConfig, h: int, w: int) -> int:
    """Multiply-accumulate count for one image (batch 1) at h x w.

    Only convolutions and the classifier contribute; the roll, subtract and
    max steps of the graph aggregation are MAC-free.
    """
    _require(h % 32 == 0 and w % 32 == 0,
             f"input dims must be divisible by 32, got {h}x{w}")
    c1, c2, c3, c4 = cfg.stage_channels
    total = 0
    m, h, w = _conv_macs(ConvSpec(3, c1 // 2, (3, 3), 2, 1), h, w)
    total += m
    m, h, w = _conv_macs(ConvSpec(c1 // 2, c1, (3, 3), 2, 1), h, w)
    total += m
    for i in range(3):
        c = cfg.stage_channels[i]
        hidden = cfg.expansion * c
        per_block = (
            _conv_macs(ConvSpec(c, hidden, (1, 1)), h, w)[0]
            + _conv_macs(ConvSpec(hidden, hidden, (3, 3), 1, 1, groups=hidden), h, w)[0]
            + _conv_macs(ConvSpec(hidden, c, (1, 1)), h, w)[0]
        )
        total += cfg.stage_depths[i] * per_block
        m, h, w = _conv_macs(ConvSpec(c, cfg.stage_channels[i + 1], (3, 3), 2, 1), h, w)
        total += m
    per_svga = (
        _conv_macs(ConvSpec(c4, c4, (1, 1)), h, w)[0]
        + _conv_macs(ConvSpec(2 * c4, 2 * c4, (1, 1)), h, w)[0]
        + _conv_macs(ConvSpec(2 * c4, c4, (1, 1)), h, w)[0]
        + _conv_macs(ConvSpec(c4, cfg.ffn_ratio * c4, (1, 1)), h, w)[0]
        + _conv_macs(ConvSpec(cfg.ffn_ratio * c4, c4, (1, 1)), h, w)[0]
    )
    total += cfg.stage_depths[3] * per_svga
    total += _conv_macs(ConvSpec(c4, cfg.head_hidden, (1, 1)), h, w)[0]
    total += cfg.head_hidden * cfg.num_classes
    return total


def stage_resolutions(h: int, w: int) -> list[tuple[int, int]]:
    """Spatial size of each of the four stages for an h x w input."""
    sizes = []
    ch, cw = h, w
    for _ in range(2):  # stem convs
        ch, cw = (ch + 2 - 3) // 2 + 1, (cw + 2 - 3) // 2 + 1
    sizes.append((ch, cw))
    for _ in range(3):  # downsamples
        ch, cw = (ch + 2 - 3) // 2 + 1, (cw + 2 - 3) // 2 + 1
        sizes.append((ch, cw))
    return sizes
