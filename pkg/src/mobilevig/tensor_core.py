"""Dense NCHW tensor kernels: roll, convolution, inference batch norm, GeLU,
pooling, concatenation and elementwise arithmetic.

All kernels are pure functions of numpy arrays. The main path is float32;
float64 inputs are supported (needed by the gradient checker). Every kernel
computes each output element with an operation sequence that does not depend
on the element's position or on how many other elements are in the call:
elementwise ops are exactly rounded per element, and matrix contractions are
evaluated one output pixel at a time. As a consequence results are bitwise
reproducible and invariant under pixel permutation or batch repacking, which
the graph-equivalence and equivariance checks in this package rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

Array = np.ndarray

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class ConvSpec:
    """Static configuration of a 2-D convolution (cross-correlation)."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self) -> None:
        kh, kw = self.kernel
        _require(self.in_channels >= 1 and self.out_channels >= 1,
                 "channel counts must be >= 1")
        _require(kh >= 1 and kw >= 1, "kernel dims must be >= 1")
        _require(self.stride >= 1, "stride must be >= 1")
        _require(self.padding >= 0, "padding must be >= 0")
        _require(self.groups >= 1, "groups must be >= 1")
        _require(self.in_channels % self.groups == 0,
                 f"in_channels {self.in_channels} not divisible by groups {self.groups}")
        _require(self.out_channels % self.groups == 0,
                 f"out_channels {self.out_channels} not divisible by groups {self.groups}")

    def weight_shape(self) -> tuple[int, int, int, int]:
        kh, kw = self.kernel
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        _require(oh >= 1 and ow >= 1,
                 f"kernel {self.kernel} does not fit {h}x{w} input with padding {self.padding}")
        return oh, ow


def _check_nchw(x: Array, name: str = "x") -> None:
    _require(x.ndim == 4, f"{name} must be 4-D (n, c, h, w), got {x.ndim}-D")
    _require(all(d >= 1 for d in x.shape), f"{name} has a zero-sized dimension")


def roll_2d(x: Array, down: int, right: int) -> Array:
    """Circular shift: out[n,c,i,j] = x[n,c,(i-down) mod h, (j-right) mod w]."""
    _check_nchw(x)
    return np.roll(x, (down, right), axis=(2, 3))


def _matvec_per_pixel(weight_mat: Array, cols: Array) -> Array:
    # cols: (pixels, K); weight_mat: (out_c, K). One matvec per pixel keeps
    # the per-element reduction order independent of pixel position/count.
    out_c = weight_mat.shape[0]
    if out_c == 1:
        acc = cols[:, 0] * weight_mat[0, 0]
        for k in range(1, weight_mat.shape[1]):
            acc = acc + cols[:, k] * weight_mat[0, k]
        return acc[:, None]
    return np.matmul(weight_mat, cols[:, :, None])[:, :, 0]


def _conv_dense(xp: Array, weight: Array, bias: Array, stride: int,
                oh: int, ow: int) -> Array:
    n = xp.shape[0]
    oc, _, kh, kw = weight.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, c, oh, ow, kh, kw) -> (n*oh*ow, c*kh*kw), reduction axis ordered
    # channel-major then kernel row-major
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, -1)
    out = _matvec_per_pixel(weight.reshape(oc, -1), cols) + bias
    return np.ascontiguousarray(out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2))


def _conv_depthwise(xp: Array, weight: Array, bias: Array, stride: int,
                    oh: int, ow: int) -> Array:
    c, _, kh, kw = weight.shape
    acc = None
    for ky in range(kh):
        for kx in range(kw):
            tap = xp[:, :, ky:ky + (oh - 1) * stride + 1:stride,
                     kx:kx + (ow - 1) * stride + 1:stride]
            term = tap * weight[:, 0, ky, kx].reshape(1, c, 1, 1)
            acc = term if acc is None else acc + term
    return acc + bias.reshape(1, c, 1, 1)


def conv2d(x: Array, spec: ConvSpec, weight: Array, bias: Array) -> Array:
    """Grouped 2-D cross-correlation with zero padding."""
    _check_nchw(x)
    _require(x.shape[1] == spec.in_channels,
             f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    weight = np.asarray(weight, dtype=x.dtype)
    bias = np.asarray(bias, dtype=x.dtype)
    _require(weight.shape == spec.weight_shape(),
             f"weight shape {weight.shape} != expected {spec.weight_shape()}")
    _require(bias.shape == (spec.out_channels,),
             f"bias shape {bias.shape} != ({spec.out_channels},)")
    oh, ow = spec.out_size(x.shape[2], x.shape[3])

    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    if spec.groups == spec.in_channels == spec.out_channels:
        return _conv_depthwise(xp, weight, bias, spec.stride, oh, ow)
    if spec.groups == 1:
        return _conv_dense(xp, weight, bias, spec.stride, oh, ow)
    icg = spec.in_channels // spec.groups
    ocg = spec.out_channels // spec.groups
    parts = [
        _conv_dense(xp[:, g * icg:(g + 1) * icg],
                    weight[g * ocg:(g + 1) * ocg],
                    bias[g * ocg:(g + 1) * ocg], spec.stride, oh, ow)
        for g in range(spec.groups)
    ]
    return np.concatenate(parts, axis=1)


def batchnorm_infer(x: Array, gamma: Array, beta: Array, mean: Array,
                    var: Array, eps: float = 1e-5) -> Array:
    """Inference batch norm: gamma * (x - mean) / sqrt(var + eps) + beta."""
    _check_nchw(x)
    c = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        _require(np.shape(v) == (c,), f"{name} must have shape ({c},)")
    _require(bool(np.all(np.asarray(var) >= 0)), "var must be non-negative")
    scale = (gamma / np.sqrt(var + eps)).astype(x.dtype)
    shift = np.asarray(beta, dtype=x.dtype)
    center = np.asarray(mean, dtype=x.dtype)
    return (x - center.reshape(1, c, 1, 1)) * scale.reshape(1, c, 1, 1) \
        + shift.reshape(1, c, 1, 1)


def gelu(x: Array) -> Array:
    """Exact GeLU, x * Phi(x), with Phi the standard normal CDF (erf form)."""
    return x * (0.5 * (1.0 + erf(x * _INV_SQRT2)))


def gelu_grad(x: Array) -> Array:
    """Derivative of exact GeLU: Phi(x) + x * phi(x)."""
    phi = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


def concat_channels(a: Array, b: Array) -> Array:
    _check_nchw(a, "a")
    _check_nchw(b, "b")
    _require(a.shape[0] == b.shape[0] and a.shape[2:] == b.shape[2:],
             f"batch/spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def _check_same_shape(a: Array, b: Array) -> None:
    _require(a.shape == b.shape, f"shape mismatch: {a.shape} vs {b.shape}")


def elem_add(a: Array, b: Array) -> Array:
    _check_same_shape(a, b)
    return a + b


def elem_sub(a: Array, b: Array) -> Array:
    _check_same_shape(a, b)
    return a - b


def elem_max(a: Array, b: Array) -> Array:
    _check_same_shape(a, b)
    return np.maximum(a, b)


def global_avg_pool(x: Array) -> Array:
    """Mean over all spatial positions, (n, c, h, w) -> (n, c)."""
    _check_nchw(x)
    return np.mean(x, axis=(2, 3))


def linear(x: Array, weight: Array, bias: Array) -> Array:
    """Affine map per batch row: (n, f) @ weight(out, f)^T + bias."""
    _require(x.ndim == 2, f"x must be 2-D, got {x.ndim}-D")
    weight = np.asarray(weight, dtype=x.dtype)
    bias = np.asarray(bias, dtype=x.dtype)
    _require(weight.ndim == 2 and weight.shape[1] == x.shape[1],
             f"weight shape {weight.shape} incompatible with input {x.shape}")
    _require(bias.shape == (weight.shape[0],),
             f"bias shape {bias.shape} != ({weight.shape[0]},)")
    # one matvec per batch row, same rationale as the conv kernel
    return np.matmul(weight, x[:, :, None])[:, :, 0] + bias


@dataclass
class ConvBn:
    """A convolution followed by inference batch norm, as one parameter bundle."""

    spec: ConvSpec
    weight: Array
    bias: Array
    gamma: Array
    beta: Array
    mean: Array
    var: Array
    eps: float = 1e-5


def conv_bn(x: Array, p: ConvBn) -> Array:
    y = conv2d(x, p.spec, p.weight, p.bias)
    return batchnorm_infer(y, p.gamma, p.beta, p.mean, p.var, p.eps)


def identity_conv_bn(spec: ConvSpec, weight: Array, bias: Array | None = None,
                     dtype=np.float32) -> ConvBn:
    """ConvBn whose batch norm is the identity (eps folded to zero)."""
    c = spec.out_channels
    one = np.ones(c, dtype=dtype)
    zero = np.zeros(c, dtype=dtype)
    if bias is None:
        bias = np.zeros(c, dtype=dtype)
    return ConvBn(spec, np.asarray(weight, dtype=dtype), np.asarray(bias, dtype=dtype),
                  gamma=one, beta=zero, mean=zero, var=one, eps=0.0)
