"""Finite-difference validation of a hand-derived backward pass through one
SVGA block (float64 only).

The analytic side records a tape during the forward pass and applies the
chain rule through every op in the block: circular roll (transposed as the
inverse roll), subtraction, the elementwise max fold (gradient routed to the
strictly greater operand; ties go to the accumulated value, which entered
the fold earlier), channel concat (split), 1x1 convolution, inference batch
norm treated as a per-channel affine map, and the exact GeLU derivative.
The reference side is a central difference of the scalar loss sum(output).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .svga import (
    FfnWeights,
    GrapherWeights,
    SvgaBlockWeights,
    svga_block_forward,
)
from .tensor_core import Array, ConvBn, ConvSpec, batchnorm_infer, conv2d, gelu, gelu_grad, roll_2d


class GradCheckError(RuntimeError):
    pass


@dataclass
class _Tape:
    conv_bn: dict[str, tuple[Array, Array]] = field(default_factory=dict)
    act_pre: dict[str, Array] = field(default_factory=dict)
    folds: list[tuple[int, int, Array, Array]] = field(default_factory=list)
    t1: Array | None = None
    xj: Array | None = None
    y: Array | None = None
    min_tie_gap: float = math.inf
    min_act_abs: float = math.inf


def _bn_scale(p: ConvBn) -> Array:
    return p.gamma / np.sqrt(p.var + p.eps)


def _conv_bn_tape(x: Array, p: ConvBn, name: str, tape: _Tape) -> Array:
    pre = conv2d(x, p.spec, p.weight, p.bias)
    tape.conv_bn[name] = (x, pre)
    return batchnorm_infer(pre, p.gamma, p.beta, p.mean, p.var, p.eps)


def _conv_bn_backward(g: Array, p: ConvBn, name: str, tape: _Tape,
                      grads: dict[str, Array]) -> Array:
    x_in, pre = tape.conv_bn[name]
    inv_std = 1.0 / np.sqrt(p.var + p.eps)
    grads[name + ".gamma"] = np.einsum(
        "nchw,nchw->c", g, (pre - p.mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1))
    grads[name + ".beta"] = g.sum(axis=(0, 2, 3))
    g_pre = g * _bn_scale(p).reshape(1, -1, 1, 1)
    wmat = p.weight[:, :, 0, 0]
    grads[name + ".weight"] = np.einsum("nohw,nihw->oi", g_pre, x_in)[:, :, None, None]
    grads[name + ".bias"] = g_pre.sum(axis=(0, 2, 3))
    return np.einsum("nohw,oi->nihw", g_pre, wmat)


def _aggregate_tape(x: Array, k: int, tape: _Tape) -> Array:
    h, w = x.shape[2], x.shape[3]
    xj = np.zeros_like(x)
    shifts = [(m * k, 0) for m in range(0, -(-h // k))] + \
             [(0, m * k) for m in range(0, -(-w // k))]
    for down, right in shifts:
        cand = x - roll_2d(x, down, right)
        tape.folds.append((down, right, cand, xj))
        if (down, right) != (0, 0):
            gap = float(np.min(np.abs(cand - xj)))
            tape.min_tie_gap = min(tape.min_tie_gap, gap)
        xj = np.maximum(cand, xj)
    return xj


def _aggregate_backward(g_xj: Array, tape: _Tape) -> Array:
    g_x = np.zeros_like(g_xj)
    g_acc = g_xj
    for down, right, cand, acc_prev in reversed(tape.folds):
        win = cand > acc_prev
        g_cand = np.where(win, g_acc, 0.0)
        g_acc = np.where(win, 0.0, g_acc)
        g_x = g_x + g_cand - roll_2d(g_cand, -down, -right)
    # g_acc now sits on the zero initialization and is discarded
    return g_x


def _act(x: Array, identity: bool) -> Array:
    return x if identity else gelu(x)


def _act_tape(x: Array, name: str, tape: _Tape, identity: bool) -> Array:
    tape.act_pre[name] = x
    if not identity:
        tape.min_act_abs = min(tape.min_act_abs, float(np.min(np.abs(x))))
    return _act(x, identity)


def _act_backward(g: Array, name: str, tape: _Tape, identity: bool) -> Array:
    if identity:
        return g
    return g * gelu_grad(tape.act_pre[name])


def _forward_tape(x: Array, w: SvgaBlockWeights, identity_act: bool) -> tuple[Array, _Tape]:
    tape = _Tape()
    c = x.shape[1]
    t1 = _conv_bn_tape(x, w.grapher.w_in, "grapher.w_in", tape)
    tape.t1 = t1
    xj = _aggregate_tape(t1, w.k, tape)
    tape.xj = xj
    cat = np.concatenate([t1, xj], axis=1)
    t3 = _conv_bn_tape(cat, w.grapher.proj, "grapher.proj", tape)
    t4 = _act_tape(t3, "grapher", tape, identity_act)
    t6 = _conv_bn_tape(t4, w.grapher.w_out, "grapher.w_out", tape)
    y = t6 + x
    tape.y = y
    u1 = _conv_bn_tape(y, w.ffn.w1, "ffn.w1", tape)
    u2 = _act_tape(u1, "ffn", tape, identity_act)
    u4 = _conv_bn_tape(u2, w.ffn.w2, "ffn.w2", tape)
    z = u4 + y
    assert cat.shape[1] == 2 * c
    return z, tape


def _backward_tape(tape: _Tape, w: SvgaBlockWeights, identity_act: bool,
                   g_z: Array) -> dict[str, Array]:
    grads: dict[str, Array] = {}
    c = tape.t1.shape[1]
    g_y = g_z.copy()
    g_u2 = _conv_bn_backward(g_z, w.ffn.w2, "ffn.w2", tape, grads)
    g_u1 = _act_backward(g_u2, "ffn", tape, identity_act)
    g_y += _conv_bn_backward(g_u1, w.ffn.w1, "ffn.w1", tape, grads)

    g_x = g_y.copy()
    g_t4 = _conv_bn_backward(g_y, w.grapher.w_out, "grapher.w_out", tape, grads)
    g_t3 = _act_backward(g_t4, "grapher", tape, identity_act)
    g_cat = _conv_bn_backward(g_t3, w.grapher.proj, "grapher.proj", tape, grads)
    g_t1 = g_cat[:, :c]
    g_xj = g_cat[:, c:]
    g_t1 = g_t1 + _aggregate_backward(g_xj, tape)
    g_x += _conv_bn_backward(g_t1, w.grapher.w_in, "grapher.w_in", tape, grads)
    grads["x"] = g_x
    return grads


def _random_conv_bn(rng: np.random.Generator, in_c: int, out_c: int,
                    dtype=np.float64) -> ConvBn:
    spec = ConvSpec(in_c, out_c, (1, 1))
    return ConvBn(
        spec=spec,
        weight=rng.normal(0.0, 0.4, size=spec.weight_shape()).astype(dtype),
        bias=rng.normal(0.0, 0.1, size=out_c).astype(dtype),
        gamma=rng.uniform(0.7, 1.3, size=out_c).astype(dtype),
        beta=rng.normal(0.0, 0.1, size=out_c).astype(dtype),
        mean=rng.normal(0.0, 0.1, size=out_c).astype(dtype),
        var=rng.uniform(0.5, 1.5, size=out_c).astype(dtype),
    )


def random_block_weights(c: int, k: int, rng: np.random.Generator,
                         ffn_ratio: int = 4, dtype=np.float64) -> SvgaBlockWeights:
    """Random SVGA block weights (float64 default, as the checker needs)."""
    grapher = GrapherWeights(
        w_in=_random_conv_bn(rng, c, c, dtype),
        proj=_random_conv_bn(rng, 2 * c, 2 * c, dtype),
        w_out=_random_conv_bn(rng, 2 * c, c, dtype),
    )
    ffn = FfnWeights(
        w1=_random_conv_bn(rng, c, ffn_ratio * c, dtype),
        w2=_random_conv_bn(rng, ffn_ratio * c, c, dtype),
        ratio=ffn_ratio,
    )
    return SvgaBlockWeights(grapher=grapher, ffn=ffn, k=k)


def _named_weight_arrays(w: SvgaBlockWeights) -> list[tuple[str, Array]]:
    out = []
    for prefix, cb in (("grapher.w_in", w.grapher.w_in),
                       ("grapher.proj", w.grapher.proj),
                       ("grapher.w_out", w.grapher.w_out),
                       ("ffn.w1", w.ffn.w1),
                       ("ffn.w2", w.ffn.w2)):
        out += [(prefix + ".weight", cb.weight), (prefix + ".bias", cb.bias),
                (prefix + ".gamma", cb.gamma), (prefix + ".beta", cb.beta)]
    return out


def grad_check_svga(shape: tuple[int, int, int, int] = (1, 4, 4, 4), k: int = 2,
                    seed: int = 0, *, step: float = 1e-5,
                    identity_act: bool = False, margin: float = 1e-6,
                    max_resamples: int = 25) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks the gradient of sum(block(x)) with respect to x and every conv
    weight, conv bias, and batch-norm affine parameter. Inputs are resampled
    (deterministically) whenever a max fold has a tie within `margin` or a
    GeLU pre-activation is within `margin` of zero.
    """
    n, c, h, w_ = shape
    if n * c * h * w_ > 4096:
        raise ValueError("gradient check limited to <= 4096 elements")
    for attempt in range(max_resamples):
        rng = np.random.default_rng([seed, attempt])
        weights = random_block_weights(c, k, rng)
        x = rng.normal(size=shape)
        z, tape = _forward_tape(x, weights, identity_act)
        z_finite = bool(np.all(np.isfinite(z)))
        if z_finite and tape.min_tie_gap < margin:
            continue
        if z_finite and not identity_act and tape.min_act_abs < margin:
            continue
        if z_finite and not identity_act:
            ref = svga_block_forward(x, weights)
            if not np.array_equal(z, ref):
                raise GradCheckError("tape forward diverged from block forward")
        grads = _backward_tape(tape, weights, identity_act, np.ones_like(z))
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise GradCheckError(f"non-finite gradient for {name}")

        def loss() -> float:
            if identity_act:
                # extended precision kills the cancellation noise of the
                # difference quotient; the identity path needs no erf, so
                # every kernel supports it
                out, _ = _forward_tape(x.astype(np.longdouble), weights, True)
            else:
                out = svga_block_forward(x, weights)
            return float(np.sum(out))

        max_rel = 0.0
        for name, arr in [("x", x)] + _named_weight_arrays(weights):
            analytic = grads[name]
            for i in range(arr.size):
                orig = arr.flat[i]
                arr.flat[i] = orig + step
                lp = loss()
                arr.flat[i] = orig - step
                lm = loss()
                arr.flat[i] = orig
                fd = (lp - lm) / (2.0 * step)
                a = float(analytic.flat[i])
                rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
                max_rel = max(max_rel, rel)
        return max_rel
    raise GradCheckError(
        f"no input free of near-ties found in {max_resamples} resamples")
