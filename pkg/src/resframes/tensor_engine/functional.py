"""Forward and backward kernels for every layer used by the networks.

Tensors are plain numpy arrays. Activations are float32 unless the caller
passes float64 (the gradient checker does), and the kernels preserve the
input dtype. Convolutions are lowered to patch matrices in chunks so that
the column buffer never exceeds ``_COLS_BUDGET`` elements.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray

_COLS_BUDGET = 24_000_000
_AXES = ("T", "H", "W")


class ShapeError(ValueError):
    """Raised when tensor extents do not fit an operation."""


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"expected 3 extents, got {v}")
    return v


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        object.__setattr__(self, "padding", _triple(self.padding))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError(f"invalid kernel/stride/padding in {self}")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + self.kernel

    def output_extents(self, extents) -> tuple[int, int, int]:
        out = []
        for axis, n, k, s, p in zip(_AXES, extents, self.kernel, self.stride, self.padding):
            o = (n + 2 * p - k) // s + 1
            if n + 2 * p < k or o < 1:
                raise ShapeError(
                    f"axis {axis}: padded extent {n + 2 * p} is smaller than kernel {k}"
                )
            out.append(o)
        return tuple(out)


def _check_conv_input(x: Tensor, weight: Tensor, spec: ConvSpec) -> None:
    if x.ndim != 5:
        raise ShapeError(f"conv3d expects NCTHW input, got rank {x.ndim}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"axis C: input has {x.shape[1]} channels, spec expects {spec.in_channels}"
        )
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != expected {spec.weight_shape}")


def _pad5(x: Tensor, pad, value=0.0) -> Tensor:
    pt, ph, pw = pad
    if pt == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)), constant_values=value)


def _chunks(n: int, t_out: int, per_row: int):
    """Yield (n0, n1, t0, t1) blocks whose column buffers fit the budget."""
    per_sample = per_row * t_out
    if per_sample <= _COLS_BUDGET:
        step = max(1, _COLS_BUDGET // per_sample)
        for n0 in range(0, n, step):
            yield n0, min(n, n0 + step), 0, t_out
    else:
        tstep = max(1, _COLS_BUDGET // per_row)
        for n0 in range(n):
            for t0 in range(0, t_out, tstep):
                yield n0, n0 + 1, t0, min(t_out, t0 + tstep)


def _columns(xp: Tensor, spec: ConvSpec, n0, n1, t0, t1, out_hw) -> Tensor:
    """Patch matrix of shape (C*kT*kH*kW, n*t*Ho*Wo) for one chunk."""
    kt, kh, kw = spec.kernel
    st, sh, sw = spec.stride
    ho, wo = out_hw
    seg = xp[n0:n1, :, t0 * st:(t1 - 1) * st + kt]
    win = sliding_window_view(seg, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
    win = win[:, :, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(1, 5, 6, 7, 0, 2, 3, 4))
    return cols.reshape(spec.in_channels * kt * kh * kw, -1)


def conv3d_forward(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    _check_conv_input(x, weight, spec)
    n = x.shape[0]
    to, ho, wo = spec.output_extents(x.shape[2:])
    xp = _pad5(x, spec.padding)
    out = np.empty((n, spec.out_channels, to, ho, wo), dtype=x.dtype)
    wmat = weight.reshape(spec.out_channels, -1).astype(x.dtype, copy=False)
    per_row = wmat.shape[1] * ho * wo
    for n0, n1, t0, t1 in _chunks(n, to, per_row):
        cols = _columns(xp, spec, n0, n1, t0, t1, (ho, wo))
        res = (wmat @ cols).reshape(spec.out_channels, n1 - n0, t1 - t0, ho, wo)
        out[n0:n1, :, t0:t1] = res.transpose(1, 0, 2, 3, 4)
    if bias is not None:
        out += bias.astype(x.dtype, copy=False).reshape(1, -1, 1, 1, 1)
    return out


def conv3d_backward(grad_out: Tensor, saved_input: Tensor, weight: Tensor, spec: ConvSpec):
    """Return (grad_input, grad_weight, grad_bias) for :func:`conv3d_forward`."""
    x = saved_input
    _check_conv_input(x, weight, spec)
    n = x.shape[0]
    to, ho, wo = spec.output_extents(x.shape[2:])
    expected = (n, spec.out_channels, to, ho, wo)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    kt, kh, kw = spec.kernel
    st, sh, sw = spec.stride
    pt, ph, pw = spec.padding
    dtype = x.dtype
    xp = _pad5(x, spec.padding)
    gxp = np.zeros(xp.shape, dtype=dtype)
    wmat = weight.reshape(spec.out_channels, -1).astype(dtype, copy=False)
    gw = np.zeros(wmat.shape, dtype=np.float64)
    per_row = wmat.shape[1] * ho * wo
    for n0, n1, t0, t1 in _chunks(n, to, per_row):
        g = grad_out[n0:n1, :, t0:t1].transpose(1, 0, 2, 3, 4).reshape(spec.out_channels, -1)
        g = g.astype(dtype, copy=False)
        cols = _columns(xp, spec, n0, n1, t0, t1, (ho, wo))
        gw += g @ cols.T
        del cols
        gcols = (wmat.T @ g).reshape(
            spec.in_channels, kt, kh, kw, n1 - n0, t1 - t0, ho, wo
        )
        tgt = gxp[n0:n1].transpose(1, 0, 2, 3, 4)
        tb = t0 * st
        for a in range(kt):
            for b in range(kh):
                for c in range(kw):
                    tgt[:, :, tb + a:tb + a + st * (t1 - t0):st,
                        b:b + sh * ho:sh, c:c + sw * wo:sw] += gcols[:, a, b, c]
    grad_input = gxp[:, :, pt:pt + x.shape[2], ph:ph + x.shape[3], pw:pw + x.shape[4]]
    grad_bias = grad_out.sum(axis=(0, 2, 3, 4), dtype=np.float64).astype(weight.dtype)
    return (
        np.ascontiguousarray(grad_input),
        gw.reshape(weight.shape).astype(weight.dtype),
        grad_bias,
    )


def conv2d_spec(in_channels, out_channels, kernel, stride=1, padding=0) -> ConvSpec:
    """A :class:`ConvSpec` for an NCHW convolution (temporal extent fixed at 1)."""
    k = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
    s = (stride, stride) if isinstance(stride, int) else tuple(stride)
    p = (padding, padding) if isinstance(padding, int) else tuple(padding)
    return ConvSpec(in_channels, out_channels, (1,) + k, (1,) + s, (0,) + p)


def _check_2d(x: Tensor, spec: ConvSpec):
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got rank {x.ndim}")
    if spec.kernel[0] != 1 or spec.stride[0] != 1 or spec.padding[0] != 0:
        raise ShapeError("conv2d spec must have unit temporal kernel/stride and no temporal padding")


def conv2d_forward(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """NCHW convolution; ``weight`` is (out, in, kH, kW)."""
    _check_2d(x, spec)
    out = conv3d_forward(x[:, :, None], weight[:, :, None], bias, spec)
    return out[:, :, 0]


def conv2d_backward(grad_out: Tensor, saved_input: Tensor, weight: Tensor, spec: ConvSpec):
    _check_2d(saved_input, spec)
    gx, gw, gb = conv3d_backward(grad_out[:, :, None], saved_input[:, :, None], weight[:, :, None], spec)
    return gx[:, :, 0], gw[:, :, 0], gb


# ---------------------------------------------------------------- batchnorm


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1


def _bn_axes(x: Tensor) -> tuple[int, ...]:
    return (0,) + tuple(range(2, x.ndim))


def _bn_shape(x: Tensor) -> tuple[int, ...]:
    return (1, -1) + (1,) * (x.ndim - 2)


def batchnorm_forward(x, gamma, beta, running: RunningStats, mode: str = "train", eps: float = 1e-5):
    """Return (output, cache). ``running`` is updated in place in train mode."""
    if x.ndim < 2 or x.shape[1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise ShapeError(f"batchnorm: gamma/beta length {gamma.shape} does not match channels of {x.shape}")
    axes = _bn_axes(x)
    count = x.size // x.shape[1] if x.size else 0
    if count == 0:
        raise ShapeError("batchnorm: zero-size batch")
    shp = _bn_shape(x)
    if mode == "train":
        x64 = x.astype(np.float64)
        mean = x64.mean(axis=axes)
        var = ((x64 - mean.reshape(shp)) ** 2).mean(axis=axes)
        m = running.momentum
        unbiased = var * count / max(count - 1, 1)
        running.mean[...] = (1 - m) * running.mean + m * mean
        running.var[...] = (1 - m) * running.var + m * unbiased
    elif mode == "eval":
        mean = running.mean.astype(np.float64)
        var = running.var.astype(np.float64)
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = ((x - mean.reshape(shp).astype(x.dtype)) * invstd.reshape(shp).astype(x.dtype))
    out = xhat * gamma.reshape(shp).astype(x.dtype) + beta.reshape(shp).astype(x.dtype)
    return out, (xhat, invstd, mode)


def batchnorm_backward(grad_out, gamma, cache):
    """Return (grad_input, grad_gamma, grad_beta)."""
    xhat, invstd, mode = cache
    axes = _bn_axes(xhat)
    shp = _bn_shape(xhat)
    g64 = grad_out.astype(np.float64)
    ggamma = (g64 * xhat).sum(axis=axes)
    gbeta = g64.sum(axis=axes)
    scale = (gamma.astype(np.float64) * invstd).reshape(shp)
    if mode == "eval":
        gx = g64 * scale
    else:
        count = xhat.size // xhat.shape[1]
        gx = scale / count * (
            count * g64 - gbeta.reshape(shp) - xhat * ggamma.reshape(shp)
        )
    return gx.astype(grad_out.dtype), ggamma.astype(gamma.dtype), gbeta.astype(gamma.dtype)


# ---------------------------------------------------------------- simple layers


def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(grad_out: Tensor, saved_input: Tensor) -> Tensor:
    return grad_out * (saved_input > 0)


def max_pool3d_forward(x: Tensor, kernel, stride=None, padding=0):
    """Return (output, argmax) where argmax holds the flat window offset of each max."""
    kernel = _triple(kernel)
    stride = _triple(stride) if stride is not None else kernel
    padding = _triple(padding)
    if x.ndim != 5:
        raise ShapeError(f"max_pool3d expects NCTHW input, got rank {x.ndim}")
    out_ext = []
    for axis, n, k, s, p in zip(_AXES, x.shape[2:], kernel, stride, padding):
        if n + 2 * p < k:
            raise ShapeError(f"axis {axis}: pooling window {k} larger than padded input {n + 2 * p}")
        out_ext.append((n + 2 * p - k) // s + 1)
    to, ho, wo = out_ext
    xp = _pad5(x, padding, value=-np.inf)
    out = np.full(x.shape[:2] + (to, ho, wo), -np.inf, dtype=x.dtype)
    arg = np.zeros(out.shape, dtype=np.int32)
    (kt, kh, kw), (st, sh, sw) = kernel, stride
    j = 0
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                v = xp[:, :, a:a + st * to:st, b:b + sh * ho:sh, c:c + sw * wo:sw]
                better = v > out
                out[better] = v[better]
                arg[better] = j
                j += 1
    return out, (arg, x.shape, kernel, stride, padding)


def max_pool3d_backward(grad_out: Tensor, cache) -> Tensor:
    arg, in_shape, kernel, stride, padding = cache
    (kt, kh, kw), (st, sh, sw), (pt, ph, pw) = kernel, stride, padding
    to, ho, wo = grad_out.shape[2:]
    gxp = np.zeros(in_shape[:2] + tuple(n + 2 * p for n, p in zip(in_shape[2:], padding)),
                   dtype=grad_out.dtype)
    j = 0
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                gxp[:, :, a:a + st * to:st, b:b + sh * ho:sh, c:c + sw * wo:sw] += grad_out * (arg == j)
                j += 1
    return gxp[:, :, pt:pt + in_shape[2], ph:ph + in_shape[3], pw:pw + in_shape[4]]


def global_avg_pool_forward(x: Tensor) -> Tensor:
    """Average over every axis after the channel axis: (N, C, ...) -> (N, C)."""
    return x.reshape(x.shape[0], x.shape[1], -1).mean(axis=2, dtype=np.float64).astype(x.dtype)


def global_avg_pool_backward(grad_out: Tensor, in_shape) -> Tensor:
    count = int(np.prod(in_shape[2:]))
    g = (grad_out / count).reshape(grad_out.shape + (1,) * (len(in_shape) - 2))
    return np.broadcast_to(g, in_shape).astype(grad_out.dtype)


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x @ weight.T.astype(x.dtype, copy=False)
    if bias is not None:
        out += bias.astype(x.dtype, copy=False)
    return out


def linear_backward(grad_out: Tensor, saved_input: Tensor, weight: Tensor):
    gx = grad_out @ weight.astype(grad_out.dtype, copy=False)
    gw = (grad_out.T.astype(np.float64) @ saved_input.astype(np.float64)).astype(weight.dtype)
    gb = grad_out.sum(axis=0, dtype=np.float64).astype(weight.dtype)
    return gx, gw, gb


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    z = logits.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=axis, keepdims=True)).astype(logits.dtype)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be N x K, got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits passed to softmax_cross_entropy")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {n} class indices in [0, {k})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)
