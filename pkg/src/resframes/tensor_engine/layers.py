"""Stateful layer objects built on :mod:`functional`.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into its :class:`ParamTensor` objects during
``backward``. A layer therefore supports one outstanding forward at a time.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .optim import ParamTensor


def kaiming_normal(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Module:
    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)

    def children(self) -> list[tuple[str, "Module"]]:
        return []

    def own_params(self) -> dict[str, ParamTensor]:
        return {}

    def own_buffers(self) -> dict[str, np.ndarray]:
        return {}

    def kink_state(self):
        """Branch pattern of the last forward (relu masks, pool argmax), if any."""
        return None

    def named_parameters(self, prefix: str = ""):
        for name, p in self.own_params().items():
            yield prefix + name, p
        for cname, child in self.children():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = ""):
        for name, b in self.own_buffers().items():
            yield prefix + name, b
        for cname, child in self.children():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[ParamTensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Conv3d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, bias=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = F.ConvSpec(in_channels, out_channels, kernel, stride, padding)
        fan_in = in_channels * int(np.prod(self.spec.kernel))
        self.weight = ParamTensor(kaiming_normal(self.spec.weight_shape, fan_in, rng))
        self.bias = ParamTensor(np.zeros(out_channels, np.float32)) if bias else None

    def own_params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def forward(self, x, training=False):
        self._x = x
        b = self.bias.value if self.bias is not None else None
        return F.conv3d_forward(x, self.weight.value, b, self.spec)

    def backward(self, grad):
        gx, gw, gb = F.conv3d_backward(grad, self._x, self.weight.value, self.spec)
        self.weight.accumulate(gw)
        if self.bias is not None:
            self.bias.accumulate(gb)
        return gx

    def __repr__(self):
        s = self.spec
        return f"Conv3d({s.in_channels}, {s.out_channels}, k={s.kernel}, s={s.stride}, p={s.padding})"


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, bias=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = F.conv2d_spec(in_channels, out_channels, kernel, stride, padding)
        kshape = self.spec.kernel[1:]
        fan_in = in_channels * int(np.prod(kshape))
        self.weight = ParamTensor(kaiming_normal((out_channels, in_channels) + kshape, fan_in, rng))
        self.bias = ParamTensor(np.zeros(out_channels, np.float32)) if bias else None

    own_params = Conv3d.own_params

    def forward(self, x, training=False):
        self._x = x
        b = self.bias.value if self.bias is not None else None
        return F.conv2d_forward(x, self.weight.value, b, self.spec)

    def backward(self, grad):
        gx, gw, gb = F.conv2d_backward(grad, self._x, self.weight.value, self.spec)
        self.weight.accumulate(gw)
        if self.bias is not None:
            self.bias.accumulate(gb)
        return gx


class BatchNorm(Module):
    """Batch normalization over every axis except the channel axis."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = ParamTensor(np.ones(channels, np.float32))
        self.beta = ParamTensor(np.zeros(channels, np.float32))
        self.stats = F.RunningStats(
            np.zeros(channels, np.float32), np.ones(channels, np.float32), momentum
        )
        self.eps = eps

    def own_params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def own_buffers(self):
        return {"running_mean": self.stats.mean, "running_var": self.stats.var}

    def forward(self, x, training=False):
        out, self._cache = F.batchnorm_forward(
            x, self.gamma.value, self.beta.value, self.stats,
            "train" if training else "eval", self.eps,
        )
        return out

    def backward(self, grad):
        gx, gg, gb = F.batchnorm_backward(grad, self.gamma.value, self._cache)
        self.gamma.accumulate(gg)
        self.beta.accumulate(gb)
        return gx


class ReLU(Module):
    def forward(self, x, training=False):
        self._x = x
        return F.relu_forward(x)

    def backward(self, grad):
        return F.relu_backward(grad, self._x)

    def kink_state(self):
        return self._x > 0


class MaxPool3d(Module):
    def __init__(self, kernel, stride=None, padding=0):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x, training=False):
        out, self._cache = F.max_pool3d_forward(x, self.kernel, self.stride, self.padding)
        return out

    def backward(self, grad):
        return F.max_pool3d_backward(grad, self._cache)

    def kink_state(self):
        return self._cache[0]


class MaxPool2d(MaxPool3d):
    """NCHW max pooling, run as a 3D pool with a unit temporal window."""

    def __init__(self, kernel, stride=None, padding=0):
        expand = lambda v: None if v is None else (1,) + ((v, v) if isinstance(v, int) else tuple(v))
        super().__init__(expand(kernel), expand(stride), (0,) + ((padding,) * 2 if isinstance(padding, int) else tuple(padding)))

    def forward(self, x, training=False):
        return super().forward(x[:, :, None], training)[:, :, 0]

    def backward(self, grad):
        return super().backward(grad[:, :, None])[:, :, 0]


class GlobalAvgPool(Module):
    def forward(self, x, training=False):
        self._shape = x.shape
        return F.global_avg_pool_forward(x)

    def backward(self, grad):
        return F.global_avg_pool_backward(grad, self._shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = ParamTensor(kaiming_normal((out_features, in_features), in_features, rng))
        self.bias = ParamTensor(np.zeros(out_features, np.float32))

    def own_params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False):
        self._x = x
        return F.linear_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        gx, gw, gb = F.linear_backward(grad, self._x, self.weight.value)
        self.weight.accumulate(gw)
        self.bias.accumulate(gb)
        return gx


class Sequential(Module):
    def __init__(self, layers):
        self.layers: list[tuple[str, Module]] = list(layers)
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")

    def children(self):
        return self.layers

    def __getitem__(self, name: str) -> Module:
        for n, m in self.layers:
            if n == name:
                return m
        raise KeyError(name)

    def forward(self, x, training=False):
        for _, layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ResidualBlock(Module):
    """relu(body(x) + shortcut(x)); an absent shortcut means identity."""

    def __init__(self, body: Sequential, shortcut: Module | None = None):
        self.body = body
        self.shortcut = shortcut

    def children(self):
        c = [("body", self.body)]
        if self.shortcut is not None:
            c.append(("shortcut", self.shortcut))
        return c

    def forward(self, x, training=False):
        s = self.shortcut.forward(x, training) if self.shortcut is not None else x
        y = self.body.forward(x, training) + s
        self._mask = y > 0
        return y * self._mask

    def kink_state(self):
        return self._mask

    def backward(self, grad):
        g = grad * self._mask
        gx = self.body.backward(g)
        if self.shortcut is not None:
            gx = gx + self.shortcut.backward(g)
        else:
            gx = gx + g
        return gx
