"""Network builders: ResNet-18-3D, R(2+1)D-18, a desk-scale 3D net and a 2D appearance net."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensor_engine import (
    BatchNorm,
    Conv2d,
    Conv3d,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    MaxPool3d,
    ReLU,
    ResidualBlock,
    Sequential,
)

ARCHS = ("resnet18_3d", "r2plus1d_18", "micro3d", "appearance2d")

RESNET_WIDTHS = (64, 128, 256, 512)
MICRO_WIDTHS = (8, 16, 32)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "micro3d"
    num_classes: int = 101
    delete_first_pool: bool = True
    width_multiplier: float = 1.0
    in_channels: int = 3

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if not self.width_multiplier > 0:
            raise ConfigError("width_multiplier must be > 0")
        if self.in_channels not in (1, 3):
            raise ConfigError("in_channels must be 1 or 3")

    @property
    def input_kind(self) -> str:
        """``frame`` for the 2D appearance net, ``clip`` otherwise."""
        return "frame" if self.arch == "appearance2d" else "clip"

    def to_dict(self) -> dict:
        return asdict(self)


class Network(Sequential):
    """Top-level layer graph producing (N, num_classes) logits.

    ``capture`` names a top-level layer whose output activation (forward) and
    incoming gradient (backward) are kept in :attr:`captured`, which is what
    Grad-CAM reads.
    """

    def __init__(self, layers, config: ModelConfig, cam_layer: str):
        super().__init__(layers)
        self.config = config
        self.num_classes = config.num_classes
        self.cam_layer = cam_layer
        self.captured: dict[str, np.ndarray] = {}
        self._capture = None

    def forward(self, x, training=False, capture: str | None = None):
        self._capture = capture
        self.captured = {}
        for name, layer in self.layers:
            x = layer.forward(x, training)
            if name == capture:
                self.captured["activation"] = x
        if capture is not None and "activation" not in self.captured:
            raise KeyError(f"no top-level layer named {capture!r}")
        return x

    def backward(self, grad):
        for name, layer in reversed(self.layers):
            if name == self._capture:
                self.captured["grad"] = grad
            grad = layer.backward(grad)
        return grad

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())


def _ch(c: int, m: float) -> int:
    v = int(round(c * m))
    if v < 1:
        raise ConfigError(f"width_multiplier {m} reduces {c} channels below 1")
    return v


def r2plus1d_midplanes(in_ch: int, out_ch: int, kt: int = 3, ks: int = 3) -> int:
    """Intermediate width keeping a factorized conv at or under the full 3D parameter count."""
    return (kt * ks * ks * in_ch * out_ch) // (ks * ks * in_ch + kt * out_ch)


def _conv3(in_ch, out_ch, stride, rng):
    return Conv3d(in_ch, out_ch, 3, stride, 1, rng=rng)


def _conv2plus1(in_ch, out_ch, stride, rng):
    mid = r2plus1d_midplanes(in_ch, out_ch)
    return Sequential([
        ("spatial", Conv3d(in_ch, mid, (1, 3, 3), (1, stride, stride), (0, 1, 1), rng=rng)),
        ("bn", BatchNorm(mid)),
        ("relu", ReLU()),
        ("temporal", Conv3d(mid, out_ch, (3, 1, 1), (stride, 1, 1), (1, 0, 0), rng=rng)),
    ])


def basic_block(in_ch, out_ch, stride, rng, conv=_conv3, dims: int = 3) -> ResidualBlock:
    """Two convs with batchnorm; projection shortcut when the shape changes."""
    body = Sequential([
        ("conv1", conv(in_ch, out_ch, stride, rng)),
        ("bn1", BatchNorm(out_ch)),
        ("relu1", ReLU()),
        ("conv2", conv(out_ch, out_ch, 1, rng)),
        ("bn2", BatchNorm(out_ch)),
    ])
    shortcut = None
    if stride != 1 or in_ch != out_ch:
        proj = Conv3d(in_ch, out_ch, 1, stride, 0, rng=rng) if dims == 3 else \
            Conv2d(in_ch, out_ch, 1, stride, 0, rng=rng)
        shortcut = Sequential([("conv", proj), ("bn", BatchNorm(out_ch))])
    return ResidualBlock(body, shortcut)


def _first_pool():
    return MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1))


def _resnet_like(config: ModelConfig, rng, conv, stem) -> Network:
    widths = [_ch(c, config.width_multiplier) for c in RESNET_WIDTHS]
    layers = [("stem", stem)]
    if not config.delete_first_pool:
        layers.append(("pool", _first_pool()))
    in_ch = widths[0]
    for i, out_ch in enumerate(widths):
        stride = 1 if i == 0 else 2
        layers.append((f"stage{i + 1}", Sequential([
            ("block1", basic_block(in_ch, out_ch, stride, rng, conv)),
            ("block2", basic_block(out_ch, out_ch, 1, rng, conv)),
        ])))
        in_ch = out_ch
    layers += [("gap", GlobalAvgPool()), ("fc", Linear(in_ch, config.num_classes, rng))]
    return Network(layers, config, cam_layer="stage4")


def build_resnet18_3d(config: ModelConfig, seed: int = 0) -> Network:
    if config.arch != "resnet18_3d":
        raise ConfigError(f"build_resnet18_3d got arch {config.arch!r}")
    rng = np.random.default_rng(seed)
    c0 = _ch(RESNET_WIDTHS[0], config.width_multiplier)
    stem = Sequential([
        ("conv", Conv3d(config.in_channels, c0, (3, 7, 7), (1, 2, 2), (1, 3, 3), rng=rng)),
        ("bn", BatchNorm(c0)),
        ("relu", ReLU()),
    ])
    return _resnet_like(config, rng, _conv3, stem)


def build_r2plus1d_18(config: ModelConfig, seed: int = 0) -> Network:
    if config.arch != "r2plus1d_18":
        raise ConfigError(f"build_r2plus1d_18 got arch {config.arch!r}")
    rng = np.random.default_rng(seed)
    c0 = _ch(RESNET_WIDTHS[0], config.width_multiplier)
    mid = (3 * 7 * 7 * config.in_channels * c0) // (7 * 7 * config.in_channels + 3 * c0)
    stem = Sequential([
        ("spatial", Conv3d(config.in_channels, mid, (1, 7, 7), (1, 2, 2), (0, 3, 3), rng=rng)),
        ("bn1", BatchNorm(mid)),
        ("relu1", ReLU()),
        ("temporal", Conv3d(mid, c0, (3, 1, 1), 1, (1, 0, 0), rng=rng)),
        ("bn2", BatchNorm(c0)),
        ("relu2", ReLU()),
    ])
    return _resnet_like(config, rng, _conv2plus1, stem)


def _conv_stage(in_ch, out_ch, stride, rng):
    return Sequential([
        ("conv", Conv3d(in_ch, out_ch, 3, stride, 1, rng=rng)),
        ("bn", BatchNorm(out_ch)),
        ("relu", ReLU()),
    ])


def build_micro3d(config: ModelConfig, seed: int = 0) -> Network:
    """Desk-scale 3D net: ResNet stem, three conv stages, pooled linear head."""
    if config.arch != "micro3d":
        raise ConfigError(f"build_micro3d got arch {config.arch!r}")
    rng = np.random.default_rng(seed)
    c1, c2, c3 = (_ch(c, config.width_multiplier) for c in MICRO_WIDTHS)
    layers = [("stem", Sequential([
        ("conv", Conv3d(config.in_channels, c1, (3, 7, 7), (1, 2, 2), (1, 3, 3), rng=rng)),
        ("bn", BatchNorm(c1)),
        ("relu", ReLU()),
    ]))]
    if not config.delete_first_pool:
        layers.append(("pool", _first_pool()))
    layers += [
        ("stage1", _conv_stage(c1, c1, 1, rng)),
        ("stage2", _conv_stage(c1, c2, 2, rng)),
        ("stage3", _conv_stage(c2, c3, 2, rng)),
        ("gap", GlobalAvgPool()),
        ("fc", Linear(c3, config.num_classes, rng)),
    ]
    return Network(layers, config, cam_layer="stage3")


def _conv2d3(in_ch, out_ch, stride, rng):
    return Conv2d(in_ch, out_ch, 3, stride, 1, rng=rng)


def build_appearance_2d(config: ModelConfig, seed: int = 0) -> Network:
    """Small 2D residual net classifying single frames."""
    if config.arch != "appearance2d":
        raise ConfigError(f"build_appearance_2d got arch {config.arch!r}")
    rng = np.random.default_rng(seed)
    c1, c2, c3 = (_ch(c, config.width_multiplier) for c in MICRO_WIDTHS)
    layers = [("stem", Sequential([
        ("conv", Conv2d(config.in_channels, c1, 7, 2, 3, rng=rng)),
        ("bn", BatchNorm(c1)),
        ("relu", ReLU()),
    ]))]
    if not config.delete_first_pool:
        layers.append(("pool", MaxPool2d(3, 2, 1)))
    layers += [
        ("stage1", basic_block(c1, c1, 1, rng, _conv2d3, dims=2)),
        ("stage2", basic_block(c1, c2, 2, rng, _conv2d3, dims=2)),
        ("stage3", basic_block(c2, c3, 2, rng, _conv2d3, dims=2)),
        ("gap", GlobalAvgPool()),
        ("fc", Linear(c3, config.num_classes, rng)),
    ]
    return Network(layers, config, cam_layer="stage3")


_BUILDERS = {
    "resnet18_3d": build_resnet18_3d,
    "r2plus1d_18": build_r2plus1d_18,
    "micro3d": build_micro3d,
    "appearance2d": build_appearance_2d,
}


def build_network(config: ModelConfig, seed: int = 0) -> Network:
    return _BUILDERS[config.arch](config, seed)
