"""Named finite-difference gradient checks for every layer and architecture."""
from __future__ import annotations

import numpy as np

from .model_zoo import ModelConfig, build_network
from .tensor_engine import (
    BatchNorm,
    Conv2d,
    Conv3d,
    GlobalAvgPool,
    GradcheckReport,
    Linear,
    MaxPool2d,
    MaxPool3d,
    ReLU,
    gradcheck,
)


def _x(rng, *shape):
    return rng.standard_normal(shape)


def layer_cases(seed: int = 0):
    """(name, module, input, labels) for each layer type; labels None means projection loss."""
    rng = np.random.default_rng(seed)
    r = np.random.default_rng(seed + 1)
    return [
        ("conv3d", Conv3d(2, 3, (2, 3, 3), (1, 2, 1), (0, 1, 1), bias=True, rng=r), _x(rng, 2, 2, 3, 5, 4), None),
        ("conv2d", Conv2d(2, 3, 3, 2, 1, bias=True, rng=r), _x(rng, 2, 2, 5, 5), None),
        ("batchnorm_train", BatchNorm(3), _x(rng, 4, 3, 2, 3, 3), None),
        ("relu", ReLU(), _x(rng, 2, 3, 4), None),
        ("maxpool3d", MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1)), _x(rng, 2, 2, 2, 5, 5), None),
        ("maxpool2d", MaxPool2d(3, 2, 1), _x(rng, 2, 2, 5, 5), None),
        ("global_avg_pool", GlobalAvgPool(), _x(rng, 2, 3, 2, 3, 3), None),
        ("linear_ce", Linear(6, 4, rng=r), _x(rng, 5, 6), np.array([0, 1, 2, 3, 1])),
    ]


def arch_case(arch: str, seed: int = 0):
    """A full desk-scale network, or one residual block of a full-size one."""
    rng = np.random.default_rng(seed)
    if arch in ("micro3d", "appearance2d"):
        net = build_network(ModelConfig(arch, num_classes=5), seed)
        shape = (3, 3, 16, 16) if arch == "appearance2d" else (3, 3, 4, 16, 16)
        return arch, net, _x(rng, *shape), np.array([0, 3, 4])
    if arch in ("resnet18_3d", "r2plus1d_18"):
        # the first downsampling block exercises the projection shortcut
        net = build_network(ModelConfig(arch, num_classes=5), seed)
        return f"{arch}.stage2.block1", net["stage2"]["block1"], _x(rng, 2, 64, 4, 6, 6), None
    raise ValueError(f"no gradcheck case for arch {arch!r}")


def run_case(name, module, x, labels, tolerance: float = 1e-3, seed: int = 0) -> GradcheckReport:
    report = gradcheck(module, x, labels, tolerance=tolerance, seed=seed)
    for e in report.entries:
        e.name = f"{name}:{e.name}"
    return report


def run_suite(names=None, tolerance: float = 1e-3, seed: int = 0) -> GradcheckReport:
    """Gradcheck the layer set and the named architectures; ``names=None`` runs everything."""
    archs = ("micro3d", "appearance2d", "resnet18_3d", "r2plus1d_18")
    cases = []
    wanted = set(names) if names is not None else None
    if wanted is None or "layers" in wanted:
        cases += layer_cases(seed)
    for arch in archs:
        if wanted is None or arch in wanted:
            cases.append(arch_case(arch, seed))
    out = GradcheckReport(tolerance)
    for case in cases:
        out.entries += run_case(*case, tolerance=tolerance, seed=seed).entries
    return out
