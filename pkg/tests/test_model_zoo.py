import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import conv_param_count as conv
from resframes.model_zoo import ConfigError, ModelConfig, build_network, r2plus1d_midplanes


def _bn(c):
    return 2 * c


def resnet18_3d_params(num_classes=101):
    total = conv(3, 64, (3, 7, 7)) + _bn(64)
    cin = 64
    for cout in (64, 128, 256, 512):
        for b in range(2):
            src = cin if b == 0 else cout
            total += conv(src, cout, (3, 3, 3)) + _bn(cout) + conv(cout, cout, (3, 3, 3)) + _bn(cout)
            if b == 0 and src != cout:
                total += conv(src, cout, (1, 1, 1)) + _bn(cout)
        cin = cout
    return total + 512 * num_classes + num_classes


def test_resnet18_3d_parameter_count():
    net = build_network(ModelConfig("resnet18_3d"))
    assert net.parameter_count() == resnet18_3d_params() == 33_218_085


def test_r2plus1d_midplanes():
    assert r2plus1d_midplanes(64, 64) == 144
    assert r2plus1d_midplanes(64, 128) == 230


@given(st.integers(1, 512), st.integers(1, 512))
def test_factorized_conv_weights_fit_full_3d_budget(cin, cout):
    mid = r2plus1d_midplanes(cin, cout)
    assert conv(cin, mid, (1, 3, 3)) + conv(mid, cout, (3, 1, 1)) <= conv(cin, cout, (3, 3, 3))


def test_r2plus1d_total_close_to_3d():
    n21 = build_network(ModelConfig("r2plus1d_18")).parameter_count()
    # the extra mid-layer batchnorms add a little over the 3D net
    assert abs(n21 - resnet18_3d_params()) < 0.001 * resnet18_3d_params()


@pytest.mark.parametrize("arch, shape", [
    ("micro3d", (2, 3, 16, 28, 28)),
    ("appearance2d", (2, 3, 28, 28)),
])
def test_desk_networks_forward_and_backward(arch, shape):
    net = build_network(ModelConfig(arch, num_classes=8))
    x = np.random.default_rng(0).standard_normal(shape).astype(np.float32)
    logits = net.forward(x, training=True, capture=net.cam_layer)
    assert logits.shape == (2, 8) and logits.dtype == np.float32
    gx = net.backward(np.ones_like(logits))
    assert gx.shape == shape
    assert net.captured["grad"].shape == net.captured["activation"].shape


def test_full_size_resnet_shapes():
    net = build_network(ModelConfig("resnet18_3d"))
    x = np.zeros((1, 3, 16, 112, 112), np.float32)
    assert net.forward(x, capture="stage4").shape == (1, 101)
    assert net.captured["activation"].shape == (1, 512, 2, 7, 7)


def test_first_pool_is_optional():
    cfg = ModelConfig("micro3d", num_classes=4, delete_first_pool=False)
    net = build_network(cfg)
    net.forward(np.zeros((1, 3, 4, 16, 16), np.float32), capture="stage1")
    assert net.captured["activation"].shape[-1] == 4
    names = [n for n, _ in build_network(ModelConfig("micro3d", num_classes=4)).layers]
    assert "pool" not in names


def test_same_seed_same_weights():
    a = build_network(ModelConfig("micro3d", num_classes=3), seed=4)
    b = build_network(ModelConfig("micro3d", num_classes=3), seed=4)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.value, pb.value)


@pytest.mark.parametrize("kwargs", [{"arch": "vgg"}, {"num_classes": 0}, {"width_multiplier": 0.0},
                                    {"in_channels": 2}])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_unknown_capture_layer():
    net = build_network(ModelConfig("micro3d", num_classes=2))
    with pytest.raises(KeyError):
        net.forward(np.zeros((1, 3, 2, 8, 8), np.float32), capture="stage9")
