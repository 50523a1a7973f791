import json

import numpy as np
import pytest

from resframes.checkpoint import load_checkpoint
from resframes.clip_pipeline import AugmentConfig, ClipGeometry, FrameSequence, VideoDataset
from resframes.model_zoo import ModelConfig, build_network
from resframes.trainer import PRESETS, TrainConfig, TrainingDiverged, Trainer, lr_at, preset, train

GEOM = ClipGeometry(clip_len=4, resize_w=12, resize_h=12, crop_size=10)


def _flicker_dataset(n=16):
    """Class 0 is a static frame, class 1 alternates two frames; separable from residuals alone."""
    seqs = []
    for i in range(n):
        rng = np.random.default_rng(i)
        base = rng.integers(0, 200, (1, 12, 12, 3))
        frames = np.repeat(base, 8, axis=0)
        label = i % 2
        if label:
            frames[1::2] += 50
        seqs.append(FrameSequence(frames.astype(np.uint8), label, f"v{i}"))
    return VideoDataset.from_sequences(seqs, GEOM)


def _net(seed=0):
    return build_network(ModelConfig("micro3d", num_classes=2), seed)


def _weights(net):
    return {k: p.value.copy() for k, p in net.named_parameters()}


def test_presets_follow_training_recipe():
    assert PRESETS["scratch"].initial_lr == 0.1 and PRESETS["scratch"].epochs == 100
    assert PRESETS["finetune"].initial_lr == 0.001 and PRESETS["finetune"].epochs == 50
    assert PRESETS["scratch"].batch_size == 32


def test_step_schedule():
    cfg = preset("scratch")
    assert [lr_at(e, cfg) for e in (0, 49, 50, 74, 75, 99)] == pytest.approx([0.1, 0.1, 0.01, 0.01, 0.001, 0.001])
    assert lr_at(3, TrainConfig(epochs=10, milestones=[2])) == pytest.approx(0.01)


def test_separable_two_class_problem_is_fit():
    net = _net()
    hist = train(net, _flicker_dataset(), TrainConfig(initial_lr=0.05, epochs=6, batch_size=8))
    assert hist[-1].top1 == 100.0
    assert hist[-1].loss < hist[0].loss


def test_zero_learning_rate_leaves_weights_bit_identical():
    net = _net()
    before = _weights(net)
    train(net, _flicker_dataset(8), TrainConfig(initial_lr=0.0, epochs=2, batch_size=4))
    for k, v in _weights(net).items():
        assert np.array_equal(v, before[k]), k


def test_same_seed_same_result_regardless_of_workers():
    runs = []
    for workers in (1, 3):
        net = _net()
        hist = train(net, _flicker_dataset(8), TrainConfig(initial_lr=0.05, epochs=2, batch_size=4,
                                                           workers=workers, seed=3))
        runs.append((hist, _weights(net)))
    assert [h.loss for h in runs[0][0]] == [h.loss for h in runs[1][0]]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])


def test_log_and_checkpoint_written(tmp_path):
    net = _net()
    Trainer(net, _flicker_dataset(8), TrainConfig(initial_lr=0.05, epochs=3, batch_size=4),
            AugmentConfig(), log_path=tmp_path / "log.jsonl", checkpoint_path=tmp_path / "c.rclp").run()
    lines = [json.loads(s) for s in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [0, 1, 2]
    assert set(lines[0]) == {"epoch", "loss", "top1", "top5", "lr"}
    assert load_checkpoint(tmp_path / "c.rclp").epoch == 3


def test_resume_skips_finished_epochs():
    hist = Trainer(_net(), _flicker_dataset(8), TrainConfig(epochs=4, batch_size=4), start_epoch=3).run()
    assert [h.epoch for h in hist] == [3]


def test_divergence_is_reported():
    net = _net()
    net["fc"].weight.value[...] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 0 batch 0"):
        train(net, _flicker_dataset(4), TrainConfig(epochs=1, batch_size=4))


def test_labels_outside_head_rejected():
    ds = _flicker_dataset(4)
    with pytest.raises(ValueError, match="labels"):
        train(build_network(ModelConfig("micro3d", num_classes=1)), ds, TrainConfig(epochs=1))


def test_invalid_config():
    with pytest.raises(ValueError):
        TrainConfig(mode="transfer")
    with pytest.raises(ValueError):
        TrainConfig(clip_kind="flow")


def test_loss_on_fixed_batch_decreases_over_first_steps():
    from resframes.tensor_engine import sgd_step, softmax_cross_entropy

    net = build_network(ModelConfig("micro3d", num_classes=4), 0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 3, 4, 16, 16)).astype(np.float32)
    y = np.arange(8) % 4
    losses = []
    for _ in range(4):
        loss, g = softmax_cross_entropy(net.forward(x, training=True), y)
        net.backward(g)
        sgd_step(net.parameters(), 1e-2)
        losses.append(loss)
    assert losses[0] > losses[1] > losses[2] > losses[3]
