import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bilinear_1d
from resframes.clip_pipeline import (
    DESK_GEOMETRY,
    TEST_AUGMENT,
    AugmentConfig,
    Clip,
    ClipGeometry,
    FrameSequence,
    PipelineError,
    VideoDataset,
    appearance_test_indices,
    center_clip,
    denormalize,
    load_frame_sequence,
    make_batch,
    make_residual,
    normalize,
    resize_axis,
    resize_bilinear,
    sample_appearance_frame,
    sample_seed,
    sample_train_clip,
    save_frame_sequence,
    write_index,
)

TINY = ClipGeometry(clip_len=4, resize_w=10, resize_h=8, crop_size=6)


def _video(t=20, h=12, w=14, c=3, seed=0, label=0, id="v"):
    frames = np.random.default_rng(seed).integers(0, 256, (t, h, w, c), dtype=np.uint8)
    return FrameSequence(frames, label, id)


# integer-valued pixel stacks; residuals of these are exact in floating point
pixel_stacks = st.integers(2, 6).flatmap(
    lambda t: arrays(np.float64, (t, 3, 4, 2), elements=st.integers(0, 255).map(float))
)


class TestResidualInvariants:
    @settings(max_examples=150)
    @given(arrays(np.float64, (1, 3, 4, 2), elements=st.integers(0, 255).map(float)), st.integers(2, 8))
    def test_constant_video_has_zero_residual(self, frame, t):
        res = make_residual(np.repeat(frame, t, axis=0), t - 1)
        assert res.shape[0] == t - 1
        assert not res.any()

    @settings(max_examples=150)
    @given(pixel_stacks, arrays(np.float64, (3, 4, 2), elements=st.integers(-255, 255).map(float)))
    def test_static_background_addition_is_invisible(self, stack, bg):
        n = stack.shape[0] - 1
        np.testing.assert_array_equal(make_residual(stack + bg, n), make_residual(stack, n))

    @settings(max_examples=150)
    @given(pixel_stacks)
    def test_commutes_with_flip_and_time_reversal(self, stack):
        n = stack.shape[0] - 1
        res = make_residual(stack, n)
        np.testing.assert_array_equal(make_residual(stack[:, :, ::-1], n), res[:, :, ::-1])
        np.testing.assert_array_equal(make_residual(stack[::-1], n), res[::-1])

    def test_uint8_input_does_not_wrap(self):
        stack = np.array([[[[10]]], [[[250]]]], np.uint8)
        assert make_residual(stack, 1).item() == 240

    def test_needs_clip_len_plus_one_frames(self):
        with pytest.raises(PipelineError, match="17 frames"):
            make_residual(np.zeros((16, 2, 2, 1)), 16)

    def test_constant_video_gives_zero_residual_clip(self):
        seq = FrameSequence(np.full((20, 12, 14, 3), 77, np.uint8))
        clip = center_clip(seq, 0, "residual", TINY)
        assert clip.shape == (3, 4, 6, 6) and not clip.data.any()


class TestResize:
    def test_two_by_two_anchor(self):
        frame = np.array([[0, 255], [0, 255]], np.uint8)[None, :, :, None]
        out = resize_bilinear(FrameSequence(frame), 4, 4)
        np.testing.assert_array_equal(out.frames[0, 0, :, 0], [0, 64, 191, 255])

    @given(arrays(np.float64, st.integers(1, 9), elements=st.floats(0, 255)), st.integers(1, 12))
    def test_axis_matches_oracle(self, src, n_out):
        np.testing.assert_allclose(resize_axis(src, 0, n_out), bilinear_1d(src, n_out), atol=1e-9)

    def test_same_size_is_identity(self):
        seq = _video(h=8, w=10)
        assert resize_bilinear(seq, 10, 8) is seq


class TestFrameStore:
    def test_roundtrip(self, tmp_path):
        seq = _video(t=3, c=1)
        save_frame_sequence(seq, tmp_path / "v")
        back = load_frame_sequence(tmp_path / "v", label=2)
        np.testing.assert_array_equal(back.frames, seq.frames)
        assert back.label == 2 and back.id == "v"

    def test_gap_names_first_missing_index(self, tmp_path):
        save_frame_sequence(_video(t=4), tmp_path / "v")
        (tmp_path / "v" / "frame_00001.ppm").unlink()
        with pytest.raises(PipelineError, match="missing frame index 1"):
            load_frame_sequence(tmp_path / "v")

    def test_empty_directory(self, tmp_path):
        (tmp_path / "e").mkdir()
        with pytest.raises(PipelineError, match="no frame"):
            load_frame_sequence(tmp_path / "e")

    def test_dataset_from_index(self, tmp_path):
        for i in range(2):
            save_frame_sequence(_video(t=5, seed=i), tmp_path / f"v{i}")
        write_index(tmp_path, [("a", "v0", 0), ("b", "v1", 1)])
        ds = VideoDataset.from_dir(tmp_path, TINY)
        assert len(ds) == 2 and list(ds.labels) == [0, 1]
        assert ds.sequence(1).frames.shape == (5, 8, 10, 3)


class TestSampling:
    def test_train_clip_shape_and_determinism(self):
        seq = _video(t=24, h=32, w=40)
        aug = AugmentConfig(seed=0)
        a = sample_train_clip(seq, "residual", aug, 123, DESK_GEOMETRY)
        b = sample_train_clip(seq, "residual", aug, 123, DESK_GEOMETRY)
        assert a.shape == (3, 16, 28, 28) and a.data.dtype == np.float32
        np.testing.assert_array_equal(a.data, b.data)

    def test_rgb_normalization_range(self):
        clip = sample_train_clip(_video(t=24, h=32, w=40), "rgb", AugmentConfig(), 5, DESK_GEOMETRY)
        assert clip.data.min() >= -1 and clip.data.max() <= 1

    def test_short_video_errors(self):
        with pytest.raises(PipelineError, match="needs 17 frames"):
            sample_train_clip(_video(t=16), "residual", AugmentConfig(), 0, ClipGeometry(16, 14, 12, 10))

    def test_center_clip_is_unflipped_window(self):
        seq = _video(t=10, h=8, w=10)
        clip = center_clip(seq, 3, "rgb", ClipGeometry(4, 10, 8, 8), norm=(0.0, 1.0))
        want = seq.frames[3:7, :, 1:9].transpose(3, 0, 1, 2) / 255
        np.testing.assert_allclose(clip.data, want, atol=1e-6)

    def test_flip_always_applies_at_probability_one(self):
        seq = _video(t=10, h=8, w=10)
        g = ClipGeometry(4, 10, 8, 8)
        aug = AugmentConfig(crop="center", flip_prob=1.0, jitter_scales=(1.0,))
        flipped = sample_train_clip(seq, "rgb", aug, 0, g, norm=(0.0, 1.0))
        start = next(s for s in range(7) if np.allclose(
            center_clip(seq, s, "rgb", g, (0.0, 1.0)).data[..., ::-1], flipped.data))
        assert 0 <= start <= 6

    def test_appearance_frame(self):
        seq = _video(t=24, h=32, w=40)
        img = sample_appearance_frame(seq, 5, TEST_AUGMENT, 0, DESK_GEOMETRY)
        assert img.shape == (3, 28, 28)
        with pytest.raises(PipelineError):
            sample_appearance_frame(seq, 24, geometry=DESK_GEOMETRY)

    def test_appearance_indices_align_with_clip_starts(self):
        assert appearance_test_indices(165, 16, 16)[15] == 149
        assert appearance_test_indices(5, 16, 3) == [0, 2, 4]

    def test_batch_is_independent_of_worker_count(self):
        ds = VideoDataset.from_sequences([_video(t=8, seed=i, label=i % 2) for i in range(5)], TINY)
        idx = [4, 0, 2]
        seeds = [sample_seed(0, 0, 0, i) for i in idx]
        x1, y1 = make_batch(ds, idx, seeds, "residual", AugmentConfig())
        x3, y3 = make_batch(ds, idx, seeds, "residual", AugmentConfig(), workers=3)
        np.testing.assert_array_equal(x1, x3)
        assert list(y1) == [0, 0, 0] == list(y3)

    def test_normalize_roundtrip(self):
        clip = Clip(np.random.default_rng(0).random((3, 2, 4, 4), dtype=np.float32), "rgb")
        back = denormalize(normalize(clip, [0.5, 0.4, 0.3], [0.5, 0.2, 0.25]), [0.5, 0.4, 0.3], [0.5, 0.2, 0.25])
        np.testing.assert_allclose(back.data, clip.data, atol=1e-6)

    def test_sample_seed_is_pure(self):
        assert sample_seed(1, 2, 3) == sample_seed(1, 2, 3) != sample_seed(1, 2, 4)
