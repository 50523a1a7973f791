import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resframes.netpbm import NetpbmError, decode, encode, extension_for, read_image, write_image


@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.data())
def test_roundtrip(h, w, c, data):
    img = data.draw(arrays(np.uint8, (h, w, c)))
    np.testing.assert_array_equal(decode(encode(img)), img)


def test_header_comments_and_whitespace():
    buf = b"P5\n# a comment\n2 # width\n 1\n255\n" + bytes([7, 9])
    np.testing.assert_array_equal(decode(buf)[:, :, 0], [[7, 9]])


def test_p6_layout_is_rgb_interleaved():
    buf = b"P6 1 2 255\n" + bytes([1, 2, 3, 4, 5, 6])
    img = decode(buf)
    assert img.shape == (2, 1, 3)
    np.testing.assert_array_equal(img[1, 0], [4, 5, 6])


@pytest.mark.parametrize("buf, msg", [
    (b"P3 1 1 255\n\x00", "magic"),
    (b"P5 2 2 255\n\x00\x00", "truncated"),
    (b"P5 1 1 65535\n\x00\x00", "8-bit"),
    (b"P5 1", "header"),
    (b"P5 0 1 255\n", "empty"),
    (b"P5 1 1 3\n\x09", "maxval"),
])
def test_malformed_inputs(buf, msg):
    with pytest.raises(NetpbmError, match=msg):
        decode(buf)


def test_file_helpers(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    p = tmp_path / f"x{extension_for(3)}"
    write_image(p, img)
    np.testing.assert_array_equal(read_image(p), img)
    assert extension_for(1) == ".pgm"


def test_encode_rejects_non_uint8():
    with pytest.raises(NetpbmError):
        encode(np.zeros((2, 2), np.float32))
