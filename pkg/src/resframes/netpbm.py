"""Binary PPM (P6) and PGM (P5) codecs for 8-bit frames."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

_WHITESPACE = b" \t\n\r\v\f"


class NetpbmError(ValueError):
    pass


def _header_tokens(buf: bytes, count: int, where: str):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last token.
    """
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and (buf[pos] in _WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise NetpbmError(f"{where}: truncated header")
        tokens.append(buf[start:pos])
    if pos >= n or buf[pos] not in _WHITESPACE:
        raise NetpbmError(f"{where}: missing whitespace after header")
    return tokens, pos + 1


def decode(buf: bytes, where: str = "<bytes>") -> np.ndarray:
    """Decode a P5/P6 image into an (H, W, C) uint8 array, C in {1, 3}."""
    tokens, offset = _header_tokens(buf, 4, where)
    magic = tokens[0]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise NetpbmError(f"{where}: unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise NetpbmError(f"{where}: non-numeric header field") from exc
    if width < 1 or height < 1:
        raise NetpbmError(f"{where}: empty image {width}x{height}")
    if not 0 < maxval < 256:
        raise NetpbmError(f"{where}: maxval {maxval} is not 8-bit")
    size = width * height * channels
    raster = buf[offset:offset + size]
    if len(raster) != size:
        raise NetpbmError(f"{where}: raster truncated ({len(raster)} of {size} bytes)")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels).copy()
    if maxval < 255 and img.max(initial=0) > maxval:
        raise NetpbmError(f"{where}: sample exceeds maxval {maxval}")
    return img


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise NetpbmError(f"expected uint8 image, got {img.dtype}")
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise NetpbmError(f"expected 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def read_image(path: str | os.PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes(), str(path))


def write_image(path: str | os.PathLike, img: np.ndarray) -> None:
    Path(path).write_bytes(encode(img))


def extension_for(channels: int) -> str:
    return ".ppm" if channels == 3 else ".pgm"
