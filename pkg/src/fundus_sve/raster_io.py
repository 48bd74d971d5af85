"""Raster file I/O: 8-bit RGB PNG and binary PPM (P6).

Round trips are bit-exact. Every failure mode maps to a distinct
exception so callers can triage batch errors.
"""

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .validation import check_mask, check_rgb_image


class RasterIOError(Exception):
    """Base class for raster file errors."""


class MissingFileError(RasterIOError):
    pass


class MalformedFileError(RasterIOError):
    pass


class UnsupportedFormatError(RasterIOError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such image file: {path}")
    return path.read_bytes()


def _load_ppm(data: bytes, path) -> np.ndarray:
    # P6 header: magic, width, height, maxval, then raw RGB bytes.
    tokens = []
    pos = 2
    while len(tokens) < 3 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            break
        tokens.append(data[start:pos])
    if len(tokens) < 3:
        raise MalformedFileError(f"truncated PPM header: {path}")
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedFileError(f"non-numeric PPM header field: {path}") from None
    if width < 1 or height < 1:
        raise MalformedFileError(f"bad PPM dimensions {width}x{height}: {path}")
    if maxval != 255:
        raise UnsupportedFormatError(f"only 8-bit PPM supported (maxval {maxval}): {path}")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos : pos + width * height * 3]
    if len(raw) < width * height * 3:
        raise MalformedFileError(f"truncated PPM pixel data: {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()


def load_raster(path) -> np.ndarray:
    """Load a PNG or PPM P6 file as an (H, W, 3) uint8 array."""
    data = _read_bytes(path)
    if data[:2] == b"P6":
        return _load_ppm(data, path)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with Image.open(io.BytesIO(data)) as im:
                if im.mode not in ("RGB", "L", "P", "LA", "RGBA"):
                    # 16-bit images open as mode "I"/"I;16" and land here
                    raise UnsupportedFormatError(f"unsupported PNG mode {im.mode}: {path}")
                arr = np.asarray(im.convert("RGB"))
        except UnsupportedFormatError:
            raise
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise MalformedFileError(f"malformed PNG file {path}: {exc}") from None
        return check_rgb_image(arr)
    if data[:2] in (b"P5", b"P3", b"P2"):
        raise UnsupportedFormatError(f"only PPM P6 is supported: {path}")
    raise MalformedFileError(f"not a PNG or PPM P6 file: {path}")


def save_raster(img, path) -> None:
    """Write an (H, W, 3) uint8 array as PNG or PPM P6 (by extension)."""
    img = check_rgb_image(img)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() in (".ppm", ".pnm"):
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
        path.write_bytes(header + img.tobytes())
    else:
        Image.fromarray(img, mode="RGB").save(path, format="PNG")


def load_mask(path, shape=None) -> np.ndarray:
    """Load a pre-binarized vessel mask; pixel values {0,1} or {0,255}."""
    arr = load_raster(path)
    if not (arr[..., 0] == arr[..., 1]).all() or not (arr[..., 1] == arr[..., 2]).all():
        raise MalformedFileError(f"mask file is not single-channel: {path}")
    plane = arr[..., 0]
    values = np.unique(plane)
    if not np.isin(values, (0, 1, 255)).all() or (1 in values and 255 in values):
        raise MalformedFileError(f"mask file is not binary: {path}")
    mask = (plane > 0).astype(np.uint8)
    return check_mask(mask, shape)


def save_mask(mask, path) -> None:
    """Write a binary mask as an 8-bit image with values {0, 255}."""
    mask = check_mask(mask)
    save_raster(np.stack([mask * 255] * 3, axis=-1).astype(np.uint8), path)
