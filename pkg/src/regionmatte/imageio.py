"""Image files: binary PGM/PPM (8 and 16 bit) natively, PNG through Pillow.

Arrays are float32 in [0, 1], shaped (H, W) for gray and (H, W, 3) for RGB.
"""

import os
import re

import numpy as np

from .errors import ImageFormatError

_HEADER = re.compile(rb"(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm", ".png")


def _read_pnm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    match = _HEADER.match(raw)
    if not match:
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file")
    magic, w, h, maxval = match.group(1), int(match.group(2)), int(match.group(3)), int(match.group(4))
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    body = raw[match.end():match.end() + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise ImageFormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(body, dtype=dtype).astype(np.float32) / maxval
    return pixels.reshape(h, w, 3) if channels == 3 else pixels.reshape(h, w)


def _write_pnm(path, array, bits):
    arr = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[-1] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot store array of shape {arr.shape} as PGM/PPM")
    maxval = 255 if bits == 8 else 65535
    dtype = np.dtype("u1") if bits == 8 else np.dtype(">u2")
    body = np.round(arr * maxval).astype(dtype).tobytes()
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n{maxval}\n".encode() + body)


def _pillow():
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ImageFormatError("PNG support needs Pillow (pip install pillow)") from exc
    return Image


def read_image(path):
    path = os.fspath(path)
    suffix = os.path.splitext(path)[1].lower()
    if not os.path.exists(path):
        raise ImageFormatError(f"{path}: no such file")
    if suffix in (".pgm", ".ppm", ".pnm"):
        return _read_pnm(path)
    if suffix == ".png":
        Image = _pillow()
        try:
            with Image.open(path) as img:
                arr = np.asarray(img)
        except OSError as exc:
            raise ImageFormatError(f"{path}: {exc}") from exc
        scale = 65535.0 if arr.dtype == np.uint16 or arr.max(initial=0) > 255 else 255.0
        arr = arr.astype(np.float32) / scale
        if arr.ndim == 3 and arr.shape[-1] == 4:
            arr = arr[..., :3]
        return arr
    raise ImageFormatError(f"{path}: unsupported image type {suffix!r}")


def write_image(path, array, bits=8):
    """Write gray (H, W) or RGB (H, W, 3) data in [0, 1]; the suffix picks the format."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    path = os.fspath(path)
    suffix = os.path.splitext(path)[1].lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        _write_pnm(path, array, bits)
    elif suffix == ".png":
        Image = _pillow()
        arr = np.clip(np.asarray(array, dtype=np.float64), 0, 1)
        if bits == 16:
            if arr.ndim != 2:
                raise ImageFormatError("16-bit PNG output is limited to single-channel images")
            Image.fromarray(np.round(arr * 65535).astype(np.uint16)).save(path)
        else:
            Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)
    else:
        raise ImageFormatError(f"{path}: unsupported image type {suffix!r}")


def list_images(directory):
    """Map file stem -> path for every readable image in ``directory``."""
    out = {}
    for name in sorted(os.listdir(directory)):
        stem, suffix = os.path.splitext(name)
        if suffix.lower() in IMAGE_SUFFIXES:
            out[stem] = os.path.join(directory, name)
    return out
