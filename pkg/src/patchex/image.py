"""Raster planes and the PFEX binary plane format.

A plane is a float32 numpy array of shape ``(height, width, channels)`` in
C order, which is exactly the row-major, channel-interleaved layout written
to disk.  Masks are planes with one channel holding 0.0 / 1.0.
"""
from __future__ import annotations

import io
import os
import struct

import numpy as np

MAGIC = b"PFEX"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
# 1 gigapixel-channel cap keeps a corrupt header from requesting absurd memory
MAX_ELEMENTS = 1 << 30

DIVIDE_EPS = 1e-6


class PlaneFormatError(ValueError):
    """Raised on malformed or truncated PFEX data."""


def as_plane(data, channels: int | None = None) -> np.ndarray:
    """Coerce ``data`` to a float32 ``(H, W, C)`` plane and validate it."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"plane must be 2-D or 3-D, got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ValueError(f"expected {channels} channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("plane contains non-finite values")
    return np.ascontiguousarray(arr)


def zeros(height: int, width: int, channels: int) -> np.ndarray:
    return np.zeros((height, width, channels), dtype=np.float32)


def same_shape(*planes: np.ndarray) -> None:
    shape = planes[0].shape[:2]
    for p in planes[1:]:
        if p.shape[:2] != shape:
            raise ValueError(f"resolution mismatch: {p.shape[:2]} vs {shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    same_shape(a, b)
    return (a + b).astype(np.float32)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    same_shape(a, b)
    return (a * b).astype(np.float32)


def safe_divide(num: np.ndarray, den: np.ndarray, eps: float = DIVIDE_EPS) -> np.ndarray:
    """Per-pixel ``num / den`` with the denominator magnitude floored at ``eps``.

    The sign of ``den`` is kept; zero counts as positive.
    """
    same_shape(num, den)
    den64 = np.asarray(den, dtype=np.float64)
    guard = np.where(den64 < 0, -1.0, 1.0) * np.maximum(np.abs(den64), eps)
    return (np.asarray(num, dtype=np.float64) / guard).astype(np.float32)


def luma(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, returned as a one-channel plane."""
    w = np.array([0.299, 0.587, 0.114])
    return (rgb[..., :3].astype(np.float64) @ w).astype(np.float32)[:, :, None]


def encode_plane(plane: np.ndarray) -> bytes:
    plane = as_plane(plane)
    h, w, c = plane.shape
    header = _HEADER.pack(MAGIC, VERSION, w, h, c)
    return header + plane.astype("<f4", copy=False).tobytes(order="C")


def decode_plane(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise PlaneFormatError("truncated header")
    magic, version, w, h, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise PlaneFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise PlaneFormatError(f"unsupported version {version}")
    n = w * h * c
    if n > MAX_ELEMENTS:
        raise PlaneFormatError(f"plane of {w}x{h}x{c} exceeds size limit")
    payload = buf[_HEADER.size:]
    if len(payload) != 4 * n:
        raise PlaneFormatError(f"payload is {len(payload)} bytes, expected {4 * n}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(h, w, c)
    return arr


def write_plane(path: str | os.PathLike, plane: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_plane(plane))


def read_plane(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_plane(fh.read())


def quantize8(plane: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-up."""
    v = np.clip(np.asarray(plane, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def to_png8(plane: np.ndarray) -> bytes:
    from PIL import Image

    plane = as_plane(plane)
    c = plane.shape[2]
    if c not in (1, 3, 4):
        raise ValueError(f"PNG export supports 1, 3 or 4 channels, got {c}")
    q = quantize8(plane)
    mode = {1: "L", 3: "RGB", 4: "RGBA"}[c]
    img = Image.fromarray(q[:, :, 0] if c == 1 else q, mode=mode)
    out = io.BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()
