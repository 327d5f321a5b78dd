"""Image files: 8-bit PNG for viewing and raw float32 planes for exact round trips.

Raw plane layout (little-endian): 4-byte magic ``SMRF``, uint32 version,
uint32 height, uint32 width, uint32 channels, then ``height * width *
channels`` float32 values in row-major ``(row, col, channel)`` order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from PIL import Image

RAW_MAGIC = b"SMRF"
RAW_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
MASK_THRESHOLD = 128


def to_uint8(img: ArrayLike) -> NDArray[np.uint8]:
    a = np.asarray(img, dtype=np.float64)
    return np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)


def save_png(path: str | Path, img: ArrayLike) -> None:
    Image.fromarray(to_uint8(img)).save(path)


def load_png(path: str | Path) -> NDArray[np.float64]:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path: str | Path, mask: ArrayLike) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def load_mask(path: str | Path) -> NDArray[np.bool_]:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= MASK_THRESHOLD


def save_raw(path: str | Path, img: ArrayLike) -> None:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    h, w, c = a.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(RAW_MAGIC, RAW_VERSION, h, w, c))
        f.write(a.astype("<f4").tobytes())


def load_raw(path: str | Path) -> NDArray[np.float32]:
    data = Path(path).read_bytes()
    magic, version, h, w, c = _HEADER.unpack_from(data)
    if magic != RAW_MAGIC or version != RAW_VERSION:
        raise ValueError(f"{path}: not a raw float plane (magic {magic!r}, version {version})")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != h * w * c:
        raise ValueError(f"{path}: expected {h * w * c} values, found {body.size}")
    out = body.reshape(h, w, c).astype(np.float32)
    return out[..., 0] if c == 1 else out
