"""Atomic file writes and 8-bit PGM images."""
import json
import os
from pathlib import Path
from typing import Any, Union

import numpy as np

from utils.exceptions import DataError

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """
    Write ``data`` to ``path.tmp`` and rename it into place.

    Args:
        path: Destination file; parent directories are created
        data: File contents

    Returns:
        The destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(data)
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: PathLike, payload: Any) -> Path:
    """Deterministic JSON (sorted keys, 2-space indent, trailing newline)."""
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)
    return atomic_write_text(path, text + "\n")


def to_gray_bytes(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to bytes via round(255 * v)."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.rint(values * 255.0).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray) -> Path:
    """
    Write a 2-D image with values in [0, 1] as a binary 8-bit PGM (P5).

    Args:
        path: Destination file
        image: Array of shape (height, width)

    Returns:
        The destination path
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError(f"PGM images must be 2-D, got shape {image.shape}")
    height, width = image.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return atomic_write_bytes(path, header + to_gray_bytes(image).tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary 8-bit PGM written by :func:`write_pgm`; returns uint8 pixels."""
    data = Path(path).read_bytes()
    fields = []
    offset = 0
    while len(fields) < 4:
        while offset < len(data) and data[offset : offset + 1].isspace():
            offset += 1
        start = offset
        while offset < len(data) and not data[offset : offset + 1].isspace():
            offset += 1
        if start == offset:
            raise DataError(f"{path}: truncated PGM header")
        fields.append(data[start:offset].decode("ascii"))
    offset += 1
    if fields[0] != "P5" or fields[3] != "255":
        raise DataError(f"{path}: not an 8-bit binary PGM")
    width, height = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return pixels.reshape(height, width)
