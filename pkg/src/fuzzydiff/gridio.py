"""Grid file I/O: the FDG1 binary format plus PGM/PPM previews."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Grid, ValidationError

__all__ = ["read_grid", "write_grid", "write_pgm", "write_ppm"]

_MAGIC = b"FDG1"
_HEADER = struct.Struct("<III")


def write_grid(path, grid: Grid) -> None:
    """Write ``grid`` bit-exactly: magic ``FDG1``, u32-LE (h, w, c), f64-LE payload."""
    h, w, c = grid.shape
    payload = np.ascontiguousarray(grid.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(h, w, c))
        fh.write(payload)


def read_grid(path) -> Grid:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(_MAGIC) + _HEADER.size:
        raise ValidationError(f"{path}: truncated grid file")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValidationError(f"{path}: bad magic, not a grid file")
    h, w, c = _HEADER.unpack_from(blob, len(_MAGIC))
    if min(h, w, c) < 1:
        raise ValidationError(f"{path}: invalid dimensions {(h, w, c)}")
    expect = len(_MAGIC) + _HEADER.size + h * w * c * 8
    if len(blob) != expect:
        raise ValidationError(f"{path}: payload size {len(blob)} != expected {expect}")
    flat = np.frombuffer(blob, dtype="<f8", offset=len(_MAGIC) + _HEADER.size)
    # Grid() validates finiteness, so a corrupt payload fails loudly here.
    return Grid(flat.reshape(h, w, c).copy())


def _quantize(values: np.ndarray) -> np.ndarray:
    """Linear [0,1] -> [0,255] with clamping, rounded to nearest."""
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, grid: Grid) -> None:
    """8-bit binary PGM (P5) preview of channel 0."""
    h, w, _ = grid.shape
    pixels = _quantize(grid.values[:, :, 0])
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_ppm(path, grid: Grid) -> None:
    """8-bit binary PPM (P6) preview; requires exactly 3 channels."""
    if grid.channels != 3:
        raise ValidationError(f"PPM export needs 3 channels, got {grid.channels}")
    h, w, _ = grid.shape
    pixels = _quantize(grid.values)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_preview(path, grid: Grid) -> Path:
    """Write the natural preview for ``grid``: PPM when c=3, else PGM of channel 0.

    Returns the path actually written (extension chosen by format).
    """
    path = Path(path)
    if grid.channels == 3:
        out = path.with_suffix(".ppm")
        write_ppm(out, grid)
    else:
        out = path.with_suffix(".pgm")
        write_pgm(out, grid)
    return out
