"""Pixel-grid container, deterministic RNG streams, and shared numeric helpers."""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ValidationError",
    "Grid",
    "RngStream",
    "randn_grid",
    "grid_stats",
    "clamp_unit",
]

_MASK64 = (1 << 64) - 1


class ValidationError(ValueError):
    """Raised when data violates a structural invariant (shape, range, finiteness)."""


class Grid:
    """Immutable (height, width, channels) array of float64 intensities.

    Values are row-major and channel-interleaved. Image data is nominally in
    [0, 1]; noise and statistics grids are unbounded. Every constructor path
    rejects non-finite entries, so downstream code may assume finiteness.
    """

    __slots__ = ("_values",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3:
            raise ValidationError(f"grid must be 3-d (h, w, c), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValidationError(f"grid dimensions must be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("grid contains non-finite values")
        arr.flags.writeable = False
        self._values = arr

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 1) -> "Grid":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def full(cls, height: int, width: int, channels: int, value: float) -> "Grid":
        return cls(np.full((height, width, channels), float(value)))

    @property
    def values(self) -> np.ndarray:
        """Read-only float64 array of shape (h, w, c)."""
        return self._values

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def channels(self) -> int:
        return self._values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._values.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self._values.size

    def flat(self) -> np.ndarray:
        """The values as a flat (h*w*c,) view."""
        return self._values.reshape(-1)

    def allclose(self, other: "Grid", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return self.shape == other.shape and np.allclose(
            self._values, other._values, atol=atol, rtol=rtol
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._values, other._values)

    def __hash__(self) -> int:  # Grids are immutable; hash by content.
        return hash((self.shape, self._values.tobytes()))

    def __repr__(self) -> str:
        h, w, c = self.shape
        return f"Grid({h}x{w}x{c})"


def _mix64(z: int) -> int:
    """SplitMix64 finalizer; used to derive well-separated child stream ids."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class RngStream:
    """Deterministic counter-based random stream.

    Built on the Philox-4x64-10 counter-based generator keyed by
    ``(stream_id << 64) | seed``, so a stream is fully determined by the pair
    and never by thread scheduling. Uniform doubles are derived from raw
    64-bit words as ``((raw >> 11) + 1) * 2**-53``, which lies in (0, 1] and
    is safe to pass to ``log``. Normal variates use the trigonometric
    Box-Muller transform, consuming uniforms strictly in pairs; an odd request
    discards the second half of the final pair. These transforms are part of
    the output contract: changing them changes every downstream artifact.

    A stream is single-owner. Parallel work derives one child per task via
    :meth:`child`, which mixes the task index into the stream id with
    SplitMix64 so children are statistically independent of the parent and of
    each other.
    """

    __slots__ = ("seed", "stream_id", "_bits")

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        seed = int(seed)
        stream_id = int(stream_id)
        if not 0 <= seed <= _MASK64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not 0 <= stream_id <= _MASK64:
            raise ValidationError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
        self.seed = seed
        self.stream_id = stream_id
        self._bits = np.random.Philox(key=(stream_id << 64) | seed)

    def child(self, index: int) -> "RngStream":
        """Derive the stream for subtask ``index`` (same seed, mixed stream id)."""
        if index < 0:
            raise ValidationError(f"child index must be non-negative, got {index}")
        mixed = _mix64(self.stream_id ^ _mix64(int(index)))
        return RngStream(self.seed, mixed)

    def raw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValidationError(f"draw count must be non-negative, got {n}")
        return self._bits.random_raw(n) if n else np.empty(0, dtype=np.uint64)

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` i.i.d. uniforms on (0, 1]."""
        bits = self.raw(n)
        return ((bits >> np.uint64(11)) + np.uint64(1)) * (2.0 ** -53)

    def normals(self, n: int) -> np.ndarray:
        """``n`` i.i.d. standard normals via pair-consuming Box-Muller."""
        if n < 0:
            raise ValidationError(f"draw count must be non-negative, got {n}")
        if n == 0:
            return np.empty(0)
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1, u2 = u[:pairs], u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id:#x})"


def randn_grid(shape: tuple[int, int, int], rng: RngStream) -> Grid:
    """Grid of i.i.d. standard normals with the given (h, w, c) shape."""
    if len(shape) != 3:
        raise ValidationError(f"shape must be (h, w, c), got {shape!r}")
    h, w, c = (int(d) for d in shape)
    if min(h, w, c) < 1:
        raise ValidationError(f"grid dimensions must be >= 1, got {(h, w, c)}")
    return Grid(rng.normals(h * w * c).reshape(h, w, c))


def grid_stats(g: Grid) -> tuple[float, float]:
    """(mean, population variance) over every entry of ``g``."""
    flat = g.flat()
    mean = float(flat.mean())
    var = float(flat.var())
    return mean, var


def clamp_unit(g: Grid) -> Grid:
    """Copy of ``g`` with every entry clamped into [0, 1]."""
    return Grid(np.clip(g.values, 0.0, 1.0))
