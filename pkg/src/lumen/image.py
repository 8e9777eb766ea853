"""Pixel container and rounding helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

UNIT = "unit-linear"
ELECTRONS = "electrons"
DN = "dn"
SIGNED = "signed-unit"
RANGE_TAGS = (UNIT, ELECTRONS, DN, SIGNED)


def range_interval(tag: str, bits: int | None = None) -> tuple[float, float]:
    """Closed interval admitted by a range tag."""
    if tag == UNIT:
        return 0.0, 1.0
    if tag == SIGNED:
        return -1.0, 1.0
    if tag == ELECTRONS:
        return 0.0, np.inf
    if tag == DN:
        if bits is None:
            raise ContractError("range 'dn' requires a bit depth")
        return 0.0, float(2**bits - 1)
    raise ContractError(f"unknown range tag {tag!r}; expected one of {RANGE_TAGS}")


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class ImageBuffer:
    """An H x W x C float32 raster tagged with the interval its samples live in.

    The array is stored read-only; derive new buffers with :meth:`with_data`.
    2-D input is promoted to a single channel.
    """

    data: np.ndarray
    range: str = UNIT
    bits: int | None = None
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ContractError(f"image data must be HxW or HxWxC, got shape {arr.shape}")
        if arr.size == 0:
            raise ContractError("image must have at least one sample")
        if self.range == DN and self.bits is None:
            object.__setattr__(self, "bits", 12)
        lo, hi = range_interval(self.range, self.bits)
        if not np.all(np.isfinite(arr)):
            raise ContractError("image samples must be finite")
        if arr.min() < lo or arr.max() > hi:
            raise ContractError(
                f"samples span [{arr.min()}, {arr.max()}], outside range "
                f"{self.range!r} interval [{lo}, {hi}]"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data, range: str | None = None, bits: int | None = None) -> ImageBuffer:
        tag = self.range if range is None else range
        if bits is None and tag == self.range:
            bits = self.bits
        return ImageBuffer(data, range=tag, bits=bits, source=self.source)

    def clipped(self) -> ImageBuffer:
        lo, hi = range_interval(self.range, self.bits)
        return self.with_data(np.clip(self.data, lo, hi))

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return (
            self.range == other.range
            and self.bits == other.bits
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def clipped_buffer(data, range: str = UNIT, bits: int | None = None) -> ImageBuffer:
    """Build a buffer after clipping ``data`` into the tag's interval."""
    lo, hi = range_interval(range, bits if range != DN or bits else 12)
    return ImageBuffer(np.clip(np.asarray(data, dtype=np.float64), lo, hi), range=range, bits=bits)
