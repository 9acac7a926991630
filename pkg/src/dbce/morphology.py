"""Disk structuring elements and binary dilation with clipped borders."""

import math
import numbers
from dataclasses import dataclass, field

import numpy as np


def _check_radius(radius):
    if isinstance(radius, bool) or not isinstance(radius, numbers.Integral):
        if isinstance(radius, numbers.Real) and float(radius).is_integer():
            radius = int(radius)
        else:
            raise ValueError(f"radius must be a non-negative integer, got {radius!r}")
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    return int(radius)


@dataclass(frozen=True)
class StructuringElement:
    """Discrete Euclidean disk ``{(dy, dx) : dy**2 + dx**2 <= radius**2}``."""

    radius: int
    offsets: tuple = field(repr=False)

    def row_spans(self):
        """Yield ``(dy, half_width)`` for each row of the disk."""
        r = self.radius
        for dy in range(-r, r + 1):
            yield dy, math.isqrt(r * r - dy * dy)

    def __len__(self):
        return len(self.offsets)


def disk_element(radius):
    radius = _check_radius(radius)
    offsets = tuple(
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dy * dy + dx * dx <= radius * radius)
    return StructuringElement(radius, offsets)


def _horizontal_dilate(bits, half):
    # window sum over [j - half, j + half] via cumulative sums, clipped at the borders
    w = bits.shape[-1]
    cs = np.zeros(bits.shape[:-1] + (w + 1,), dtype=np.int64)
    np.cumsum(bits, axis=-1, out=cs[..., 1:])
    cols = np.arange(w)
    hi = np.minimum(cols + half + 1, w)
    lo = np.maximum(cols - half, 0)
    return (cs[..., hi] - cs[..., lo]) > 0


def dilate(mask, element):
    """Binary dilation of ``mask`` by ``element``.

    Offsets that fall outside the grid are dropped, so a dilated mask never
    extends past the image and there is no wraparound. Leading batch axes are
    allowed; the last two axes are (row, col).
    """
    bits = np.asarray(mask).astype(bool)
    if bits.ndim < 2:
        raise ValueError(f"mask must be at least 2-D, got shape {bits.shape}")
    if element.radius == 0:
        return bits.astype(np.uint8)
    h = bits.shape[-2]
    out = np.zeros_like(bits)
    rows = {}
    for dy, half in element.row_spans():
        if half not in rows:
            rows[half] = _horizontal_dilate(bits, half)
        hor = rows[half]
        # out[i] |= hor[i + dy]
        if dy >= 0:
            if dy < h:
                out[..., : h - dy, :] |= hor[..., dy:, :]
        elif -dy < h:
            out[..., -dy:, :] |= hor[..., : h + dy, :]
    return out.astype(np.uint8)

