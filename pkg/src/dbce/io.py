"""Binary netpbm readers/writers: ``P5`` graymaps for label masks and
``Pf`` grayscale float maps for weight, loss and probability planes.

PFM stores rows bottom-to-top; arrays in memory are always top row first.
Float maps are kept in float64 in memory and written as float32, which is
the one place precision is lost.
"""

import os
import re

import numpy as np

from .grid import check_mask


class NetpbmError(ValueError):
    """Base class for netpbm parse/write failures."""


class UnsupportedFormatError(NetpbmError):
    pass


class MalformedHeaderError(NetpbmError):
    pass


class TruncatedDataError(NetpbmError):
    pass


_PGM_HEADER = re.compile(
    rb"\A(P[0-9A-Za-z])"
    rb"(?:\s+|#[^\n]*\n)+(\d+)"
    rb"(?:\s+|#[^\n]*\n)+(\d+)"
    rb"(?:\s+|#[^\n]*\n)+(\d+)"
    rb"(?:#[^\n]*\n|\s)")


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def read_pgm(path):
    """Read a binary ``P5`` graymap whose pixel values are class IDs."""
    data = _read_bytes(path)
    if data[:2] != b"P5":
        raise UnsupportedFormatError(
            f"{path}: expected binary graymap 'P5', found {data[:2]!r}")
    m = _PGM_HEADER.match(data)
    if m is None:
        raise MalformedHeaderError(f"{path}: malformed P5 header")
    width, height, maxval = (int(g) for g in m.groups()[1:])
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{path}: invalid dimensions {width}x{height}")
    if maxval < 1 or maxval > 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} not in [1, 255]")
    payload = data[m.end():]
    need = width * height
    if len(payload) < need:
        raise TruncatedDataError(
            f"{path}: payload has {len(payload)} bytes, expected {need}")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=need)
    if pixels.max() > maxval:
        raise MalformedHeaderError(f"{path}: pixel value exceeds maxval {maxval}")
    return pixels.reshape(height, width).astype(np.int64)


def write_pgm(mask, path):
    mask = check_mask(mask)
    if mask.ndim != 2:
        raise ValueError("write_pgm expects a single (H, W) mask")
    if mask.max() > 255:
        raise ValueError("P5 with one byte per pixel cannot hold labels > 255")
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(mask.astype(np.uint8).tobytes())


def _next_line(data, pos):
    end = data.find(b"\n", pos)
    if end < 0:
        raise MalformedHeaderError("unexpected end of header")
    return data[pos:end].decode("ascii", errors="replace").strip(), end + 1


def read_pfm(path):
    """Read a grayscale ``Pf`` float map into an ``(H, W)`` float64 array."""
    data = _read_bytes(path)
    try:
        ident, pos = _next_line(data, 0)
        if ident == "PF":
            raise UnsupportedFormatError(f"{path}: colour 'PF' maps are not supported")
        if ident != "Pf":
            raise UnsupportedFormatError(f"{path}: expected 'Pf', found {ident!r}")
        dims, pos = _next_line(data, pos)
        scale_line, pos = _next_line(data, pos)
    except MalformedHeaderError as exc:
        raise MalformedHeaderError(f"{path}: {exc}") from None
    try:
        width, height = (int(v) for v in dims.split())
        scale = float(scale_line)
    except ValueError:
        raise MalformedHeaderError(f"{path}: bad dimension/scale lines") from None
    if width < 1 or height < 1 or scale == 0.0:
        raise MalformedHeaderError(f"{path}: invalid dimensions or zero scale")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    need = width * height * 4
    if len(data) - pos < need:
        raise TruncatedDataError(
            f"{path}: payload has {len(data) - pos} bytes, expected {need}")
    values = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return np.flipud(values.reshape(height, width)).astype(np.float64)


def write_pfm(grid, path):
    """Write an ``(H, W)`` grid as little-endian ``Pf`` (scale ``-1.0``)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"write_pfm expects an (H, W) grid, got {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("refusing to write non-finite values to PFM")
    single = grid.astype("<f4")
    if not np.all(np.isfinite(single)):
        raise ValueError("value overflows single precision")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(single).tobytes())


def read_prob_planes(paths):
    """Stack one PFM per class (``probs_<c>.pfm``) into a ``(C, H, W)`` map."""
    planes = [read_pfm(p) for p in paths]
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise ValueError(f"probability planes have differing shapes: {sorted(shapes)}")
    return np.stack(planes)


def prob_plane_paths(directory, classes):
    return [os.path.join(directory, f"probs_{c}.pfm") for c in range(classes)]
