"""Pixel grids and image I/O.

An :class:`ImageGrid` is a 2-D scalar field with physical pixel spacing in
millimetres.  Row ``i`` runs along depth (axial, z) and column ``j`` along
width (lateral, x); the centre of pixel ``(i, j)`` sits at
``x = (j + 0.5) * dx`` and ``z = (i + 0.5) * dz`` with the origin in the
top-left corner of the imaged region.

Two file formats are supported:

* ``.s2sf`` -- raw float exchange format: magic ``S2SF``, little-endian
  u32 width, u32 height, f32 dx_mm, f32 dz_mm, then width*height
  little-endian f32 values in row-major order.
* ``.pgm`` -- binary PGM (P5, maxval 255) for display exports, with
  pixel value ``round(255 * v)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError

S2SF_MAGIC = b"S2SF"


@dataclass
class GridSpec:
    """Geometry of a pixel grid: size in pixels and spacing in mm."""

    width_px: int
    height_px: int
    dx_mm: float
    dz_mm: float

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ShapeError("grid dimensions must be positive")
        if self.dx_mm <= 0 or self.dz_mm <= 0:
            raise ShapeError("grid spacing must be positive")

    @property
    def width_mm(self) -> float:
        return self.width_px * self.dx_mm

    @property
    def height_mm(self) -> float:
        return self.height_px * self.dz_mm

    def x_centers(self) -> np.ndarray:
        return (np.arange(self.width_px) + 0.5) * self.dx_mm

    def z_centers(self) -> np.ndarray:
        return (np.arange(self.height_px) + 0.5) * self.dz_mm


@dataclass
class ImageGrid:
    """A 2-D image with spacing metadata; ``values`` has shape (height, width)."""

    values: np.ndarray
    dx_mm: float = 1.0
    dz_mm: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeError(f"image values must be 2-D, got shape {self.values.shape}")
        if self.dx_mm <= 0 or self.dz_mm <= 0:
            raise ShapeError("pixel spacing must be positive")

    @property
    def width_px(self) -> int:
        return self.values.shape[1]

    @property
    def height_px(self) -> int:
        return self.values.shape[0]

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.width_px, self.height_px, self.dx_mm, self.dz_mm)

    def with_values(self, values: np.ndarray) -> "ImageGrid":
        """New grid with the same spacing but different pixel data."""
        return ImageGrid(values, self.dx_mm, self.dz_mm)


def empty_grid(spec: GridSpec, dtype=np.float64) -> ImageGrid:
    return ImageGrid(np.zeros((spec.height_px, spec.width_px), dtype=dtype),
                     spec.dx_mm, spec.dz_mm)


def mirror_indices(n: int, pad: int) -> np.ndarray:
    """Source indices of a half-sample symmetric extension of length n+2*pad.

    Matches ``np.pad(mode='symmetric')`` for any pad depth: the extension is
    periodic with period 2n, alternating between the sequence and its mirror.
    """
    idx = np.arange(-pad, n + pad)
    m = np.mod(idx, 2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


def mirror_pad(values: np.ndarray, pad_z: int, pad_x: int) -> np.ndarray:
    """Symmetric (mirror) padding of a 2-D array, valid for any pad depth."""
    rows = mirror_indices(values.shape[0], pad_z)
    cols = mirror_indices(values.shape[1], pad_x)
    return values[np.ix_(rows, cols)]


# ---------------------------------------------------------------------------
# raw float format


def write_s2sf(path, img: ImageGrid) -> None:
    values = np.ascontiguousarray(img.values, dtype="<f4")
    header = S2SF_MAGIC + struct.pack("<IIff", img.width_px, img.height_px,
                                      img.dx_mm, img.dz_mm)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())


def read_s2sf(path) -> ImageGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:4] != S2SF_MAGIC:
        raise InputError(f"{path}: not an S2SF file")
    width, height, dx, dz = struct.unpack("<IIff", blob[4:20])
    expected = 20 + 4 * width * height
    if len(blob) != expected:
        raise InputError(f"{path}: truncated S2SF payload "
                         f"({len(blob)} bytes, expected {expected})")
    values = np.frombuffer(blob, dtype="<f4", offset=20).reshape(height, width)
    return ImageGrid(values.astype(np.float64), float(dx), float(dz))


# ---------------------------------------------------------------------------
# PGM (P5) display export


def write_pgm(path, img: ImageGrid) -> None:
    v = np.clip(img.values, 0.0, 1.0)
    data = np.rint(255.0 * v).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width_px} {img.height_px}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> ImageGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise InputError(f"{path}: not a binary PGM file")
    # header: magic, width, height, maxval -- whitespace separated, with
    # optional '#' comment lines
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise InputError(f"{path}: only maxval 255 PGM supported")
    data = np.frombuffer(blob, dtype=np.uint8, offset=pos, count=width * height)
    if data.size != width * height:
        raise InputError(f"{path}: truncated PGM payload")
    return ImageGrid(data.reshape(height, width).astype(np.float64) / 255.0)


def read_image(path) -> ImageGrid:
    """Load either format by sniffing the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == S2SF_MAGIC:
        return read_s2sf(path)
    if magic[:2] == b"P5":
        return read_pgm(path)
    raise InputError(f"{path}: unrecognized image format")


def write_image_like(path, img: ImageGrid, reference_path) -> None:
    """Write ``img`` in the same format as the file at ``reference_path``."""
    with open(reference_path, "rb") as fh:
        magic = fh.read(4)
    if magic == S2SF_MAGIC:
        write_s2sf(path, img)
    elif magic[:2] == b"P5":
        write_pgm(path, img)
    else:
        raise InputError(f"{reference_path}: unrecognized image format")
