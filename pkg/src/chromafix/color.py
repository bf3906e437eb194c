"""Color primitives shared by the models, metrics and harness.

Colors are handled as numpy arrays whose last axis holds (r, g, b).  All
model math happens in real-valued 8-bit scale (0-255), so a 12-bit value
``v`` corresponds to ``v / 16`` in these units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

#: Distance between black and white in the 8-bit RGB cube.
MAX_RGB_DISTANCE = 255.0 * math.sqrt(3.0)


class ColorError(ValueError):
    """Invalid color data or region."""


@dataclass(frozen=True)
class ImageBuffer:
    """An RGB image stored as an ``(height, width, 3)`` integer array.

    ``bit_depth`` is 8 (uint8 storage) or 12 (uint16 storage, values 0-4095).
    """

    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ColorError(f"expected (height, width, 3) pixels, got shape {px.shape}")
        if self.bit_depth == 8:
            if px.dtype != np.uint8:
                raise ColorError(f"8-bit image must be uint8, got {px.dtype}")
        elif self.bit_depth == 12:
            if px.dtype != np.uint16:
                raise ColorError(f"12-bit image must be uint16, got {px.dtype}")
            if px.size and int(px.max()) > 4095:
                raise ColorError("12-bit image has channel values above 4095")
        else:
            raise ColorError(f"unsupported bit depth {self.bit_depth}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def as_float8(self) -> np.ndarray:
        """Pixels as float64 in 8-bit scale (12-bit data divided by 16)."""
        px = self.pixels.astype(np.float64)
        return px / 16.0 if self.bit_depth == 12 else px


@dataclass(frozen=True)
class PatchRegion:
    """Axis-aligned pixel rectangle of one chart patch."""

    patch_index: int
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ColorError(f"patch {self.patch_index}: empty rectangle {self.w}x{self.h}")
        if self.patch_index < 1:
            raise ColorError(f"patch index must be >= 1, got {self.patch_index}")

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def dilated(self, margin: int, width: int, height: int) -> "PatchRegion":
        """The rectangle grown by ``margin`` pixels and cropped to the image."""
        x0 = max(self.x - margin, 0)
        y0 = max(self.y - margin, 0)
        x1 = min(self.x + self.w + margin, width)
        y1 = min(self.y + self.h + margin, height)
        return PatchRegion(self.patch_index, x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class ChartCorrespondence:
    """Paired captured (``source``) and reference (``target``) chart colors, each ``(N, 3)``."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        src = np.asarray(self.source, dtype=np.float64)
        tgt = np.asarray(self.target, dtype=np.float64)
        if src.ndim != 2 or src.shape[1] != 3 or src.shape != tgt.shape:
            raise ColorError(f"source {src.shape} and target {tgt.shape} must both be (N, 3)")
        if src.shape[0] < 1:
            raise ColorError("correspondence needs at least one color")
        if not (np.isfinite(src).all() and np.isfinite(tgt).all()):
            raise ColorError("correspondence contains non-finite colors")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)

    @property
    def n(self) -> int:
        return self.source.shape[0]


def rgb_distance(a, b) -> np.ndarray | float:
    """Euclidean distance in RGB, broadcasting over leading axes."""
    d = np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), axis=-1)
    return float(d) if d.ndim == 0 else d


def normalize_distance(d):
    """Express an RGB distance as a percentage of the black-to-white distance."""
    return 100.0 * d / MAX_RGB_DISTANCE


def quantize_12_to_8(img: ImageBuffer) -> ImageBuffer:
    # truncation, not rounding
    if img.bit_depth != 12:
        raise ColorError(f"quantize_12_to_8 expects a 12-bit image, got {img.bit_depth}-bit")
    return ImageBuffer((img.pixels >> 4).astype(np.uint8), 8)


def extract_patch_color(img: ImageBuffer, region: PatchRegion) -> np.ndarray:
    """Mean color of a patch region, in 8-bit scale."""
    if not region.inside(img.width, img.height):
        raise ColorError(
            f"patch {region.patch_index} ({region.x},{region.y},{region.w},{region.h}) "
            f"is outside the {img.width}x{img.height} image"
        )
    block = img.as_float8()[region.y:region.y + region.h, region.x:region.x + region.w]
    return block.reshape(-1, 3).mean(axis=0)


def extract_chart(img: ImageBuffer, regions: Sequence[PatchRegion]) -> np.ndarray:
    return np.stack([extract_patch_color(img, r) for r in regions])


def clamp_to_rgb8(c) -> np.ndarray:
    """Round half-up and clamp to the 8-bit cube; works on any ``(..., 3)`` array."""
    arr = np.asarray(c, dtype=np.float64)
    if np.isnan(arr).any():
        raise ColorError("cannot clamp NaN color channels")
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def chart_mask(height: int, width: int, regions: Sequence[PatchRegion], margin: int = 0) -> np.ndarray:
    """Boolean ``(height, width)`` mask, True on (dilated) patch rectangles."""
    mask = np.zeros((height, width), dtype=bool)
    for r in regions:
        d = r.dilated(margin, width, height) if margin else r
        mask[d.y:d.y + d.h, d.x:d.x + d.w] = True
    return mask


# -- image I/O ---------------------------------------------------------------

def read_image(path: str | Path, bit_depth: int | None = None) -> ImageBuffer:
    """Read a PNG (8 or 16 bit) or binary PPM.

    16-bit files hold 12-bit data left-aligned, so ``v12 = v16 // 16``.
    ``bit_depth``, when given, is checked against the file.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ColorError(f"could not decode image: {path}")
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    elif data.shape[2] == 4:
        data = data[:, :, :3]
    data = np.ascontiguousarray(data[:, :, ::-1])
    if data.dtype == np.uint16:
        img = ImageBuffer((data >> 4).astype(np.uint16), 12)
    elif data.dtype == np.uint8:
        img = ImageBuffer(data, 8)
    else:
        raise ColorError(f"unsupported sample type {data.dtype} in {path}")
    if bit_depth is not None and img.bit_depth != bit_depth:
        raise ColorError(f"{path}: expected {bit_depth}-bit data, file holds {img.bit_depth}-bit")
    return img


def write_image(path: str | Path, img: ImageBuffer) -> None:
    """Write PNG (12-bit data stored left-aligned in 16 bits) or 8-bit PPM."""
    path = Path(path)
    px = img.pixels
    if img.bit_depth == 12:
        if path.suffix.lower() != ".png":
            raise ColorError("12-bit images can only be written as PNG")
        px = (px.astype(np.uint16) << 4)
    if not cv2.imwrite(str(path), np.ascontiguousarray(px[:, :, ::-1])):
        raise OSError(f"failed to write image: {path}")
