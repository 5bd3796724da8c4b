"""Single-channel intensity raster with physical pixel-size metadata."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

DEFAULT_PIXEL_SIZE_NM = 0.8


@dataclass
class SemImage:
    """Grayscale image with intensities in [0,1] and a pixel size in nm.

    ``pixels`` is a (height, width) float64 array; the constructor copies
    and validates it, so instances can be treated as immutable.
    """

    pixels: np.ndarray
    pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM

    width: int = field(init=False)
    height: int = field(init=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(f"pixels must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("pixel intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError(
                f"pixel intensities must lie in [0,1], got [{arr.min()}, {arr.max()}]"
            )
        if self.pixel_size_nm <= 0:
            raise ValidationError(f"pixel_size_nm must be positive, got {self.pixel_size_nm}")
        self.pixels = np.ascontiguousarray(arr)
        self.height, self.width = arr.shape

    def with_pixels(self, pixels: np.ndarray) -> "SemImage":
        """New image with the same pixel size and replaced pixel data."""
        return SemImage(pixels, self.pixel_size_nm)

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)


def save_png(image: SemImage, path: Path | str) -> None:
    """Write the image as 8-bit grayscale PNG (deterministic bytes)."""
    Image.fromarray(image.to_uint8(), mode="L").save(path, format="PNG")


def load_image(path: Path | str, pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM) -> SemImage:
    """Load PNG/TIFF/JPG as grayscale, scaled to [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return SemImage(arr, pixel_size_nm)
