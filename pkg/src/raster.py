"""
Image and mask containers, file I/O and bicubic sampling

All processing happens on NumPy arrays; Pillow is only used to move pixels
between files and ``uint8`` arrays. Pixel coordinates are continuous with
pixel centres on integers: ``x`` is the column, ``y`` the row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.errors import ImageIOError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SUPPORTED_FORMATS = {"PNG", "PPM"}
SAVE_FORMATS = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}
SIXTEEN_BIT_MODES = {"I", "I;16", "I;16B", "I;16L", "I;16N"}
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
MASK_THRESHOLD = 128


def _freeze(arr):
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Raster:
    """8-bit image stored as an (height, width, channels) array"""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3:
            raise ValueError(f"Raster needs a 2-D or 3-D array, got shape {pixels.shape}")
        if pixels.shape[2] not in (1, 3):
            raise ValueError(f"Raster channel count must be 1 or 3, got {pixels.shape[2]}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"Raster must be at least 1x1, got shape {pixels.shape}")
        if pixels.dtype != np.uint8:
            raise ValueError(f"Raster pixels must be uint8, got {pixels.dtype}")
        object.__setattr__(self, "pixels", _freeze(pixels))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def channels(self):
        return self.pixels.shape[2]

    @property
    def shape(self):
        return self.pixels.shape

    @classmethod
    def constant(cls, width, height, value, channels=1):
        return cls(np.full((height, width, channels), value, dtype=np.uint8))

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Raster(width={self.width}, height={self.height}, channels={self.channels})"


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary mask, 1 = valid iris pixel, 0 = noise or background"""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"Mask needs a 2-D array, got shape {bits.shape}")
        if bits.dtype != bool:
            values = np.unique(bits)
            if not np.isin(values, (0, 1)).all():
                raise ValueError("Mask values must be strictly binary (0 or 1)")
            bits = bits.astype(bool)
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]

    def matches(self, raster):
        return (self.height, self.width) == (raster.height, raster.width)

    def to_raster(self):
        """Mask as a 0/255 single-channel raster (for geometric warps)"""
        return Raster(self.bits.astype(np.uint8) * 255)

    @classmethod
    def from_raster(cls, raster, threshold=MASK_THRESHOLD):
        gray = to_grayscale(raster).pixels[:, :, 0]
        return cls(gray >= threshold)

    def __repr__(self):
        return f"Mask(width={self.width}, height={self.height}, foreground={int(self.bits.sum())})"


# ----------------------------------------------------------------------------
# File I/O
# ----------------------------------------------------------------------------

def _decoded_array(img):
    """Convert a decoded Pillow image to a uint8 (H, W, C) array"""
    if img.mode in SIXTEEN_BIT_MODES:
        raw = np.asarray(img, dtype=np.float64)
        return np.rint(raw * 255.0 / 65535.0).clip(0, 255).astype(np.uint8)
    if img.mode in ("1", "L", "LA"):
        return np.asarray(img.convert("L"), dtype=np.uint8)
    if img.mode == "P":
        img = img.convert("RGBA") if "transparency" in img.info else img.convert("RGB")
    if img.mode in ("RGBA", "CMYK", "YCbCr", "RGBX"):
        img = img.convert("RGB")
    if img.mode != "RGB":
        raise ImageIOError(f"unsupported pixel mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def load_image(path: PathLike) -> Raster:
    """
    Load a PNG or binary portable graymap/pixmap into a Raster

    Parameters
    ----------
    path : str or Path
        Image file. 16-bit sources are rescaled to 8 bits.

    Returns
    -------
    raster : Raster
        Decoded image with 1 or 3 channels
    """
    path = Path(path)
    if not path.exists():
        raise ImageIOError(f"{path}: cannot read image (file not found)")
    try:
        with Image.open(path) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise ImageIOError(f"{path}: unsupported format {img.format}")
            img.load()
            try:
                arr = _decoded_array(img)
            except ImageIOError as e:
                raise ImageIOError(f"{path}: {e}") from e
    except UnidentifiedImageError as e:
        raise ImageIOError(f"{path}: corrupt image or unsupported format") from e
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageIOError(f"{path}: corrupt image ({e})") from e

    logger.debug("Loaded %s: %s", path.name, arr.shape)
    return Raster(arr)


def save_image(raster: Raster, path: PathLike) -> None:
    """
    Write a Raster losslessly (PNG, or PGM/PPM by extension)

    The parent directory must already exist.
    """
    path = Path(path)
    fmt = SAVE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ImageIOError(f"{path}: unsupported output format '{path.suffix}'")
    if not path.parent.is_dir():
        raise ImageIOError(f"{path}: cannot write image (parent directory missing)")

    arr = raster.pixels[:, :, 0] if raster.channels == 1 else raster.pixels
    try:
        Image.fromarray(np.array(arr, copy=True)).save(path, format=fmt)
    except OSError as e:
        raise ImageIOError(f"{path}: cannot write image ({e})") from e


def load_mask(path: PathLike) -> Mask:
    """Load a mask image, thresholding its gray level at 128"""
    return Mask.from_raster(load_image(path))


def save_mask(mask: Mask, path: PathLike) -> None:
    save_image(mask.to_raster(), path)


# ----------------------------------------------------------------------------
# Pixel arithmetic
# ----------------------------------------------------------------------------

def to_grayscale(raster: Raster) -> Raster:
    """ITU-R 601 luma, rounded to the nearest integer"""
    if raster.channels == 1:
        return raster
    luma = raster.pixels.astype(np.float64) @ LUMA_WEIGHTS
    return Raster(np.rint(luma).clip(0, 255).astype(np.uint8))


def materialize(values) -> np.ndarray:
    """Round and clamp real intensities to uint8"""
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _catmull_rom_weights(t):
    # a = -0.5
    t2 = t * t
    t3 = t2 * t
    return np.stack([
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ], axis=-1)


_TAPS = np.arange(-1, 3)


def sample_bicubic(raster: Raster, x, y) -> np.ndarray:
    """
    Catmull-Rom bicubic sample at real pixel coordinates

    Parameters
    ----------
    raster : Raster
        Source image
    x, y : float or array_like
        Column and row coordinates (broadcast together). Coordinates outside
        the image use clamp-to-edge extension.

    Returns
    -------
    values : np.ndarray
        Real intensities of shape ``broadcast(x, y).shape + (channels,)``,
        not clamped
    """
    xs, ys = np.broadcast_arrays(np.asarray(x, dtype=np.float64),
                                 np.asarray(y, dtype=np.float64))
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    wx = _catmull_rom_weights(xs - x0)
    wy = _catmull_rom_weights(ys - y0)

    cols = np.clip(x0.astype(np.intp)[..., None] + _TAPS, 0, raster.width - 1)
    rows = np.clip(y0.astype(np.intp)[..., None] + _TAPS, 0, raster.height - 1)
    data = raster.pixels.astype(np.float64)
    patch = data[rows[..., :, None], cols[..., None, :]]
    return np.einsum("...i,...j,...ijc->...c", wy, wx, patch)


def resize_bicubic(raster: Raster, out_w: int, out_h: int) -> Raster:
    """
    Bicubic resize with pixel-centre alignment

    Source coordinates are ``(dst + 0.5) * scale - 0.5`` on each axis.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"Output size must be at least 1x1, got {out_w}x{out_h}")
    scale_x = raster.width / out_w
    scale_y = raster.height / out_h
    src_x = (np.arange(out_w) + 0.5) * scale_x - 0.5
    src_y = (np.arange(out_h) + 0.5) * scale_y - 0.5
    grid_x, grid_y = np.meshgrid(src_x, src_y)
    return Raster(materialize(sample_bicubic(raster, grid_x, grid_y)))
