"""
Iris preprocessing: delineation, segmentation, rubber-sheet normalization
and crops

Every input scheme is a composition of the functions in this module:

    delineate -> (apply_segmentation) -> (rubber_sheet | crop) -> resize

Angles follow one convention everywhere: theta = 0 on the +x axis, increasing
counter-clockwise as the image is displayed (towards smaller row indices).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from src.errors import ConfigError, GeometryError
from src.raster import Mask, Raster, materialize, resize_bicubic, sample_bicubic

logger = logging.getLogger(__name__)

FINAL_SIZE = 224
FALLBACK_PUPIL_RATIO = 0.25

# 4-neighbour steps as (drow, dcol)
_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise GeometryError(f"Circle radius must be positive, got {self.r}")

    def points(self, theta):
        """Boundary points at angle(s) theta, counter-clockwise on screen"""
        theta = np.asarray(theta, dtype=np.float64)
        return self.cx + self.r * np.cos(theta), self.cy - self.r * np.sin(theta)

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 < self.r ** 2


@dataclass(frozen=True)
class IrisGeometry:
    """Pupil circle, limbic circle and mask bounding box (x, y, w, h)"""

    inner: Circle
    outer: Circle
    bbox: Tuple[int, int, int, int]

    def __post_init__(self):
        if not self.inner.r < self.outer.r:
            raise GeometryError(
                f"Inner radius {self.inner.r:.3f} must be smaller than outer radius {self.outer.r:.3f}"
            )
        if not self.outer.contains(self.inner.cx, self.inner.cy):
            raise GeometryError("Inner circle centre lies outside the outer circle")
        if self.bbox[2] < 1 or self.bbox[3] < 1:
            raise GeometryError(f"Bounding box must have positive size, got {self.bbox}")


class Normalization(Enum):
    NORM_8X1 = "8x1"
    NORM_4X2 = "4x2"
    NON_NORMALIZED = "none"


class CropMode(Enum):
    DELINEATED = "delineated"
    BOUNDING_BOX = "bbox"


INTERMEDIATE_SIZES = {
    Normalization.NORM_8X1: (512, 64),
    Normalization.NORM_4X2: (256, 128),
}


@dataclass(frozen=True)
class PreprocessConfig:
    """
    One input scheme

    ``crop`` only applies when ``normalization`` is NON_NORMALIZED.
    ``segment_before_normalization`` selects whether noise is zeroed in image
    space (default) or on the normalized/cropped image.
    """

    normalization: Normalization = Normalization.NON_NORMALIZED
    segmented: bool = False
    crop: CropMode = CropMode.DELINEATED
    final_size: int = FINAL_SIZE
    segment_before_normalization: bool = True

    def __post_init__(self):
        if not isinstance(self.normalization, Normalization):
            object.__setattr__(self, "normalization", _enum_value(Normalization, self.normalization))
        if not isinstance(self.crop, CropMode):
            object.__setattr__(self, "crop", _enum_value(CropMode, self.crop))
        if self.crop is CropMode.BOUNDING_BOX and self.normalization is not Normalization.NON_NORMALIZED:
            raise ConfigError("Bounding-box crop is only valid for non-normalized schemes")
        if int(self.final_size) < 1:
            raise ConfigError(f"final_size must be positive, got {self.final_size}")

    @property
    def intermediate_size(self) -> Optional[Tuple[int, int]]:
        return INTERMEDIATE_SIZES.get(self.normalization)

    @property
    def scheme(self):
        seg = "seg" if self.segmented else "noseg"
        if self.normalization is Normalization.NON_NORMALIZED:
            prefix = "bbox" if self.crop is CropMode.BOUNDING_BOX else "nonorm"
        else:
            prefix = f"norm{self.normalization.value}"
        return f"{prefix}-{seg}"

    @classmethod
    def from_scheme(cls, name, **overrides):
        try:
            config = SCHEMES[name]
        except KeyError:
            raise ConfigError(f"Unknown scheme '{name}'. Available: {', '.join(SCHEMES)}") from None
        return replace(config, **overrides) if overrides else config

    def to_dict(self):
        return {
            "normalization": self.normalization.value,
            "segmented": self.segmented,
            "crop": self.crop.value,
            "final_size": self.final_size,
            "segment_before_normalization": self.segment_before_normalization,
        }


def _enum_value(enum_cls, value):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(m.value for m in enum_cls)
        raise ConfigError(f"Invalid {enum_cls.__name__} '{value}'. Choose from: {choices}") from None


def _build_schemes():
    schemes = {}
    for norm in Normalization:
        for segmented in (True, False):
            config = PreprocessConfig(normalization=norm, segmented=segmented)
            schemes[config.scheme] = config
    for segmented in (True, False):
        config = PreprocessConfig(segmented=segmented, crop=CropMode.BOUNDING_BOX)
        schemes[config.scheme] = config
    return schemes


SCHEMES = _build_schemes()
DELINEATED_SCHEMES = tuple(name for name in SCHEMES if not name.startswith("bbox"))


# ----------------------------------------------------------------------------
# Delineation
# ----------------------------------------------------------------------------

def fit_circle(points) -> Circle:
    """
    Algebraic (Kasa) least-squares circle fit

    Minimises sum((x - cx)^2 + (y - cy)^2 - r^2)^2 by solving the 3x3 normal
    equations of x^2 + y^2 + D x + E y + F = 0. Points are centred on their
    mean first for conditioning.

    Parameters
    ----------
    points : array_like, shape (n, 2)
        (x, y) boundary coordinates, n >= 3

    Returns
    -------
    circle : Circle
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise GeometryError(f"Circle fit needs at least 3 points, got {len(pts)}")

    mean = pts.mean(axis=0)
    u = pts[:, 0] - mean[0]
    v = pts[:, 1] - mean[1]
    design = np.column_stack([u, v, np.ones_like(u)])
    rhs = -(u ** 2 + v ** 2)
    normal = design.T @ design
    if np.linalg.matrix_rank(normal) < 3:
        raise GeometryError("Circle fit is degenerate (points are collinear)")
    try:
        d, e, f = np.linalg.solve(normal, design.T @ rhs)
    except np.linalg.LinAlgError as err:
        raise GeometryError(f"Circle fit is degenerate ({err})") from err

    uc, vc = -d / 2.0, -e / 2.0
    r2 = uc ** 2 + vc ** 2 - f
    if not r2 > 0:
        raise GeometryError("Circle fit produced a non-positive radius")
    return Circle(float(uc + mean[0]), float(vc + mean[1]), float(math.sqrt(r2)))


def _edge_points(region, other, outside=True, keep=None):
    """
    Midpoints of pixel edges between ``region`` and ``other`` pixels

    ``outside`` says whether pixels beyond the border count as ``other``.
    ``keep(rows, cols, drow, dcol)`` optionally filters edges per direction.
    Returns an (n, 2) array of (x, y).
    """
    height, width = region.shape
    padded = np.pad(other, 1, constant_values=outside)
    points = []
    for drow, dcol in _NEIGHBOURS:
        shifted = padded[1 + drow:1 + drow + height, 1 + dcol:1 + dcol + width]
        rows, cols = np.nonzero(region & shifted)
        if keep is not None:
            sel = keep(rows, cols, drow, dcol)
            rows, cols = rows[sel], cols[sel]
        points.append(np.column_stack([cols + 0.5 * dcol, rows + 0.5 * drow]))
    return np.concatenate(points) if points else np.empty((0, 2))


def _largest_enclosed_hole(foreground):
    """Largest background component that does not touch the image border"""
    labels, count = ndimage.label(~foreground)
    if count == 0:
        return None
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    sizes[0] = 0
    border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    sizes[np.unique(border)] = 0
    if sizes.max() == 0:
        return None
    return labels == int(sizes.argmax())


def _bounding_box(foreground):
    rows = np.nonzero(foreground.any(axis=1))[0]
    cols = np.nonzero(foreground.any(axis=0))[0]
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def delineate(mask: Mask) -> IrisGeometry:
    """
    Fit the pupil and limbic circles of a binary iris mask

    The outer circle is fitted on the mask's outer contour: edges between
    foreground and background whose outward direction faces away from the
    foreground centroid (enclosed holes are filled first). The inner circle is
    fitted on the contour of the largest enclosed background component; when
    the mask has no hole the pupil defaults to the centroid with a quarter of
    the outer radius.

    Parameters
    ----------
    mask : Mask
        Binary iris mask

    Returns
    -------
    geom : IrisGeometry
    """
    foreground = np.asarray(mask.bits, dtype=bool)
    if not foreground.any():
        raise GeometryError("empty mask")

    rows, cols = np.nonzero(foreground)
    centroid = (float(cols.mean()), float(rows.mean()))

    filled = ndimage.binary_fill_holes(foreground)

    def facing_away(r, c, drow, dcol):
        # measured at the edge midpoint so a pixel on the centroid keeps its edges
        return (c + 0.5 * dcol - centroid[0]) * dcol + (r + 0.5 * drow - centroid[1]) * drow > 0

    outer = fit_circle(_edge_points(filled, ~filled, keep=facing_away))

    inner = None
    hole = _largest_enclosed_hole(foreground)
    if hole is not None:
        try:
            candidate = fit_circle(_edge_points(foreground, hole, outside=False))
            if candidate.r < outer.r and outer.contains(candidate.cx, candidate.cy):
                inner = candidate
            else:
                logger.debug("Rejected pupil fit %s against %s", candidate, outer)
        except GeometryError as e:
            logger.debug("Pupil fit failed (%s); using fallback", e)

    if inner is None:
        inner = Circle(centroid[0], centroid[1], outer.r * FALLBACK_PUPIL_RATIO)
        if not outer.contains(inner.cx, inner.cy):
            inner = Circle(outer.cx, outer.cy, outer.r * FALLBACK_PUPIL_RATIO)

    return IrisGeometry(inner=inner, outer=outer, bbox=_bounding_box(foreground))


# ----------------------------------------------------------------------------
# Segmentation, normalization and crops
# ----------------------------------------------------------------------------

def apply_segmentation(image: Raster, mask: Mask) -> Raster:
    """Zero every pixel (all channels) where the mask is 0"""
    if not mask.matches(image):
        raise GeometryError(
            f"Mask size {mask.width}x{mask.height} does not match image size {image.width}x{image.height}"
        )
    return Raster(image.pixels * mask.bits[:, :, None].astype(np.uint8))


def rubber_sheet(image: Raster, geom: IrisGeometry, out_w: int, out_h: int) -> Raster:
    """
    Unwrap the iris annulus onto an out_w x out_h polar grid

    Column j samples angle 2*pi*j/out_w; row i samples the convex combination
    (1 - rho) * pupil_point + rho * limbic_point with rho = i / (out_h - 1),
    so row 0 is the pupil boundary and the last row the limbic boundary.
    """
    if out_w < 2 or out_h < 2:
        raise GeometryError(f"Normalized size must be at least 2x2, got {out_w}x{out_h}")
    if geom.inner.r >= geom.outer.r:
        raise GeometryError("degenerate geometry: inner radius must be smaller than outer radius")

    theta = 2.0 * np.pi * np.arange(out_w) / out_w
    rho = (np.arange(out_h) / (out_h - 1))[:, None]
    x_in, y_in = geom.inner.points(theta)
    x_out, y_out = geom.outer.points(theta)
    x = (1.0 - rho) * x_in + rho * x_out
    y = (1.0 - rho) * y_in + rho * y_out
    return Raster(materialize(sample_bicubic(image, x, y)))


def _square_window(pixels, x0, y0, side):
    """side x side window at (x0, y0), zero-padded where it leaves the image"""
    height, width, channels = pixels.shape
    out = np.zeros((side, side, channels), dtype=pixels.dtype)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, width), min(y0 + side, height)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = pixels[sy0:sy1, sx0:sx1]
    return out


def crop_delineated(image: Raster, geom: IrisGeometry) -> Raster:
    """
    Square crop of side 2 * outer.r around the limbic circle

    Pixels outside the outer circle and inside the inner circle are set to 0.
    """
    outer, inner = geom.outer, geom.inner
    side = max(1, int(round(2.0 * outer.r)))
    x0 = int(math.floor(outer.cx - side / 2.0 + 0.5))
    y0 = int(math.floor(outer.cy - side / 2.0 + 0.5))
    window = _square_window(image.pixels, x0, y0, side)

    ys, xs = np.mgrid[y0:y0 + side, x0:x0 + side]
    keep = ((xs - outer.cx) ** 2 + (ys - outer.cy) ** 2 <= outer.r ** 2) & ~inner.contains(xs, ys)
    return Raster(window * keep[:, :, None].astype(np.uint8))


def crop_bbox(image: Raster, geom: IrisGeometry) -> Raster:
    """Square around the mask bounding box, zero-padded, no blackening"""
    x, y, w, h = geom.bbox
    side = max(w, h)
    x0 = x + (w - side) // 2
    y0 = y + (h - side) // 2
    return Raster(_square_window(image.pixels, x0, y0, side))


def _geometric_stage(raster, geom, config):
    if config.intermediate_size is not None:
        out_w, out_h = config.intermediate_size
        return rubber_sheet(raster, geom, out_w, out_h)
    if config.crop is CropMode.BOUNDING_BOX:
        return crop_bbox(raster, geom)
    return crop_delineated(raster, geom)


def preprocess_intermediate(image: Raster, mask: Mask, config: PreprocessConfig,
                            geom: Optional[IrisGeometry] = None) -> Raster:
    """
    Everything before the final resize: normalized strip or square crop

    Used directly by the pipeline when augmentation rotates the crop.
    """
    if not mask.matches(image):
        raise GeometryError(
            f"Mask size {mask.width}x{mask.height} does not match image size {image.width}x{image.height}"
        )
    if geom is None:
        geom = delineate(mask)

    if config.segmented and config.segment_before_normalization:
        image = apply_segmentation(image, mask)

    intermediate = _geometric_stage(image, geom, config)

    if config.segmented and not config.segment_before_normalization:
        warped = Mask.from_raster(_geometric_stage(mask.to_raster(), geom, config))
        intermediate = apply_segmentation(intermediate, warped)
    return intermediate


def finalize(intermediate: Raster, config: PreprocessConfig) -> Raster:
    return resize_bicubic(intermediate, config.final_size, config.final_size)


def preprocess(image: Raster, mask: Mask, config: PreprocessConfig) -> Raster:
    """
    Produce one model input image

    Parameters
    ----------
    image : Raster
        Eye image
    mask : Mask
        Iris mask of the same size
    config : PreprocessConfig
        Input scheme

    Returns
    -------
    raster : Raster
        final_size x final_size image
    """
    return finalize(preprocess_intermediate(image, mask, config), config)
