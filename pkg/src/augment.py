"""
Rotation-based data augmentation

Each original image yields ``apertures`` rotated copies spread evenly over
[-range_deg, +range_deg], zero excluded. Positive angles rotate
counter-clockwise as displayed.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from src.errors import ConfigError
from src.raster import Raster, materialize, sample_bicubic

logger = logging.getLogger(__name__)

# ranges evaluated for the augmentation study (half-widths, degrees)
RANGE_PRESETS = (15.0, 30.0, 45.0, 60.0, 90.0, 120.0)
APERTURE_PRESETS = (4, 6, 8)

_INSIDE_EPS = 1e-6


class AugmentStage(Enum):
    CROP = "crop"
    FINAL = "final"


@dataclass(frozen=True)
class AugmentConfig:
    """
    Symmetric rotation range and number of rotated copies per image

    ``stage`` selects where the pipeline rotates: the pre-resize crop or
    the final preprocessed image.
    """

    range_deg: float = 60.0
    apertures: int = 6
    stage: AugmentStage = AugmentStage.CROP

    def __post_init__(self):
        if not isinstance(self.stage, AugmentStage):
            try:
                object.__setattr__(self, "stage", AugmentStage(self.stage))
            except ValueError:
                raise ConfigError(f"Invalid augmentation stage '{self.stage}' (use 'crop' or 'final')") from None
        if not (isinstance(self.range_deg, (int, float)) and math.isfinite(self.range_deg)
                and self.range_deg > 0):
            raise ConfigError(f"range_deg must be a positive number, got {self.range_deg!r}")
        if isinstance(self.apertures, bool) or not isinstance(self.apertures, int) \
                or self.apertures < 2 or self.apertures % 2:
            raise ConfigError(f"apertures must be an even integer >= 2, got {self.apertures!r}")

    def to_dict(self):
        return {"range_deg": self.range_deg, "apertures": self.apertures, "stage": self.stage.value}


class AugmentedSample(NamedTuple):
    image: Raster
    class_label: str
    angle_deg: float
    source_index: int


def augmentation_grid(ranges=RANGE_PRESETS, apertures=APERTURE_PRESETS) -> List[AugmentConfig]:
    """Every (range, apertures) combination of the augmentation study"""
    return [AugmentConfig(range_deg=float(r), apertures=a) for r, a in itertools.product(ranges, apertures)]


def augmentation_angles(config: AugmentConfig) -> List[float]:
    """
    Rotation angles for one configuration, ascending

    Examples
    --------
    >>> augmentation_angles(AugmentConfig(60, 6))
    [-60.0, -40.0, -20.0, 20.0, 40.0, 60.0]
    """
    half = config.apertures // 2
    step = config.range_deg / half
    positive = [k * step for k in range(1, half + 1)]
    return [-a for a in reversed(positive)] + positive


def rotate(image: Raster, angle: float) -> Raster:
    """
    Rotate about the image centre, keeping the image size

    Each output pixel is inverse-mapped into the source and sampled
    bicubically; pixels whose source falls outside the image are 0.
    """
    height, width = image.height, image.width
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    alpha = math.radians(angle)
    cos_a, sin_a = math.cos(alpha), math.sin(alpha)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    src_x = cx + dx * cos_a - dy * sin_a
    src_y = cy + dx * sin_a + dy * cos_a

    inside = ((src_x >= -_INSIDE_EPS) & (src_x <= width - 1 + _INSIDE_EPS)
              & (src_y >= -_INSIDE_EPS) & (src_y <= height - 1 + _INSIDE_EPS))
    values = materialize(sample_bicubic(image, src_x, src_y))
    values[~inside] = 0
    return Raster(values)


def augment_set(manifest: Sequence[Tuple[Raster, str]], config: AugmentConfig) -> List[AugmentedSample]:
    """
    Expand (image, class_label) pairs with rotated copies

    The output keeps each original (angle 0) followed by its rotations in
    ascending angle order, so ``len(output) == len(manifest) * (1 + apertures)``.
    """
    if not manifest:
        raise ConfigError("nothing to augment: manifest is empty")
    angles = augmentation_angles(config)

    expanded = []
    for index, (image, label) in enumerate(manifest):
        expanded.append(AugmentedSample(image, label, 0.0, index))
        for angle in angles:
            expanded.append(AugmentedSample(rotate(image, angle), label, angle, index))

    logger.info("Augmented %d images to %d (%d angles)", len(manifest), len(expanded), len(angles))
    return expanded


def angle_tag(angle: float) -> str:
    """Filename/id-safe angle label, e.g. ``rot+60`` or ``rot-67.5``"""
    return f"rot{angle:+g}"
