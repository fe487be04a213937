"""
Synthetic iris images, masks and fixture datasets

Real iris databases are license-restricted, so tests and demos run on
rendered eyes: a dark pupil, a textured annular iris and a bright sclera,
with an upper-eyelid cap removed from the mask.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from src.config import save_manifest
from src.raster import Mask, Raster, materialize, save_image, save_mask

logger = logging.getLogger(__name__)

IMAGE_SIZE = 224
PUPIL_RADIUS = 30.0
IRIS_RADIUS = 90.0
PUPIL_LEVEL = 20
SCLERA_LEVEL = 200
EYELID_LEVEL = 150
EYELID_CUT = 0.85


def _polar_grid(size, center):
    """Radius and counter-clockwise angle of every pixel centre"""
    width, height = (size, size) if np.isscalar(size) else size
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx = xs - center[0]
    dy = ys - center[1]
    return np.hypot(dx, dy), np.arctan2(-dy, dx)


def annulus_mask(size, center, r_in: float, r_out: float) -> Mask:
    """Pixels whose centres satisfy r_in <= distance <= r_out"""
    radius, _ = _polar_grid(size, center)
    return Mask((radius >= r_in) & (radius <= r_out))


def disk_mask(size, center, r: float) -> Mask:
    radius, _ = _polar_grid(size, center)
    return Mask(radius <= r)


def ring_image(size, center, period: float = 24.0, level: float = 128.0, amplitude: float = 90.0) -> Raster:
    """Intensity depends on radius only"""
    radius, _ = _polar_grid(size, center)
    return Raster(materialize(level + amplitude * np.cos(2 * np.pi * radius / period)))


def angular_image(size, center, level: float = 128.0) -> Raster:
    """Intensity depends on angle only, with a single dominant peak"""
    _, theta = _polar_grid(size, center)
    return Raster(materialize(level + 70.0 * np.cos(theta) + 30.0 * np.cos(2 * theta + 0.7)))


@dataclass(frozen=True)
class ClassStyle:
    """Per-class iris appearance"""

    brightness: float
    frequency: int
    phase: float
    contrast: float = 45.0


def class_styles(n_classes: int, seed: int = 0) -> Dict[str, ClassStyle]:
    if n_classes > len(string.ascii_uppercase):
        raise ValueError(f"at most {len(string.ascii_uppercase)} synthetic classes are supported")
    rng = np.random.default_rng(seed)
    levels = np.linspace(70.0, 170.0, n_classes) if n_classes > 1 else np.array([120.0])
    frequencies = 3 + 4 * np.arange(n_classes)
    return {
        string.ascii_uppercase[k]: ClassStyle(float(levels[k]), int(frequencies[k]), float(rng.uniform(0, 2 * np.pi)))
        for k in range(n_classes)
    }


def render_iris(style: ClassStyle, rng: np.random.Generator, size: int = IMAGE_SIZE,
                center: Optional[Tuple[float, float]] = None, r_in: float = PUPIL_RADIUS,
                r_out: float = IRIS_RADIUS, noise: float = 3.0, occlude: bool = True) -> Tuple[Raster, Mask]:
    """
    One eye image and its iris mask

    The centre defaults to the middle of the image; callers add jitter.
    """
    if center is None:
        center = ((size - 1) / 2.0, (size - 1) / 2.0)
    radius, theta = _polar_grid(size, center)
    depth = np.clip((radius - r_in) / (r_out - r_in), 0.0, 1.0)

    texture = (np.cos(style.frequency * theta + style.phase) * (0.6 + 0.4 * np.cos(4 * np.pi * depth))
               + 0.5 * np.cos(2 * style.frequency * theta - 3.0 * depth))
    iris = style.brightness + style.contrast * texture
    pixels = np.where(radius < r_in, PUPIL_LEVEL, np.where(radius <= r_out, iris, SCLERA_LEVEL)).astype(np.float64)

    bits = (radius >= r_in) & (radius <= r_out)
    if occlude:
        ys = np.arange(size, dtype=np.float64)[:, None]
        lid = np.broadcast_to(ys < center[1] - EYELID_CUT * r_out, bits.shape)
        pixels[lid] = EYELID_LEVEL
        bits = bits & ~lid

    pixels += rng.normal(0.0, noise, size=pixels.shape)
    return Raster(materialize(pixels)), Mask(bits)


def write_synthetic_dataset(out_dir, classes: int = 3, per_class: int = 4, train_per_class: int = 0,
                            seed: int = 0, size: int = IMAGE_SIZE, jitter: int = 2,
                            labels: Optional[Dict[str, str]] = None) -> Path:
    """
    Render a fixture dataset and its manifest

    Test images are named ``A1``, ``A2``, ... and training images ``At1``,
    ``At2``, ... per class. ``labels`` overrides the class label written for
    given ids (the rendered appearance stays that of the true class).

    Returns
    -------
    manifest_path : Path
        ``<out_dir>/manifest.csv``
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    styles = class_styles(classes, seed)
    labels = labels or {}

    rows = []
    for cls, style in styles.items():
        names = [(f"{cls}{k + 1}", "test") for k in range(per_class)]
        names += [(f"{cls}t{k + 1}", "train") for k in range(train_per_class)]
        for image_id, split in names:
            shift = rng.integers(-jitter, jitter + 1, size=2) if jitter else np.zeros(2)
            center = ((size - 1) / 2.0 + shift[0], (size - 1) / 2.0 + shift[1])
            image, mask = render_iris(style, rng, size=size, center=center)
            image_path = image_dir / f"{image_id}.png"
            mask_path = image_dir / f"{image_id}_mask.png"
            save_image(image, image_path)
            save_mask(mask, mask_path)
            rows.append({
                "id": image_id,
                "image_path": str(image_path),
                "mask_path": str(mask_path),
                "class_label": labels.get(image_id, cls),
                "split": split,
                "angle_deg": 0.0,
            })

    manifest_path = out_dir / "manifest.csv"
    save_manifest(pd.DataFrame(rows), manifest_path)
    logger.info("Wrote synthetic dataset: %d images, %d classes -> %s", len(rows), classes, out_dir)
    return manifest_path
