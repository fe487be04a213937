"""
Tests for delineation, segmentation, rubber-sheet normalization and crops
"""

import math

import numpy as np
import pytest

from src.augment import rotate
from src.errors import ConfigError, GeometryError
from src.preprocess import (DELINEATED_SCHEMES, SCHEMES, Circle, CropMode, IrisGeometry, Normalization,
                            PreprocessConfig, apply_segmentation, crop_bbox, crop_delineated,
                            delineate, fit_circle, preprocess, preprocess_intermediate, rubber_sheet)
from src.raster import Mask, Raster
from src.synthetic import angular_image, annulus_mask, disk_mask, ring_image


def _geometry(cx=112.0, cy=112.0, r_in=30.0, r_out=90.0, bbox=(22, 22, 181, 181)):
    return IrisGeometry(Circle(cx, cy, r_in), Circle(cx, cy, r_out), bbox)


# ----------------------------------------------------------------------------
# Circle fitting
# ----------------------------------------------------------------------------

def test_fit_circle_exact_points():
    theta = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts = np.column_stack([50 + 20 * np.cos(theta), 50 + 20 * np.sin(theta)])
    circle = fit_circle(pts)
    assert circle.cx == pytest.approx(50, abs=1e-6)
    assert circle.cy == pytest.approx(50, abs=1e-6)
    assert circle.r == pytest.approx(20, abs=1e-6)


def test_fit_circle_three_points():
    circle = fit_circle([(0, 1), (1, 0), (0, -1)])
    assert (circle.cx, circle.cy, circle.r) == pytest.approx((0, 0, 1), abs=1e-9)


def test_fit_circle_noisy_samples(rng):
    theta = rng.uniform(0, 2 * np.pi, 100)
    pts = np.column_stack([112 + 90 * np.cos(theta), 112 + 90 * np.sin(theta)])
    pts += rng.normal(0, 0.5, pts.shape)
    circle = fit_circle(pts)
    assert abs(circle.cx - 112) < 0.5
    assert abs(circle.cy - 112) < 0.5
    assert abs(circle.r - 90) < 0.5


def test_fit_circle_errors():
    with pytest.raises(GeometryError, match="at least 3"):
        fit_circle([(0, 0), (1, 1)])
    with pytest.raises(GeometryError, match="collinear"):
        fit_circle([(0, 0), (1, 1), (2, 2), (3, 3)])


def test_circle_radius_must_be_positive():
    with pytest.raises(GeometryError):
        Circle(0, 0, 0)


# ----------------------------------------------------------------------------
# Delineation
# ----------------------------------------------------------------------------

def test_delineate_annulus():
    geom = delineate(annulus_mask(224, (112, 112), 30, 90))
    for circle, r in ((geom.inner, 30), (geom.outer, 90)):
        assert abs(circle.cx - 112) <= 1
        assert abs(circle.cy - 112) <= 1
        assert abs(circle.r - r) <= 1


def test_delineate_noisy_annulus_mean_error():
    errors = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cx, cy = 112 + rng.uniform(-4, 4, size=2)
        r_in = 30 + rng.uniform(-3, 3)
        r_out = 90 + rng.uniform(-3, 3)
        geom = delineate(annulus_mask(224, (cx, cy), r_in, r_out))
        errors += [abs(geom.inner.cx - cx), abs(geom.inner.cy - cy), abs(geom.inner.r - r_in),
                   abs(geom.outer.cx - cx), abs(geom.outer.cy - cy), abs(geom.outer.r - r_out)]
    assert np.mean(errors) < 0.5


def test_delineate_disk_uses_pupil_fallback():
    geom = delineate(disk_mask(224, (100, 100), 80))
    assert geom.outer.cx == pytest.approx(100, abs=1)
    assert geom.outer.cy == pytest.approx(100, abs=1)
    assert geom.outer.r == pytest.approx(80, abs=1)
    assert geom.inner.cx == pytest.approx(100, abs=1e-9)
    assert geom.inner.cy == pytest.approx(100, abs=1e-9)
    assert geom.inner.r == pytest.approx(geom.outer.r / 4)


def test_delineate_empty_mask():
    with pytest.raises(GeometryError, match="empty mask"):
        delineate(Mask(np.zeros((10, 10), dtype=bool)))


def test_delineate_single_pixel():
    bits = np.zeros((10, 12), dtype=bool)
    bits[4, 6] = True
    geom = delineate(Mask(bits))
    assert (geom.outer.cx, geom.outer.cy) == (pytest.approx(6), pytest.approx(4))
    assert geom.outer.r == pytest.approx(0.5)
    assert geom.inner.r == pytest.approx(0.125)
    assert geom.bbox == (6, 4, 1, 1)


def test_delineate_one_pixel_line():
    bits = np.zeros((11, 11), dtype=bool)
    bits[5, 2:9] = True
    geom = delineate(Mask(bits))
    assert geom.outer.cx == pytest.approx(5, abs=1e-6)
    assert geom.outer.cy == pytest.approx(5, abs=1e-6)
    assert geom.inner.r < geom.outer.r


def test_delineate_bbox_is_tight():
    bits = np.zeros((50, 60), dtype=bool)
    bits[10:30, 5:45] = True
    assert delineate(Mask(bits)).bbox == (5, 10, 40, 20)


def test_delineate_keeps_inner_smaller():
    geom = delineate(annulus_mask(224, (112, 112), 80, 84))
    assert geom.inner.r < geom.outer.r


# ----------------------------------------------------------------------------
# Segmentation
# ----------------------------------------------------------------------------

def test_segmentation_identity_and_black():
    image = Raster(np.arange(48, dtype=np.uint8).reshape(4, 4, 3))
    assert apply_segmentation(image, Mask(np.ones((4, 4), bool))) == image
    assert (apply_segmentation(image, Mask(np.zeros((4, 4), bool))).pixels == 0).all()


def test_segmentation_checkerboard():
    image = Raster.constant(6, 6, 200)
    checker = (np.indices((6, 6)).sum(axis=0) % 2).astype(bool)
    out = apply_segmentation(image, Mask(checker)).pixels[:, :, 0]
    assert (out[checker] == 200).all()
    assert (out[~checker] == 0).all()


def test_segmentation_is_idempotent(rng):
    image = Raster(rng.integers(0, 256, (20, 20, 3), dtype=np.uint8))
    mask = Mask(rng.random((20, 20)) < 0.6)
    once = apply_segmentation(image, mask)
    assert apply_segmentation(once, mask) == once
    assert (once.pixels[~mask.bits] == 0).all()


def test_segmentation_dimension_mismatch():
    with pytest.raises(GeometryError):
        apply_segmentation(Raster.constant(4, 4, 1), Mask(np.ones((5, 4), bool)))


# ----------------------------------------------------------------------------
# Rubber sheet
# ----------------------------------------------------------------------------

def test_rubber_sheet_size_and_constant():
    out = rubber_sheet(Raster.constant(224, 224, 77), _geometry(), 512, 64)
    assert (out.width, out.height) == (512, 64)
    assert (out.pixels == 77).all()


def test_rubber_sheet_rows_constant_on_rings():
    center = (112.0, 112.0)
    out = rubber_sheet(ring_image(225, center), _geometry(), 512, 64).pixels[:, :, 0].astype(int)
    spread = out.max(axis=1) - out.min(axis=1)
    assert spread.max() <= 4  # +-2 levels around the row value


def test_rubber_sheet_rotation_shifts_columns():
    center = (112.0, 112.0)
    image = angular_image(225, center)
    geom = _geometry()
    width = 512
    base = rubber_sheet(image, geom, width, 64).pixels[:, :, 0].astype(float)
    turned = rubber_sheet(rotate(image, 45), geom, width, 64).pixels[:, :, 0].astype(float)

    rows = slice(8, 40)
    scores = [np.sum(np.roll(base[rows], s, axis=1) * turned[rows]) for s in range(width)]
    shift = int(np.argmax(scores))
    expected = width // 8
    assert min(abs(shift - expected), width - abs(shift - expected)) <= 1


def test_rubber_sheet_column_zero_is_positive_x():
    image = np.zeros((225, 225), dtype=np.uint8)
    image[100:125, 150:215] = 255  # bright patch right of centre
    out = rubber_sheet(Raster(image), _geometry(), 64, 16).pixels[:, :, 0]
    assert out[8, 0] == 255
    assert out[8, 32] == 0


def test_rubber_sheet_rejects_tiny_output():
    with pytest.raises(GeometryError):
        rubber_sheet(Raster.constant(10, 10, 0), _geometry(5, 5, 1, 4, (1, 1, 8, 8)), 1, 10)


def test_geometry_invariants():
    with pytest.raises(GeometryError):
        IrisGeometry(Circle(10, 10, 5), Circle(10, 10, 5), (0, 0, 1, 1))
    with pytest.raises(GeometryError):
        IrisGeometry(Circle(40, 40, 2), Circle(10, 10, 5), (0, 0, 1, 1))


# ----------------------------------------------------------------------------
# Crops
# ----------------------------------------------------------------------------

def test_crop_delineated_square_with_black_corners():
    out = crop_delineated(Raster.constant(224, 224, 150), _geometry())
    assert (out.width, out.height) == (180, 180)
    px = out.pixels[:, :, 0]
    for corner in (px[0, 0], px[0, -1], px[-1, 0], px[-1, -1]):
        assert corner == 0
    assert px[90, 90 + 60] == 150  # inside the iris ring
    assert px[90, 90] == 0  # inside the pupil


def test_crop_delineated_tiny_pupil_keeps_disc():
    geom = IrisGeometry(Circle(112, 112, 0.0001), Circle(112, 112, 90), (22, 22, 181, 181))
    px = crop_delineated(Raster.constant(224, 224, 150), geom).pixels[:, :, 0]
    ys, xs = np.mgrid[0:180, 0:180]
    disc = (xs + 22 - 112) ** 2 + (ys + 22 - 112) ** 2 <= 90 ** 2
    centre = (xs + 22 == 112) & (ys + 22 == 112)
    assert (px[disc & ~centre] == 150).all()
    assert (px[~disc] == 0).all()


def test_crop_delineated_off_image_is_zero_padded():
    geom = IrisGeometry(Circle(10, 10, 5), Circle(10, 10, 30), (0, 0, 40, 40))
    out = crop_delineated(Raster.constant(100, 100, 200), geom)
    assert (out.width, out.height) == (60, 60)
    # window starts at (-20, -20): the first 20 rows/cols lie outside the image
    assert (out.pixels[:20, :, 0] == 0).all()
    assert (out.pixels[:, :20, 0] == 0).all()
    assert out.pixels[30, 50, 0] == 200


def test_crop_bbox_squares_about_centre(rng):
    image = Raster(rng.integers(1, 256, (200, 200), dtype=np.uint8))
    geom = IrisGeometry(Circle(60, 50, 5), Circle(60, 50, 40), (10, 20, 100, 60))
    out = crop_bbox(image, geom)
    assert (out.width, out.height) == (100, 100)
    # square is x in [10, 110), y in [0, 100): centre (60, 50)
    assert np.array_equal(out.pixels, image.pixels[0:100, 10:110])


def test_crop_bbox_whole_image_and_single_pixel(rng):
    image = Raster(rng.integers(0, 256, (30, 30), dtype=np.uint8))
    whole = IrisGeometry(Circle(15, 15, 2), Circle(15, 15, 10), (0, 0, 30, 30))
    assert crop_bbox(image, whole) == image
    single = IrisGeometry(Circle(15, 15, 2), Circle(15, 15, 10), (4, 6, 1, 1))
    out = crop_bbox(image, single)
    assert out.shape == (1, 1, 1)
    assert out.pixels[0, 0, 0] == image.pixels[6, 4, 0]


def test_crop_bbox_pads_outside_image():
    image = Raster.constant(50, 20, 9)
    geom = IrisGeometry(Circle(25, 10, 2), Circle(25, 10, 8), (0, 0, 50, 20))
    out = crop_bbox(image, geom)
    assert out.shape == (50, 50, 1)
    assert (out.pixels[:15] == 0).all()
    assert (out.pixels[15:35] == 9).all()
    assert (out.pixels[35:] == 0).all()


# ----------------------------------------------------------------------------
# Configuration and composition
# ----------------------------------------------------------------------------

def test_scheme_registry():
    assert set(DELINEATED_SCHEMES) == {"norm8x1-seg", "norm8x1-noseg", "norm4x2-seg", "norm4x2-noseg",
                                  "nonorm-seg", "nonorm-noseg"}
    assert set(SCHEMES) == set(DELINEATED_SCHEMES) | {"bbox-seg", "bbox-noseg"}
    assert PreprocessConfig.from_scheme("norm4x2-seg").intermediate_size == (256, 128)
    assert PreprocessConfig.from_scheme("norm8x1-noseg").intermediate_size == (512, 64)


def test_config_validation():
    with pytest.raises(ConfigError):
        PreprocessConfig(normalization=Normalization.NORM_8X1, crop=CropMode.BOUNDING_BOX)
    with pytest.raises(ConfigError):
        PreprocessConfig(normalization="16x1")
    with pytest.raises(ConfigError, match="Unknown scheme"):
        PreprocessConfig.from_scheme("polar")
    assert PreprocessConfig(normalization="4x2", segmented=True).scheme == "norm4x2-seg"


@pytest.mark.parametrize("scheme", sorted(SCHEMES))
def test_preprocess_output_is_final_size(scheme):
    image = ring_image(224, (112, 112))
    mask = annulus_mask(224, (112, 112), 30, 90)
    out = preprocess(image, mask, PreprocessConfig.from_scheme(scheme))
    assert out.shape == (224, 224, 1)


def test_preprocess_norm4x2_intermediate():
    image = Raster.constant(224, 224, 120)
    mask = annulus_mask(224, (112, 112), 30, 90)
    strip = preprocess_intermediate(image, mask, PreprocessConfig.from_scheme("norm4x2-seg"))
    assert (strip.width, strip.height) == (256, 128)
    final = preprocess(image, mask, PreprocessConfig.from_scheme("norm4x2-noseg"))
    assert (final.pixels == 120).all()


def test_preprocess_nonorm_constant_modulo_black():
    image = Raster.constant(224, 224, 120)
    mask = annulus_mask(224, (112, 112), 30, 90)
    out = preprocess(image, mask, PreprocessConfig.from_scheme("nonorm-noseg")).pixels
    assert out[112, 112 + 70, 0] == 120
    assert out[0, 0, 0] == 0
    assert out[112, 112, 0] == 0


def test_segmentation_order_hook():
    image = Raster.constant(224, 224, 120)
    bits = annulus_mask(224, (112, 112), 30, 90).bits.copy()
    bits[:60] = False
    mask = Mask(bits)
    before = PreprocessConfig.from_scheme("norm8x1-seg")
    after = PreprocessConfig.from_scheme("norm8x1-seg", segment_before_normalization=False)
    strip_before = preprocess_intermediate(image, mask, before).pixels
    strip_after = preprocess_intermediate(image, mask, after).pixels
    # both orders black out the occluded arc around theta = pi / 2
    top = 128
    assert strip_before[-1, top, 0] == 0
    assert strip_after[-1, top, 0] == 0
    assert strip_before[32, 0, 0] == 120
    assert strip_after[32, 0, 0] == 120


def test_preprocess_dimension_mismatch():
    with pytest.raises(GeometryError):
        preprocess(Raster.constant(10, 10, 0), Mask(np.ones((9, 10), bool)),
                   PreprocessConfig.from_scheme("norm8x1-seg"))


def test_angles_run_counter_clockwise():
    circle = Circle(0, 0, 1)
    x, y = circle.points(math.pi / 2)
    assert x == pytest.approx(0, abs=1e-12)
    assert y == pytest.approx(-1)
