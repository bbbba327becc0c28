import numpy as np
import pytest

from xrdseg.errors import ConfigError, ShapeError
from xrdseg.masking import (ConfusionCounts, MaskImage, confusion, fp_per_image, group_medians, recall,
                            specificity, threshold_mask)
from xrdseg.synth import DetectorGeometry, Ring, SceneSpec, render, two_theta_map


def test_worked_example():
    c = ConfusionCounts(tp=3, fp=2, tn=4, fn=1)
    assert recall(c) == 0.75
    assert specificity(c) == pytest.approx(2 / 3)
    assert fp_per_image(c) == 2


def test_degenerate_denominators():
    assert recall(ConfusionCounts(0, 5, 10, 0)) == 1.0
    assert specificity(ConfusionCounts(5, 0, 0, 3)) == 1.0


def test_confusion_counts_from_masks():
    truth = np.array([[1, 1, 0], [0, 0, 1]])
    pred = np.array([[1, 0, 1], [0, 0, 1]])
    c = confusion(pred, truth)
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 2, 1)
    assert c.total == truth.size


def test_identical_masks_are_perfect():
    m = np.random.default_rng(0).random((10, 10)) > 0.5
    c = confusion(MaskImage(m), MaskImage(m))
    assert recall(c) == specificity(c) == 1.0 and c.fp == 0


def test_all_zero_prediction_has_zero_recall():
    truth = np.zeros((4, 4), bool)
    truth[1, 1] = True
    assert recall(confusion(np.zeros((4, 4), bool), truth)) == 0.0


def test_label_swap_symmetry():
    rng = np.random.default_rng(1)
    p, t = rng.random((8, 8)) > 0.5, rng.random((8, 8)) > 0.7
    a, b = confusion(p, t), confusion(~p, ~t)
    assert (a.tp, a.fp, a.tn, a.fn) == (b.tn, b.fn, b.tp, b.fp)


def test_confusion_shape_mismatch():
    with pytest.raises(ShapeError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))


def test_counts_add():
    assert ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(1, 1, 1, 1) == ConfusionCounts(2, 3, 4, 5)


def test_group_medians():
    groups = np.array([0, 0, 0, 1, 1, 1, 1])
    values = np.array([3.0, 1.0, 2.0, 10.0, 40.0, 20.0, 30.0])
    np.testing.assert_array_equal(group_medians(groups, values, 3)[:2], [2.0, 25.0])
    assert np.isnan(group_medians(groups, values, 3)[2])


def _flat_geometry(n=33):
    return two_theta_map(DetectorGeometry(size=(n, n)))


def test_constant_image_gives_empty_mask():
    assert threshold_mask(np.full((33, 33), 7.0), _flat_geometry()).count() == 0


def test_hot_pixel_on_noisy_field():
    rng = np.random.default_rng(0)
    img = 100 + rng.normal(0, 1, (33, 33))
    img[5, 20] = 100 * 100
    m = threshold_mask(img, _flat_geometry(), k=3)
    assert m.grid[5, 20]
    # only a handful of 3-sigma noise pixels besides the hot one
    assert m.count() < 0.01 * img.size + 1


def test_scale_invariance():
    rng = np.random.default_rng(2)
    img = rng.gamma(2.0, 5.0, (40, 40))
    tth = _flat_geometry(40)
    np.testing.assert_array_equal(threshold_mask(img, tth).grid, threshold_mask(37.5 * img, tth).grid)


def test_flags_preferred_orientation_without_spots():
    geo = DetectorGeometry(size=(256, 256))
    ring = Ring(float(geo.two_theta_of_radius(60)), 10.0, 2.0, po_strength=2.0, po_phase=0.3)
    image, truth = render(SceneSpec(geometry=geo, rings=[ring], background=1.0))
    assert not truth.any()
    m = threshold_mask(image, two_theta_map(geo), k=3)
    assert m.count() > 0
    # flagged pixels sit near the orientation maxima, not the minima
    phi = geo.azimuth_map()[m.grid]
    assert np.mean(np.cos(phi - 0.3) ** 2) > 0.5


def test_threshold_mask_validation():
    with pytest.raises(ConfigError):
        threshold_mask(np.ones((4, 4)), np.ones((4, 4)), k=0)
    with pytest.raises(ConfigError):
        threshold_mask(np.ones((4, 4)), np.ones((4, 4)), n_bins=0)
    with pytest.raises(ShapeError):
        threshold_mask(np.ones((4, 4)), np.ones((4, 5)))


def test_mask_image_requires_2d():
    with pytest.raises(ShapeError):
        MaskImage(np.zeros((2, 2, 2)))
