import math

import numpy as np
import pytest

from xrdseg.errors import ConfigError, DataError, ShapeError
from xrdseg.integration import Pattern1D, integrate, pattern_delta, read_pattern_csv, write_pattern_csv
from xrdseg.masking import MaskImage
from xrdseg.synth import FWHM_PER_SIGMA, DetectorGeometry, Ring, SceneSpec, Spot, make_scenes, render

from oracles import fwhm

GEO = DetectorGeometry()


def test_uniform_image_is_flat():
    p = integrate(np.full(GEO.size, 3.25), GEO)
    assert np.all(p.intensity[~p.empty] == 3.25)
    assert p.counts.sum() == GEO.size[0] * GEO.size[1]


def test_constant_image_flat_for_any_geometry():
    geo = DetectorGeometry(size=(50, 70), beam_center=(3.0, 60.5), distance=400.0)
    p = integrate(np.full(geo.size, 2.0), geo, n_bins=77)
    assert np.all(p.intensity[~p.empty] == 2.0)


def test_single_ring_peak_and_width():
    rho0, sigma = 150.0, 2.5
    ring = Ring(float(GEO.two_theta_of_radius(rho0)), 10.0, sigma)
    image, _ = render(SceneSpec(geometry=GEO, rings=[ring]))
    p = integrate(image, GEO)
    width = p.bin_centers[1] - p.bin_centers[0]
    peak = int(np.nanargmax(p.intensity))
    assert abs(p.bin_centers[peak] - ring.two_theta) <= width / 2
    k = GEO.pixel_pitch / GEO.distance
    analytic = FWHM_PER_SIGMA * sigma * math.degrees(k / (1 + (rho0 * k) ** 2))
    measured = fwhm(p.bin_centers, np.nan_to_num(p.intensity))
    assert abs(measured - analytic) <= 0.2 * analytic


def _spot_scene():
    rings = [Ring(float(GEO.two_theta_of_radius(r)), 10.0, 2.0) for r in (80, 150, 220)]
    spots = [Spot(0, 0.5, 100.0, 2.0), Spot(1, 2.0, 100.0, 2.5), Spot(2, -1.0, 100.0, 3.0)]
    with_spots = SceneSpec(geometry=GEO, rings=rings, spots=spots, background=1.0)
    return with_spots, SceneSpec(geometry=GEO, rings=rings, background=1.0)


def test_truth_mask_restores_spot_free_pattern():
    spotted, clean = _spot_scene()
    image, truth = render(spotted)
    reference = integrate(render(clean)[0], GEO)
    masked = integrate(image, GEO, MaskImage(truth))
    both = ~masked.empty & ~reference.empty
    rel = np.abs(masked.intensity[both] - reference.intensity[both]) / reference.intensity[both]
    assert rel.max() < 0.02

    raw = integrate(image, GEO)
    d = pattern_delta(reference, raw)
    assert d.max_abs > 1.0  # the unmasked spots leave spurious peaks
    spot_tth = [spotted.rings[s.ring].two_theta for s in spotted.spots]
    assert min(abs(d.bin_centers[d.argmax] - t) for t in spot_tth) < 0.01


@pytest.mark.parametrize("seed", range(4))
def test_truth_mask_restores_random_isotropic_scenes(seed):
    spec = make_scenes(1, "nickel", 512, seed=seed)[0]
    spec.noise = "none"
    image, truth = render(spec)
    clean = SceneSpec(**{**spec.__dict__, "spots": []})
    a = integrate(image, spec.geometry, truth, n_bins=1000)
    b = integrate(render(clean)[0], spec.geometry, n_bins=1000)
    both = ~a.empty & ~b.empty
    assert (np.abs(a.intensity - b.intensity)[both] / b.intensity[both]).max() < 0.02


def test_masking_orientation_maxima_lowers_ring():
    ring = Ring(float(GEO.two_theta_of_radius(120)), 10.0, 2.0, po_strength=3.0)
    image, _ = render(SceneSpec(geometry=GEO, rings=[ring], background=1.0))
    phi = GEO.azimuth_map()
    strong = np.cos(phi) ** 2 > 0.8
    full = integrate(image, GEO)
    cut = integrate(image, GEO, strong)
    peak = int(np.nanargmax(full.intensity))
    assert cut.intensity[peak] < full.intensity[peak]


def test_enlarging_mask_leaves_untouched_bins_alone():
    image = np.random.default_rng(0).random(GEO.size)
    small = np.zeros(GEO.size, bool)
    small[10:20, 10:20] = True
    big = small.copy()
    big[300:310, 300:320] = True
    a, b = integrate(image, GEO, small), integrate(image, GEO, big)
    tth = GEO.two_theta_of_radius(GEO.radius_map())
    width = a.bin_centers[1] - a.bin_centers[0]
    touched = np.unique(np.minimum((tth[big & ~small] / width).astype(int), len(a) - 1))
    untouched = np.setdiff1d(np.arange(len(a)), touched)
    np.testing.assert_array_equal(a.intensity[untouched], b.intensity[untouched])


def test_fully_masked_is_all_empty():
    p = integrate(np.ones(GEO.size), GEO, np.ones(GEO.size, bool), n_bins=50)
    assert p.empty.all() and np.isnan(p.intensity).all()


def test_range_and_bins_validation():
    with pytest.raises(ConfigError):
        integrate(np.ones(GEO.size), GEO, two_theta_range=(2.0, 1.0))
    with pytest.raises(ConfigError):
        integrate(np.ones(GEO.size), GEO, n_bins=0)
    with pytest.raises(ShapeError):
        integrate(np.ones((5, 5)), GEO)


def test_custom_range_excludes_outside_pixels():
    p = integrate(np.ones(GEO.size), GEO, n_bins=10, two_theta_range=(1.0, 2.0))
    tth = GEO.two_theta_of_radius(GEO.radius_map())
    assert p.counts.sum() == np.count_nonzero((tth >= 1.0) & (tth <= 2.0))
    assert p.bin_centers[0] == pytest.approx(1.05)


def test_pattern_delta_examples():
    a = Pattern1D(np.arange(4.0), np.array([1.0, 2.0, np.nan, 4.0]), np.array([1, 1, 0, 1]))
    same = pattern_delta(a, a)
    assert same.max_abs == 0 and same.l2 == 0
    b = Pattern1D(a.bin_centers, a.intensity + np.array([0, 5.0, 0, 0]), a.counts)
    d = pattern_delta(a, b)
    assert d.max_abs == 5.0 and d.argmax == 1 and np.isnan(d.delta[2])
    with pytest.raises(DataError):
        pattern_delta(a, Pattern1D(np.arange(3.0), np.ones(3), np.ones(3, int)))


def test_csv_roundtrip_is_bit_exact(tmp_path):
    image = np.random.default_rng(1).random(GEO.size) * 1e3
    mask = np.zeros(GEO.size, bool)
    mask[:100] = True
    p = integrate(image, GEO, mask, n_bins=3000)
    assert p.empty.any()
    write_pattern_csv(p, tmp_path / "p.csv")
    q = read_pattern_csv(tmp_path / "p.csv")
    assert p.bin_centers.tobytes() == q.bin_centers.tobytes()
    assert p.intensity.tobytes() == q.intensity.tobytes()
    assert p.counts.tobytes() == q.counts.tobytes()
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "two_theta_deg,intensity,count"
    assert any(line.split(",")[1] == "" for line in lines[1:])


def test_csv_rejects_wrong_header(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DataError):
        read_pattern_csv(tmp_path / "bad.csv")
