import math

import numpy as np
import pytest
from scipy import ndimage
from scipy.spatial.distance import cdist

from windowed_conv.errors import InvalidArgumentError, InvalidConfigError
from windowed_conv.rasterize import (
    ExtractionConfig,
    PositionSet,
    RasterConfig,
    extract_positions,
    extract_positions_info,
    rasterize,
    read_pgm,
    write_pgm,
)
from windowed_conv.signal_core import GridSignal

RC = RasterConfig(80.0)  # 64 x 64 pixels


def separated_points(rng, k, rc, sep):
    half = rc.window_width_A / 2 - 4 * rc.sigma_m
    pts = []
    while len(pts) < k:
        p = rng.uniform(-half, half, size=2)
        if all(np.hypot(*(p - q)) >= sep for q in pts):
            pts.append(p)
    return PositionSet(np.array(pts))


def hausdorff(a, b):
    d = cdist(a, b)
    return max(d.min(axis=0).max(), d.min(axis=1).max())


def test_pixel_count_and_centres():
    assert RC.pixels == 64
    assert RasterConfig(10.0, 3.0).pixels == 3
    c = RC.centers()
    assert c[0] == pytest.approx(-40 + 0.625) and c[-1] == pytest.approx(40 - 0.625)
    with pytest.raises(InvalidConfigError):
        RasterConfig(1.0, 2.0)
    with pytest.raises(InvalidConfigError):
        RasterConfig(10.0, sigma_units="feet")


def test_empty_set_gives_zero_image():
    img = rasterize(PositionSet(), RC)
    assert img.spatial_shape == (64, 64) and not img.values.any()


def test_point_at_pixel_centre():
    c = RC.centers()
    img = rasterize(PositionSet([[c[10], c[40]]]), RC)
    assert img.values[10, 40] == pytest.approx(1 / (2 * math.pi * 6.4**2), rel=1e-14)
    assert img.values.argmax() == 10 * 64 + 40


def test_pixels_sigma_units():
    rc = RasterConfig(80.0, 1.25, 4.0, "pixels")
    img = rasterize(PositionSet([[0.0, 0.0]]), rc)
    ref = rasterize(PositionSet([[0.0, 0.0]]), RasterConfig(80.0, 1.25, 5.0))
    np.testing.assert_array_equal(img.values, ref.values)


def test_normalisation_quadrature():
    img = rasterize(PositionSet([[1.3, -2.1]]), RC)
    assert RC.resolution_rho**2 * img.values.sum() == pytest.approx(1.0, rel=1e-3)


def test_points_outside_window_contribute_tails():
    img = rasterize(PositionSet([[45.0, 0.0]]), RC)
    assert img.values.max() > 0


def test_integer_translation_shifts_image():
    rng = np.random.default_rng(0)
    ps = PositionSet(rng.uniform(-10, 10, size=(4, 2)))
    base = rasterize(ps, RasterConfig(160.0)).values
    for a, b in [(3, -2), (-7, 5)]:
        moved = rasterize(ps.translate(1.25 * a, 1.25 * b), RasterConfig(160.0)).values
        np.testing.assert_allclose(moved[20:-20, 20:-20], np.roll(base, (a, b), axis=(0, 1))[20:-20, 20:-20],
                                   rtol=1e-9, atol=1e-18)


def test_permutation_invariance():
    pts = np.random.default_rng(1).uniform(-30, 30, size=(6, 2))
    a = rasterize(PositionSet(pts), RC).values
    b = rasterize(PositionSet(pts[::-1]), RC).values
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-20)


def test_zero_image_extracts_nothing():
    assert len(extract_positions(GridSignal(np.zeros((64, 64)), 1.25, RC.origin), RC)) == 0
    neg = GridSignal(-np.ones((64, 64)), 1.25, RC.origin)
    assert len(extract_positions(neg, RC)) == 0


def test_single_point_round_trip():
    p = np.array([[3.7, -12.2]])
    out = extract_positions(rasterize(PositionSet(p), RC), RC)
    assert len(out) == 1
    assert np.hypot(*(out.points[0] - p[0])) <= RC.resolution_rho


def test_two_separated_points():
    p = np.array([[-32.0, 0.0], [32.0, 0.0]])
    rc = RasterConfig(160.0)
    out = extract_positions(rasterize(PositionSet(p), rc), rc)
    assert len(out) == 2
    assert hausdorff(out.points, p) <= rc.resolution_rho


@pytest.mark.parametrize("seed", range(10))
def test_round_trip_many_points(seed):
    rng = np.random.default_rng(seed)
    rc = RasterConfig(200.0)
    k = int(rng.integers(1, 11))
    ps = separated_points(rng, k, rc, 4 * rc.sigma_m)
    out, info = extract_positions_info(rasterize(ps, rc), rc)
    assert len(out) == k
    assert hausdorff(out.points, ps.points) <= rc.resolution_rho
    tail = info.movements[-5:]
    assert all(u >= v for u, v in zip(tail, tail[1:]))


def test_output_count_bounded_by_local_maxima():
    rng = np.random.default_rng(4)
    vals = ndimage.gaussian_filter(rng.normal(size=(64, 64)), 2.0)
    img = GridSignal(vals, 1.25, RC.origin)
    v = np.clip(vals, 0, None)
    maxima = np.sum((v == ndimage.maximum_filter(v, size=3, mode="constant", cval=-np.inf)) & (v > 0))
    out = extract_positions(img, RC, ExtractionConfig(threshold_frac=0.01))
    assert 1 <= len(out) <= maxima


def test_extraction_input_checks():
    with pytest.raises(InvalidArgumentError):
        extract_positions(GridSignal(np.ones(8)), RC)
    with pytest.raises(InvalidConfigError):
        ExtractionConfig(threshold_frac=1.0)
    with pytest.raises(InvalidConfigError):
        ExtractionConfig(max_iters=0)


def test_position_csv_round_trip(tmp_path):
    ps = PositionSet(np.random.default_rng(2).normal(size=(5, 2)) * 1e3)
    ps.to_csv(tmp_path / "p.csv")
    back = PositionSet.from_csv(tmp_path / "p.csv")
    assert back.points.tobytes() == ps.points.tobytes()
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(InvalidArgumentError):
        PositionSet.from_csv(tmp_path / "bad.csv")
    with pytest.raises(InvalidArgumentError):
        PositionSet([[np.inf, 0.0]])


def test_pgm_round_trip(tmp_path):
    img = rasterize(PositionSet([[0.0, 5.0], [-20.0, 10.0]]), RC)
    path = tmp_path / "img.pgm"
    write_pgm(path, img, RC)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n64 64\n65535\n") and len(raw) == 15 + 2 * 64 * 64
    back, rc = read_pgm(path)
    assert rc == RC and back.origin == img.origin
    peak = img.values.max()
    assert np.max(np.abs(back.values - img.values)) <= peak / 65535
    assert back.values.max() == peak
    out_a = extract_positions(img, RC).points
    out_b = extract_positions(back, rc).points
    assert hausdorff(out_a, out_b) < 0.05
