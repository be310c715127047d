import math

import numpy as np
import pytest

from capascan import EncoderModel, ScanPath, standard_assemblies, tick_distance
from capascan.imaging import (
    Detection,
    SubsurfaceImage,
    assemble,
    classify,
    detect,
    image_from_csv,
    image_to_csv,
    mad_threshold,
)
from capascan.scan import ScanSession
from capascan.sensor import ScanSample


def make_session(values: np.ndarray, spacing=50.0, seed=0):
    """Session whose calibrated samples equal the given (lines, ticks) array."""
    values = np.asarray(values, dtype=float)
    n_lines, n = values.shape
    t = tick_distance(EncoderModel())
    path = ScanPath(origin_mm=(0.0, 0.0), direction=(1.0, 0.0),
                    line_length_mm=(n - 1) * t + 0.5, num_lines=n_lines,
                    line_spacing_mm=spacing)
    lines = [
        [
            ScanSample.from_flags(tick=k, along_track_mm=k * t, raw_pf=float(v),
                                  capdac_pf=0.0, calibrated_pf=float(v), flags=0)
            for k, v in enumerate(row)
        ]
        for row in values
    ]
    return ScanSession(
        path=path, assembly=standard_assemblies()["plate_default"],
        encoder=EncoderModel(), lines=lines, scene_digest="x" * 64,
        mode="kernel", voxel_mm=2.0, base_seed=seed,
    )


def test_assemble_flat_session_all_zero():
    session = make_session(np.full((3, 8), 2.5))
    img = assemble(session)
    assert np.allclose(img.values, 0.0)
    assert img.x_pitch_mm == pytest.approx(tick_distance(EncoderModel()))
    assert img.provenance


def test_assemble_single_line_returns_one_row():
    session = make_session(np.arange(6, dtype=float)[None, :])
    img = assemble(session, y_pitch_mm=5.0)
    assert img.values.shape == (1, 6)


def test_assemble_interpolates_rows():
    session = make_session(np.zeros((3, 5)), spacing=40.0)
    img = assemble(session, y_pitch_mm=10.0)
    assert img.values.shape == (9, 5)  # span 80 mm at 10 mm pitch


def test_assemble_interpolation_is_linear():
    vals = np.zeros((2, 4))
    vals[1, :] = 8.0  # second line uniformly higher by 8 pF
    session = make_session(vals, spacing=40.0)
    img = assemble(session, y_pitch_mm=20.0)
    # medians remove the constants, leaving all-zero anomalies
    assert np.allclose(img.values, 0.0)
    vals[1, 2] = 16.0  # now give line 1 an actual bump at tick 2
    session = make_session(vals, spacing=40.0)
    img = assemble(session, y_pitch_mm=20.0)
    col = img.values[:, 2]
    assert col[0] == pytest.approx(0.0)
    assert col[1] == pytest.approx(col[2] / 2)  # halfway between the lines


def test_assemble_mismatched_lengths_error():
    session = make_session(np.zeros((2, 5)))
    session.lines[1] = session.lines[1][:-1]
    with pytest.raises(ValueError):
        assemble(session)


def test_assemble_mirrored_session_mirrors_image():
    # y_pitch dividing the line span makes the row grid mirror onto itself
    rng = np.random.default_rng(8)
    vals = rng.normal(0, 1, size=(4, 7))
    img = assemble(make_session(vals, spacing=50.0), y_pitch_mm=25.0)
    img_m = assemble(make_session(vals[::-1, :], spacing=50.0), y_pitch_mm=25.0)
    assert np.allclose(img_m.values, img.values[::-1, :])


def test_detect_all_zero_image_empty():
    img = SubsurfaceImage(values=np.zeros((10, 10)), x_pitch_mm=10.0, y_pitch_mm=10.0)
    assert detect(img) == []


def test_detect_additive_offset_invariant():
    rng = np.random.default_rng(9)
    vals = rng.normal(0, 0.01, size=(4, 30))
    vals[1, 10:14] += 1.0
    d1 = detect(assemble(make_session(vals)))
    d2 = detect(assemble(make_session(vals + 5.0)))
    assert len(d1) == len(d2) == 1
    assert d1[0].centroid_mm == pytest.approx(d2[0].centroid_mm)
    assert d1[0].peak_anomaly_pf == pytest.approx(d2[0].peak_anomaly_pf)


def _oracle_yaw(values, mask, x_pitch, y_pitch):
    """Independent weighted principal-axis angle, degrees in [0, 180)."""
    rows, cols = np.nonzero(mask)
    w = values[rows, cols]
    xs = cols * x_pitch
    ys = rows * y_pitch
    cx = (w * xs).sum() / w.sum()
    cy = (w * ys).sum() / w.sum()
    cov = np.zeros((2, 2))
    cov[0, 0] = (w * (xs - cx) ** 2).sum()
    cov[1, 1] = (w * (ys - cy) ** 2).sum()
    cov[0, 1] = cov[1, 0] = (w * (xs - cx) * (ys - cy)).sum()
    evals, evecs = np.linalg.eigh(cov)
    v = evecs[:, np.argmax(evals)]
    return math.degrees(math.atan2(v[1], v[0])) % 180.0


@pytest.mark.parametrize("angle_deg", [0.0, 30.0, 90.0, 120.0])
def test_detect_yaw_matches_moment_oracle(angle_deg):
    # synthetic anisotropic Gaussian blob at a known angle
    ny, nx = 41, 41
    y, x = np.mgrid[0:ny, 0:nx]
    a = math.radians(angle_deg)
    u = (x - 20) * math.cos(a) + (y - 20) * math.sin(a)
    v = -(x - 20) * math.sin(a) + (y - 20) * math.cos(a)
    vals = np.exp(-(u**2) / (2 * 8.0**2) - (v**2) / (2 * 2.0**2))
    vals[vals < 0.05] = 0.0
    img = SubsurfaceImage(values=vals, x_pitch_mm=4.0, y_pitch_mm=4.0)
    dets = detect(img, k_mad=1.0)
    assert len(dets) == 1
    thr = mad_threshold(img, 1.0)
    oracle = _oracle_yaw(vals, vals > thr, 4.0, 4.0)
    diff = abs(dets[0].yaw_deg - oracle)
    assert min(diff, 180 - diff) < 1e-6


def test_detect_discards_single_cell_groups():
    vals = np.zeros((10, 10))
    vals[2, 2] = 5.0  # lone spike
    vals[6, 3:6] = 5.0  # 3-cell bar
    img = SubsurfaceImage(values=vals, x_pitch_mm=10.0, y_pitch_mm=10.0)
    dets = detect(img, k_mad=4.0)
    assert len(dets) == 1
    assert dets[0].area_mm2 == pytest.approx(300.0)


def test_detect_k_mad_monotone():
    rng = np.random.default_rng(10)
    vals = rng.normal(0, 0.2, size=(30, 30))
    vals[5:8, 5:12] += 2.0
    vals[20:22, 15:25] += 1.0
    img = SubsurfaceImage(values=vals, x_pitch_mm=5.0, y_pitch_mm=5.0)
    counts = [len(detect(img, k_mad=k)) for k in (2.0, 3.0, 4.0, 6.0, 10.0)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_detect_bbox_contains_centroid():
    vals = np.zeros((12, 12))
    vals[4:7, 3:9] = 1.0
    img = SubsurfaceImage(values=vals, x_pitch_mm=8.0, y_pitch_mm=8.0)
    (det,) = detect(img)
    x0, y0, x1, y1 = det.bbox_mm
    cx, cy = det.centroid_mm
    assert x0 <= cx <= x1 and y0 <= cy <= y1
    assert det.peak_anomaly_pf > 0


def test_classify_metal_and_wood():
    vals = np.zeros((20, 40))
    vals[4:7, 5:9] = 1.0     # strong blob, well above 3x threshold
    vals[14:17, 25:29] = 0.22  # weak blob, between 1x and 3x threshold
    rng = np.random.default_rng(11)
    vals += rng.normal(0, 0.04, size=vals.shape)
    img = SubsurfaceImage(values=vals, x_pitch_mm=5.0, y_pitch_mm=5.0)
    thr = mad_threshold(img)
    assert thr < 0.22 and 3 * thr < 1.0  # the construction the test relies on
    dets = classify(detect(img), img)
    assert len(dets) == 2
    assert dets[0].klass == "metal"  # strongest first
    assert dets[1].klass == "wood"
    assert dets[0].peak_anomaly_pf > dets[1].peak_anomaly_pf


def test_classify_empty_list():
    img = SubsurfaceImage(values=np.zeros((5, 5)), x_pitch_mm=1.0, y_pitch_mm=1.0)
    assert classify([], img) == []


def test_image_requires_finite_values():
    with pytest.raises(ValueError):
        SubsurfaceImage(values=np.array([[1.0, np.nan]]), x_pitch_mm=1.0, y_pitch_mm=1.0)


def test_image_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    img = SubsurfaceImage(values=rng.normal(size=(6, 9)), x_pitch_mm=11.5,
                          y_pitch_mm=10.0, origin_mm=(2.0, 3.0), provenance="abc")
    p = tmp_path / "img.csv"
    image_to_csv(img, p)
    back = image_from_csv(p)
    assert np.array_equal(back.values, img.values)
    assert back.x_pitch_mm == img.x_pitch_mm
    assert back.origin_mm == img.origin_mm
    assert back.provenance == "abc"


def test_png_metadata_roundtrip(tmp_path):
    import json

    from PIL import Image

    from capascan.imaging import image_to_png

    img = SubsurfaceImage(values=np.arange(12, dtype=float).reshape(3, 4),
                          x_pitch_mm=1.0, y_pitch_mm=1.0)
    p = tmp_path / "img.png"
    meta = image_to_png(img, p, scale=3)
    with Image.open(p) as im:
        assert im.size == (12, 9)
        stored = json.loads(im.text["capascan"])
    assert stored["vmin"] == meta["vmin"]
    assert stored["colormap"] == "viridis"
    assert stored["scale"] == 3
