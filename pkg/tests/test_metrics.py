"""PSNR / RMSE, ROI statistics, display windowing and the CSV report."""
import csv
import io
import math

import numpy as np
import pytest

from smgan.metrics import (
    REPORT_FIELDS,
    ROI,
    MetricsRecord,
    apply_window,
    emit_report,
    evaluate_pair,
    load_rois,
    pct_diff,
    psnr,
    psnr_from_rmse,
    render_grid,
    render_slice,
    report_csv,
    rmse,
    roi_stats,
    ssim_metric,
    window_bounds,
)


def test_rmse_and_psnr_by_hand():
    z, x = np.array([0.0, 0.5, 1.0, 0.25]), np.array([0.1, 0.5, 0.8, 0.25])
    err = math.sqrt((0.01 + 0.04) / 4)
    assert rmse(z, x) == pytest.approx(err, abs=1e-15)
    assert psnr(z, x) == pytest.approx(-20 * math.log10(err), abs=1e-12)
    assert psnr(z, x, peak=2.0) - psnr(z, x) == pytest.approx(20 * math.log10(2), abs=1e-12)


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).uniform(size=(3, 4, 4))
    assert psnr(a, a) == math.inf and rmse(a, a) == 0.0
    with pytest.raises(ValueError):
        psnr(a, a[:2])


def test_psnr_from_rmse_decades():
    assert psnr_from_rmse(0.1) == pytest.approx(20.0)
    assert psnr_from_rmse(0.01) == pytest.approx(40.0)


def test_ssim_metric_identity_and_range(rng):
    a = rng.uniform(size=(2, 12, 12))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim_metric(a, a) == pytest.approx(1.0, abs=1e-12)
    assert -1.0 <= ssim_metric(a, b) < 1.0


def test_roi_stats_population_and_sample_sd():
    vol = np.zeros((2, 4, 4))
    vol[0, :2, :2] = [[1.0, 2.0], [3.0, 4.0]]
    roi = ROI((0, 0, 0), (1, 2, 2), "corner")
    st = roi_stats(vol, roi)
    assert st["mean"] == 2.5 and st["sd"] == pytest.approx(math.sqrt(1.25))
    assert roi_stats(vol, roi, ddof=1)["sd"] == pytest.approx(math.sqrt(5 / 3))
    ref = {"mean": 2.0, "sd": 1.0}
    with_ref = roi_stats(vol, roi, ref)
    assert with_ref["pct_diff_mean"] == pytest.approx(25.0)
    assert with_ref["pct_diff_sd"] == pytest.approx((math.sqrt(1.25) - 1) * 100)


def test_roi_bounds_checked():
    vol = np.zeros((2, 4, 4))
    with pytest.raises(ValueError):
        roi_stats(vol, ROI((0, 3, 0), (1, 2, 2)))
    with pytest.raises(ValueError):
        roi_stats(vol, ROI((0, 0, 0), (0, 2, 2)))


def test_pct_diff_sign():
    assert pct_diff(110.0, 100.0) == pytest.approx(10.0)
    assert pct_diff(90.0, 100.0) == pytest.approx(-10.0)


def test_load_rois(tmp_path):
    (tmp_path / "r.json").write_text('[{"origin": [0, 1, 2], "extent": [1, 2, 3], "label": "liver"}, {"origin": [0,0,0], "extent": [1,1,1]}]')
    rois = load_rois(tmp_path / "r.json")
    assert rois[0] == ROI((0, 1, 2), (1, 2, 3), "liver")
    assert rois[1].label == "roi1"


def test_display_window_mapping():
    hu = np.array([-1000.0, -160.0, 40.0, 240.0, 3000.0, -159.0])
    out = apply_window(hu)
    assert out.dtype == np.uint8
    # 40 HU sits at 200/400 of the window: 127.5 rounds half up to 128
    assert out.tolist() == [0, 0, 128, 255, 255, 1]
    assert window_bounds((40, 400), center_width=True) == (-160.0, 240.0)
    np.testing.assert_array_equal(apply_window(hu, (40, 400), center_width=True), out)
    with pytest.raises(ValueError):
        window_bounds((10, 10))


def test_render_slice_and_grid():
    vol = np.stack([np.full((3, 4), -160.0), np.full((3, 4), 240.0)])
    assert render_slice(vol, 1).max() == 255 and render_slice(vol, 0).max() == 0
    with pytest.raises(IndexError):
        render_slice(vol, 2)
    grid = render_grid([render_slice(vol, 0), render_slice(vol, 1), render_slice(vol, 1)], columns=2, gap=1)
    assert grid.shape == (7, 9)
    assert grid[0, 5] == 255 and grid[4, 0] == 255 and grid[4, 5] == 0


def _records():
    return [
        MetricsRecord("p1", "ldct", 25.0, 0.8, 0.056),
        MetricsRecord("p1", "ndct", math.inf, 1.0, 0.0),
    ]


def test_report_schema_and_line_count():
    text = report_csv(_records())
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == REPORT_FIELDS
    assert len(text.splitlines()) == 3
    assert rows[2][2] == "inf" and rows[1][2] == "25.000000" and rows[1][5] == ""


def test_report_byte_identical_and_png(tmp_path):
    img = np.zeros((4, 4), np.uint8)
    a = emit_report(_records(), tmp_path / "a.csv", tmp_path / "a.png", [img, img + 255])
    b = emit_report(_records(), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes() and a == b
    from PIL import Image

    assert Image.open(tmp_path / "a.png").size == (10, 4)
    with pytest.raises(ValueError):
        report_csv([])


def test_record_invariants():
    with pytest.raises(ValueError):
        MetricsRecord("x", "m", 1.0, 0.5, -0.1)
    with pytest.raises(ValueError):
        MetricsRecord("x", "m", 1.0, 1.5, 0.1)


def test_evaluate_pair_rows_per_roi(rng):
    x = rng.uniform(size=(2, 12, 12))
    z = x + 0.01
    rois = [ROI((0, 0, 0), (1, 4, 4), "a"), ROI((1, 2, 2), (1, 5, 5), "b")]
    recs = evaluate_pair("v", "m", z, x, z * 4095 - 1024, x * 4095 - 1024, rois)
    assert [r.roi_label for r in recs] == ["a", "b"]
    assert recs[0].rmse == pytest.approx(0.01)
    assert recs[0].roi_sd_hu == pytest.approx(np.std(x[0, :4, :4] * 4095), rel=1e-12)
    assert len(evaluate_pair("v", "m", z, x)) == 1
