from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from voxdiff.errors import PlacementError
from voxdiff.evalkit import (
    METRICS,
    REFERENCE_ABLATION,
    REFERENCE_TABLES,
    MaskSpec,
    MetricEntry,
    aggregate_report,
    ellipsoid_offsets,
    generate_masks,
    masked_metrics,
    psnr_from_mse,
    ssim_map,
    summarize,
)
from voxdiff.volume import MaskVolume, Volume3
from test_acceptance import ball, brute_metrics


def test_psnr_cap_and_value():
    assert psnr_from_mse(0.0) == 100.0
    assert psnr_from_mse(1e-11) == 100.0
    assert psnr_from_mse(0.01) == pytest.approx(20.0)


def test_masked_metrics_simple_case():
    gt = np.zeros((6, 6, 6))
    pred = np.zeros((6, 6, 6))
    region = np.zeros((6, 6, 6), bool)
    region[2:4, 2:4, 2:4] = True
    pred[region] = 0.1
    m = masked_metrics(Volume3(pred), Volume3(gt), MaskVolume(region))
    assert m.mae == pytest.approx(0.1) and m.mse == pytest.approx(0.01)
    assert m.psnr == pytest.approx(20.0) and m.rmse == pytest.approx(0.1)
    assert m.msle == pytest.approx(math.log(1.1) ** 2)
    ref = brute_metrics(pred, gt, region)
    assert m.ssim == pytest.approx(ref["ssim"], abs=1e-12)


def test_masked_metrics_validation():
    v = Volume3(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        masked_metrics(v, v, MaskVolume(np.zeros((4, 4, 4), bool)))
    with pytest.raises(ValueError):
        masked_metrics(Volume3(np.full((4, 4, 4), 2.0)), v, MaskVolume(np.ones((4, 4, 4), bool)))
    with pytest.raises(ValueError):
        masked_metrics(v, Volume3(np.zeros((4, 4, 5))), MaskVolume(np.ones((4, 4, 4), bool)))
    with pytest.raises(ValueError):
        ssim_map(v.data, v.data, window=4)


def test_ssim_window_size_changes_result():
    rng = np.random.default_rng(0)
    a, b = rng.random((10, 10, 10)), rng.random((10, 10, 10))
    region = MaskVolume(ball((10, 10, 10), (5, 5, 5), 3))
    m3 = masked_metrics(Volume3(a), Volume3(b), region, ssim_window=3)
    assert m3.ssim == pytest.approx(brute_metrics(a, b, region.data, 3)["ssim"], abs=1e-12)


def test_summary_statistics():
    s = summarize([1.0, 2.0, 3.0, 10.0])
    assert s["mean"] == 4.0 and s["median"] == 2.5
    assert s["std"] == pytest.approx(np.std([1, 2, 3, 10]))
    assert summarize([1.0, 2.0, 3.0, 10.0], ddof=1)["std"] == pytest.approx(np.std([1, 2, 3, 10], ddof=1))
    assert summarize([5.0], ddof=1)["std"] == 0.0
    with pytest.raises(ValueError):
        summarize([])


def test_report_layout():
    entries = [MetricEntry(f"s{i}", 0.5 + i / 10, 20 + i, 0.1, 0.01, 0.1, 0.005) for i in range(3)]
    report = aggregate_report(entries)
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert [r["subject"] for r in rows] == ["s0", "s1", "s2", "mean", "median", "std"]
    assert float(rows[3]["psnr"]) == pytest.approx(21.0)
    payload = json.loads(report.to_json("healthy"))
    assert payload["reference"]["ssim"]["mean"] == 0.754
    assert set(payload["summary"]) == set(METRICS)
    with pytest.raises(ValueError):
        aggregate_report([])


def test_reference_tables_shape():
    for table in REFERENCE_TABLES.values():
        assert set(table) == set(METRICS)
    # the complete pipeline row of the ablation equals the headline table
    for region in ("healthy", "tumor"):
        full = REFERENCE_ABLATION[region]["I+HE+PB"]
        assert all(full[m] == REFERENCE_TABLES[region][m][0] for m in METRICS)
        psnr = [REFERENCE_ABLATION[region][k]["psnr"] for k in ("I", "I+HE", "I+HE+PB")]
        assert psnr == sorted(psnr)


def test_ellipsoid_offsets():
    off = ellipsoid_offsets((1, 1, 1))
    assert len(off) == 7
    assert len(ellipsoid_offsets((2, 1, 1))) == 9


def _brain(shape=(24, 24, 24)):
    gt = np.where(ball(shape, (12, 12, 12), 10), 0.5, 0.0)
    seg = ball(shape, (8, 12, 12), 3)
    return Volume3(gt), MaskVolume(seg)


def test_generate_masks_constraints_and_determinism():
    gt, seg = _brain()
    spec = MaskSpec(semi_axes=(3, 2, 2), seed=4, tumor_dilation=1)
    tumor, healthy = generate_masks(gt, seg, spec)
    assert tumor.count() > seg.count()
    assert healthy.count() == len(ellipsoid_offsets((3, 2, 2)))
    assert not (healthy.data & tumor.data).any()
    assert np.all(gt.data[healthy.data] > 0)
    _, again = generate_masks(gt, seg, spec)
    np.testing.assert_array_equal(healthy.data, again.data)


def test_generate_masks_placement_failure():
    gt, seg = _brain()
    with pytest.raises(PlacementError):
        generate_masks(gt, seg, MaskSpec(semi_axes=(15, 15, 15), max_attempts=50))
    with pytest.raises(ValueError):
        MaskSpec(semi_axes=(1, -1, 1))
