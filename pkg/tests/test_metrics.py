import json
import math

import numpy as np
import pytest

from components.errors import ShapeError
from components.metrics.quality_metrics import (
    evaluate_sample,
    l1_l2_error,
    psnr,
    psnr_from_mse,
    ssim,
    summarize,
    to_unit_range,
)
from oracles import naive_ssim


class TestErrors:
    def test_identical(self, rng):
        image = rng.random((3, 8, 8))
        assert l1_l2_error(image, image) == (0.0, 0.0)

    def test_constant_offset(self):
        gt = np.full((3, 4, 4), 0.25)
        l1, l2 = l1_l2_error(gt, gt + 0.1)
        assert l1 == pytest.approx(0.1, abs=1e-12)
        assert l2 == pytest.approx(0.01, abs=1e-12)

    def test_oracle(self, rng):
        a, b = rng.random((3, 9, 7)), rng.random((3, 9, 7))
        l1, l2 = l1_l2_error(a, b)
        assert abs(l1 - np.abs(a - b).sum() / a.size) < 1e-12
        assert abs(l2 - ((a - b) ** 2).sum() / a.size) < 1e-12

    def test_region(self):
        gt = np.zeros((1, 2, 2))
        out = np.array([[[0.5, 0.0], [0.0, 0.0]]])
        region = np.array([[True, True], [False, False]])
        assert l1_l2_error(gt, out, region) == (0.25, 0.125)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_l2_error(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestPsnr:
    def test_known_mse(self):
        assert psnr_from_mse(0.01) == 20.0

    def test_identical_is_infinite(self, rng):
        image = rng.random((3, 4, 4))
        assert psnr(image, image) == math.inf

    def test_matches_mse(self, rng):
        a, b = rng.random((3, 6, 6)), rng.random((3, 6, 6))
        _, mse = l1_l2_error(a, b)
        assert abs(psnr(a, b) - 10 * np.log10(1.0 / mse)) < 1e-9
        assert psnr(a, b) == psnr(b, a)


class TestSsim:
    def test_identical(self, rng):
        image = rng.random((3, 16, 16))
        assert ssim(image, image) == pytest.approx(1.0, abs=1e-9)

    def test_constant_images(self):
        c1 = 0.01 ** 2
        value = ssim(np.zeros((1, 12, 12)), np.ones((1, 12, 12)))
        assert value == pytest.approx(c1 / (1 + c1), rel=1e-9)

    def test_oracle_and_symmetry(self, rng):
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-8
        assert ssim(a, b) == ssim(b, a)

    def test_identity_is_maximal(self, rng):
        a = rng.random((1, 16, 16))
        for _ in range(10):
            assert ssim(a, np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)) < ssim(a, a)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))

    def test_hole_region_without_window_falls_back(self, rng, caplog):
        a, b = rng.random((1, 16, 16)), rng.random((1, 16, 16))
        region = np.zeros((16, 16), dtype=bool)
        region[0, 0] = True
        assert ssim(a, b, region) == ssim(a, b)
        assert "no SSIM window" in caplog.text


class TestReports:
    def test_identity_sample(self, rng):
        image = rng.random((3, 16, 16))
        record = evaluate_sample("s0", image, image)
        assert record.l1_error == 0.0 and record.psnr_db == math.inf
        assert record.ssim == pytest.approx(1.0, abs=1e-9)
        assert json.loads(record.model_dump_json())["psnr_db"] == "inf"

    def test_aggregate_is_mean_of_rows(self, rng):
        samples = [evaluate_sample(f"s{i}", rng.random((3, 16, 16)), rng.random((3, 16, 16))) for i in range(4)]
        report = summarize(samples)
        assert report.l1_error == pytest.approx(np.mean([s.l1_error for s in samples]), abs=1e-15)
        assert report.ssim == pytest.approx(np.mean([s.ssim for s in samples]), abs=1e-15)
        assert report.aggregate_record()["count"] == 4

    def test_unit_range(self):
        assert to_unit_range(np.array([-1.0, 0.0, 1.0, 2.0])).tolist() == [0.0, 0.5, 1.0, 1.0]
