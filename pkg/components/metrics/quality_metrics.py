"""
Image fidelity measures on (c, h, w) arrays in [0, 1]: mean L1 / L2 error, PSNR, SSIM.

Every measure optionally takes an (h, w) boolean `region`; when given, only those
pixels (or, for SSIM, windows centred on them) count.
"""
import logging
import math
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.signal import convolve2d

from components.errors import ShapeError
from models.report_model import MetricReport, SampleMetrics

logger = logging.getLogger(__name__)

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
METRIC_FIELDS = ("l1_error", "l2_error", "psnr_db", "ssim")


def _check_pair(gt: np.ndarray, out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gt, out = np.asarray(gt, dtype=np.float64), np.asarray(out, dtype=np.float64)
    if gt.shape != out.shape:
        raise ShapeError(f"metric inputs differ in shape: {gt.shape} vs {out.shape}")
    if gt.ndim != 3:
        raise ShapeError(f"metrics expect (c, h, w) images, got {gt.shape}")
    return gt, out


def _select(diff: np.ndarray, region: Optional[np.ndarray]) -> np.ndarray:
    if region is None:
        return diff
    return diff[:, np.asarray(region, dtype=bool)]


def to_unit_range(image: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1], clipped."""
    return np.clip((np.asarray(image, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def l1_l2_error(gt: np.ndarray, out: np.ndarray, region: Optional[np.ndarray] = None) -> Tuple[float, float]:
    gt, out = _check_pair(gt, out)
    diff = _select(gt - out, region)
    if diff.size == 0:
        return 0.0, 0.0
    return float(np.mean(np.abs(diff))), float(np.mean(diff * diff))


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr(gt: np.ndarray, out: np.ndarray, peak: float = 1.0, region: Optional[np.ndarray] = None) -> float:
    _, mse = l1_l2_error(gt, out, region)
    return psnr_from_mse(mse, peak)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(gt: np.ndarray, out: np.ndarray) -> np.ndarray:
    """(c, h - 10, w - 10) local SSIM over every full 11x11 window."""
    gt, out = _check_pair(gt, out)
    if min(gt.shape[1:]) < WINDOW_SIZE:
        raise ShapeError(f"ssim needs extents >= {WINDOW_SIZE}, got {gt.shape[1:]}")
    window = gaussian_window()
    c1, c2 = K1 ** 2, K2 ** 2

    def filt(channel):
        return convolve2d(channel, window, mode="valid")

    maps = []
    for x, y in zip(gt, out):
        mu_x, mu_y = filt(x), filt(y)
        var_x = filt(x * x) - mu_x * mu_x
        var_y = filt(y * y) - mu_y * mu_y
        cov = filt(x * y) - mu_x * mu_y
        numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        maps.append(numerator / denominator)
    return np.stack(maps)


def ssim(gt: np.ndarray, out: np.ndarray, region: Optional[np.ndarray] = None) -> float:
    maps = ssim_map(gt, out)
    if region is None:
        return float(np.mean(maps))
    r = WINDOW_SIZE // 2
    centres = np.asarray(region, dtype=bool)[r:-r, r:-r]
    if not centres.any():
        logger.warning("no SSIM window is centred inside the hole; using the full image")
        return float(np.mean(maps))
    return float(np.mean(maps[:, centres]))


def evaluate_sample(name: str, gt: np.ndarray, out: np.ndarray, region: Optional[np.ndarray] = None) -> SampleMetrics:
    l1, l2 = l1_l2_error(gt, out, region)
    record = SampleMetrics(sample=name, l1_error=l1, l2_error=l2, psnr_db=psnr_from_mse(l2), ssim=ssim(gt, out, region))
    logger.debug("metrics %s: l1=%.5f l2=%.5f psnr=%s ssim=%.5f", name, l1, l2, record.psnr_db, record.ssim)
    return record


def summarize(samples: Iterable[SampleMetrics], region: str = "full", completer: str = "model") -> MetricReport:
    """Dataset means are plain per-sample means."""
    samples = list(samples)
    if not samples:
        return MetricReport(region=region, completer=completer)
    frame = pd.DataFrame([{f: getattr(s, f) for f in METRIC_FIELDS} for s in samples])
    means = frame.mean(axis=0)
    return MetricReport(samples=samples, region=region, completer=completer,
                        **{f: float(means[f]) for f in METRIC_FIELDS})
