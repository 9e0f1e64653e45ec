import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from components.errors import ConfigError, DataError, MaskError
from components.masks.mask_algebra import CompositeSample, build_weighted_mask, hole_mask
from components.metrics.quality_metrics import evaluate_sample, summarize, to_unit_range
from components.network.generator import GatedGenerator
from components.tensor.tensor import Tensor, no_grad
from models.report_model import MetricReport
from services.reporting.panels import masked_view
from services.training.trainer import make_batch

logger = logging.getLogger(__name__)

Completer = Callable[[Sequence[CompositeSample]], List[np.ndarray]]
REGIONS = ("full", "hole")


def model_completer(generator: GatedGenerator, batch_size: int = 4) -> Completer:
    """Composited generator output in [0, 1], computed without a tape."""

    def complete(samples: Sequence[CompositeSample]) -> List[np.ndarray]:
        outputs: List[np.ndarray] = []
        with no_grad():
            for start in range(0, len(samples), batch_size):
                batch = make_batch(samples[start:start + batch_size])
                composited = generator(batch.erased, batch.weighted).composited
                outputs.extend(to_unit_range(composited.data))
        return outputs

    return complete


def gt_completer(samples: Sequence[CompositeSample]) -> List[np.ndarray]:
    return [s.gt_image for s in samples]


def masked_completer(samples: Sequence[CompositeSample]) -> List[np.ndarray]:
    return [masked_view(s) for s in samples]


BASELINES: Dict[str, Completer] = {"gt": gt_completer, "masked": masked_completer}


def evaluate(samples: Sequence[CompositeSample], outputs: Sequence[np.ndarray], region: str = "full",
             completer: str = "model", names: Optional[Sequence[str]] = None) -> MetricReport:
    """Per-sample metrics of `outputs` against each sample's ground truth, plus their means."""
    if region not in REGIONS:
        raise ConfigError(f"region must be one of {REGIONS}, got {region!r}")
    if not samples:
        raise DataError("nothing to evaluate: the split is empty")
    if len(outputs) != len(samples):
        raise DataError(f"{len(outputs)} outputs for {len(samples)} samples")
    records = []
    for index, (sample, output) in enumerate(zip(samples, outputs)):
        name = names[index] if names is not None else f"sample_{index:05d}"
        mask = hole_mask(sample.weighted) if region == "hole" else None
        records.append(evaluate_sample(name, sample.gt_image, output, mask))
    report = summarize(records, region=region, completer=completer)
    logger.info("%s on %d samples (%s): l1=%.5f l2=%.5f psnr=%.3f ssim=%.5f", completer, len(records), region,
                report.l1_error, report.l2_error, report.psnr_db, report.ssim)
    return report


def complete_image(generator: GatedGenerator, image: np.ndarray, occluded: np.ndarray,
                   visible: np.ndarray) -> np.ndarray:
    """
    Complete one (c, h, w) image in [0, 1] whose occluded region is given by `occluded`
    and whose visible object region by `visible`. Returns the composite in [0, 1].
    """
    if image.ndim != 3 or image.shape[1:] != occluded.shape:
        raise MaskError(f"image {image.shape} does not match mask {occluded.shape}")
    weighted = build_weighted_mask(occluded, visible)
    erased = np.where(occluded[None], 0.0, image)
    with no_grad():
        output = generator(Tensor(erased[None] * 2.0 - 1.0), weighted[None])
    return to_unit_range(output.composited.data[0])
