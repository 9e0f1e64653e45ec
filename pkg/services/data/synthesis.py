"""
Self-supervised occlusion synthesis for one split.

For every target instance an occluder is drawn uniformly from the whole instance pool,
its modal mask is pasted over the target crop, and the augmentation recipe turns the
composite into one or more persisted samples. Each target draws from its own generator
seeded by (split seed, target annotation id), so results do not depend on worker count.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from PIL import Image

from components.errors import DataError, MaskError, PlacementRejected
from components.masks.augmentation import augment_chain, recipe_chains
from components.masks.mask_algebra import CompositeSample, compose_with_retries
from models.completion_config import DataConfig
from models.sample_model import DatasetManifest, InstanceRecord, SampleMeta, SynthesisReport, Transform
from services.data.annotation_loader import filter_records, load_image
from services.data.mask_codec import instance_mask
from services.data.sample_store import sample_name, write_index, write_sample

logger = logging.getLogger(__name__)

OCCLUDER_DRAWS = 5
# point reflection keeps every pixel, so it stands in for a chain that evicts the visible region
FALLBACK_CHAIN = [Transform(kind="rot90", k=2)]


def _bounding_box(mask: np.ndarray) -> Tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def crop_square(array: np.ndarray, top: int, left: int, side: int) -> np.ndarray:
    """Crop [top, top + side) x [left, left + side) from the last two axes, zero padded outside the frame."""
    h, w = array.shape[-2:]
    out = np.zeros(array.shape[:-2] + (side, side), dtype=array.dtype)
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + side, h), min(left + side, w)
    if y0 < y1 and x0 < x1:
        out[..., y0 - top:y1 - top, x0 - left:x1 - left] = array[..., y0:y1, x0:x1]
    return out


def _resize_image(pixels: np.ndarray, size: int) -> np.ndarray:
    """(3, h, w) uint8 -> (3, size, size) uint8, bilinear."""
    image = Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)))
    return np.asarray(image.resize((size, size), Image.BILINEAR), dtype=np.uint8).transpose(2, 0, 1)


def _resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    image = Image.fromarray(mask.astype(np.uint8) * 255)
    return np.asarray(image.resize((width, height), Image.NEAREST)) > 127


def target_window(mask: np.ndarray, context: float) -> Tuple[int, int, int]:
    """Square (top, left, side) centred on the mask's box, side = context x longest box side."""
    y0, x0, y1, x1 = _bounding_box(mask)
    side = max(2, int(math.ceil(context * max(y1 - y0, x1 - x0))))
    top = int(round((y0 + y1) / 2.0 - side / 2.0))
    left = int(round((x0 + x1) / 2.0 - side / 2.0))
    return top, left, side


def occluder_footprint(mask: np.ndarray, scale: float) -> np.ndarray:
    """Tight crop of an occluder's modal mask rescaled into the target crop's pixel scale."""
    y0, x0, y1, x1 = _bounding_box(mask)
    tight = mask[y0:y1, x0:x1]
    height = max(1, int(round(tight.shape[0] * scale)))
    width = max(1, int(round(tight.shape[1] * scale)))
    return _resize_mask(tight, height, width)


class _InstanceCache:
    """Decoded masks and images, shared read-only across synthesis workers."""

    def __init__(self, images_dir: Path):
        self.images_dir = images_dir
        self._masks: Dict[int, np.ndarray] = {}
        self._images: Dict[str, np.ndarray] = {}

    def mask(self, record: InstanceRecord) -> np.ndarray:
        if record.annotation_id not in self._masks:
            self._masks[record.annotation_id] = instance_mask(record)
        return self._masks[record.annotation_id]

    def image(self, record: InstanceRecord) -> np.ndarray:
        if record.file_name not in self._images:
            pixels = load_image(self.images_dir / record.file_name)
            if pixels.shape[1:] != (record.height, record.width):
                raise DataError(f"{record.file_name} is {pixels.shape[1:]}, annotation says "
                                f"{(record.height, record.width)}")
            self._images[record.file_name] = pixels
        return self._images[record.file_name]


def _synthesize_target(target: InstanceRecord, pool: List[InstanceRecord], cache: _InstanceCache,
                       settings: DataConfig, augment: str, seed: int) -> Tuple[str, List[CompositeSample], int]:
    """Returns (outcome, samples, fallbacks) with outcome 'ok', 'no_occluder' or 'empty_target'."""
    rng = np.random.default_rng([seed, target.annotation_id])
    full_mask = cache.mask(target)
    top, left, side = target_window(full_mask, settings.context)
    size = settings.crop_size
    mask = _resize_mask(crop_square(full_mask, top, left, side), size, size)
    if not mask.any():
        logger.warning("target %d vanishes at crop size %d; skipped", target.annotation_id, size)
        return "empty_target", [], 0
    pixels = _resize_image(crop_square(cache.image(target), top, left, side), size)
    image = pixels.astype(np.float64) / 255.0

    candidates = [r for r in pool if r.annotation_id != target.annotation_id]
    composite: Optional[CompositeSample] = None
    for _ in range(OCCLUDER_DRAWS if candidates else 0):
        occluder = candidates[int(rng.integers(len(candidates)))]
        footprint = occluder_footprint(cache.mask(occluder), size / side)
        meta = SampleMeta(target_id=target.annotation_id, occluder_id=occluder.annotation_id,
                          dx=0, dy=0, ratio=0.0, seed=seed)
        try:
            composite = compose_with_retries(image, mask, footprint, rng,
                                             bounds=(settings.min_ratio, settings.max_ratio),
                                             max_tries=settings.max_tries, meta=meta)
            break
        except PlacementRejected as exc:
            logger.debug("occluder %d rejected for target %d: %s", occluder.annotation_id, target.annotation_id, exc)
        except MaskError as exc:
            logger.debug("occluder %d unusable for target %d: %s", occluder.annotation_id, target.annotation_id, exc)
    if composite is None:
        logger.warning("target %d has no feasible occluder; skipped", target.annotation_id)
        return "no_occluder", [], 0

    samples, fallbacks = [], 0
    for chain in recipe_chains(augment, composite.extents, rng):
        try:
            samples.append(augment_chain(composite, chain))
        except MaskError as exc:
            logger.debug("target %d: %s; using point reflection", target.annotation_id, exc)
            samples.append(augment_chain(composite, FALLBACK_CHAIN))
            fallbacks += 1
    return "ok", samples, fallbacks


def synthesize_split(manifest: DatasetManifest, settings: DataConfig, images_dir: Union[str, Path],
                     out_dir: Union[str, Path], workers: int = 1) -> SynthesisReport:
    """
    Composite, augment and persist every target of `manifest` into `out_dir`.

    Targets are the manifest instances matching its category filter; occluders come from
    all manifest instances. Output is identical for any `workers` count.

    Raises:
        DataError: the manifest has no instance or no instance matches the filter.
    """
    if not manifest.instances:
        raise DataError(f"split {manifest.split!r} has no instances")
    targets = filter_records(manifest.instances, manifest.category_filter)
    if not targets:
        raise DataError(f"no instance of split {manifest.split!r} matches {manifest.category_filter}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = _InstanceCache(Path(images_dir))
    # masks decode up front; images load lazily per worker
    for record in manifest.instances:
        cache.mask(record)

    def job(target: InstanceRecord):
        return _synthesize_target(target, manifest.instances, cache, settings, manifest.augment, manifest.seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, targets))
    else:
        results = [job(t) for t in targets]

    report = SynthesisReport(split=manifest.split, targets=len(targets), out_dir=str(out_dir))
    index: List[Tuple[str, SampleMeta]] = []
    for outcome, samples, fallbacks in results:
        if outcome == "no_occluder":
            report.skipped_no_occluder += 1
        elif outcome == "empty_target":
            report.skipped_empty_target += 1
        report.augment_fallbacks += fallbacks
        for sample in samples:
            name = sample_name(manifest.split, len(index))
            meta = sample.meta.model_copy(update={"index": len(index)})
            write_sample(out_dir, name, sample)
            index.append((name, meta))
    write_index(out_dir, index)
    report.written = len(index)
    logger.info("split %s: %d samples from %d targets (%d without occluder, %d empty) in %s",
                manifest.split, report.written, report.targets, report.skipped_no_occluder,
                report.skipped_empty_target, out_dir)
    return report


def build_manifest(records: List[InstanceRecord], split: str, settings: DataConfig, seed: int) -> DatasetManifest:
    ordered = sorted(records, key=lambda r: r.annotation_id)
    return DatasetManifest(split=split, instances=ordered, category_filter=list(settings.category_filter),
                           augment=settings.augment, seed=seed)
