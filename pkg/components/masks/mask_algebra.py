"""
Modal, amodal, occlusion and weighted masks, and the occluder-on-occludee compositor.

Binary masks are boolean (h, w) arrays. Weighted masks are float64 (h, w) arrays over
{0, 0.5, 1}: 0 on the occluded part of the target, 1 on its visible part, 0.5 on
everything else. Images are float64 (c, h, w) arrays in [0, 1].
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from components.errors import MaskError, PlacementRejected
from models.sample_model import SampleMeta

logger = logging.getLogger(__name__)

HOLE, CONTEXT, VISIBLE = 0.0, 0.5, 1.0
DEFAULT_RATIO_BOUNDS = (0.05, 0.70)
DEFAULT_MAX_TRIES = 50


@dataclass(frozen=True)
class CompositeSample:
    gt_image: np.ndarray  # (c, h, w) target crop, unoccluded
    erased_image: np.ndarray  # gt with the occluded region zeroed
    occluded: np.ndarray  # target pixels covered by the occluder
    visible: np.ndarray  # target pixels left uncovered
    amodal: np.ndarray
    weighted: np.ndarray
    meta: Optional[SampleMeta] = None

    @property
    def extents(self) -> Tuple[int, int]:
        return self.occluded.shape

    def check_invariants(self) -> None:
        """Raise MaskError unless every CompositeSample invariant holds exactly."""
        h, w = self.extents
        for name in ("visible", "amodal", "weighted"):
            if getattr(self, name).shape != (h, w):
                raise MaskError(f"{name} mask has extents {getattr(self, name).shape}, expected {(h, w)}")
        if self.gt_image.shape[1:] != (h, w) or self.erased_image.shape != self.gt_image.shape:
            raise MaskError(f"image extents {self.gt_image.shape} / {self.erased_image.shape} do not match masks {(h, w)}")
        if np.any(self.occluded & self.visible):
            raise MaskError("occluded and visible masks overlap")
        if not np.array_equal(self.amodal, self.occluded | self.visible):
            raise MaskError("amodal mask is not the union of occluded and visible masks")
        if not np.array_equal(self.weighted, build_weighted_mask(self.occluded, self.visible)):
            raise MaskError("weighted mask does not match occluded / visible masks")
        keep = ~self.occluded
        if not np.array_equal(self.erased_image[:, keep], self.gt_image[:, keep]):
            raise MaskError("erased image differs from ground truth outside the occluded region")
        if np.any(self.erased_image[:, self.occluded] != 0.0):
            raise MaskError("erased image is not zero inside the occluded region")


def as_binary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise MaskError(f"binary mask must be 2-D, got shape {mask.shape}")
    if mask.dtype != bool:
        if not np.all((mask == 0) | (mask == 1)):
            raise MaskError("binary mask holds values other than 0 and 1")
        mask = mask.astype(bool)
    return mask


def validate_weighted(weighted: np.ndarray) -> np.ndarray:
    """Single (h, w) masks and stacked batches alike; only the three levels are accepted."""
    weighted = np.asarray(weighted, dtype=np.float64)
    if weighted.ndim < 2:
        raise MaskError(f"weighted mask must be at least 2-D, got shape {weighted.shape}")
    if not np.all((weighted == HOLE) | (weighted == CONTEXT) | (weighted == VISIBLE)):
        raise MaskError("weighted mask holds values outside {0, 0.5, 1}")
    return weighted


def _check_pair(occ: np.ndarray, vis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    occ, vis = as_binary(occ), as_binary(vis)
    if occ.shape != vis.shape:
        raise MaskError(f"mask extents differ: {occ.shape} vs {vis.shape}")
    if np.any(occ & vis):
        raise MaskError(f"occluded and visible masks overlap on {int(np.sum(occ & vis))} pixels")
    return occ, vis


def build_weighted_mask(occ: np.ndarray, vis: np.ndarray) -> np.ndarray:
    occ, vis = _check_pair(occ, vis)
    weighted = np.full(occ.shape, CONTEXT)
    weighted[occ] = HOLE
    weighted[vis] = VISIBLE
    return weighted


def amodal_union(occ: np.ndarray, vis: np.ndarray) -> np.ndarray:
    occ, vis = _check_pair(occ, vis)
    return occ | vis


def hole_mask(weighted: np.ndarray) -> np.ndarray:
    return np.asarray(weighted) == HOLE


def binary_validity(weighted: np.ndarray) -> np.ndarray:
    """Conventional validity channel: 0 in the hole, 1 elsewhere."""
    return (np.asarray(weighted) != HOLE).astype(np.float64)


def shift_mask(mask: np.ndarray, dx: int, dy: int, extents: Tuple[int, int]) -> np.ndarray:
    """Place `mask` with its top-left corner at (dy, dx) inside an all-False frame; pixels outside clip."""
    h, w = extents
    out = np.zeros((h, w), dtype=bool)
    mh, mw = mask.shape
    top, left = max(dy, 0), max(dx, 0)
    bottom, right = min(dy + mh, h), min(dx + mw, w)
    if top < bottom and left < right:
        out[top:bottom, left:right] = mask[top - dy:bottom - dy, left - dx:right - dx]
    return out


def compose_occlusion(target_image: np.ndarray, target_mask: np.ndarray, occluder_mask: np.ndarray,
                      placement: Tuple[int, int],
                      bounds: Tuple[float, float] = DEFAULT_RATIO_BOUNDS,
                      meta: Optional[SampleMeta] = None) -> CompositeSample:
    """
    Paste the occluder's modal mask over the target at offset `placement` = (dx, dy).

    Args:
        target_image: (c, h, w) ground-truth crop of the target in [0, 1].
        target_mask: (h, w) modal mask of the target.
        occluder_mask: modal mask of the occluder in its own frame; its top-left corner
            lands at (dy, dx) of the target frame.
        placement: (dx, dy) offset.
        bounds: (min_ratio, max_ratio) on |occluded| / |target|.

    Returns:
        CompositeSample with the occluded region erased.

    Raises:
        MaskError: either modal mask is empty or extents disagree.
        PlacementRejected: occlusion ratio outside `bounds`.
    """
    target_mask, occluder_mask = as_binary(target_mask), as_binary(occluder_mask)
    if not target_mask.any() or not occluder_mask.any():
        raise MaskError("compose_occlusion needs nonempty target and occluder masks")
    if target_image.ndim != 3 or target_image.shape[1:] != target_mask.shape:
        raise MaskError(f"target image {target_image.shape} does not match its mask {target_mask.shape}")

    dx, dy = placement
    shifted = shift_mask(occluder_mask, dx, dy, target_mask.shape)
    occ = target_mask & shifted
    vis = target_mask & ~shifted
    ratio = float(occ.sum()) / float(target_mask.sum())
    low, high = bounds
    if not low <= ratio <= high:
        raise PlacementRejected(f"occlusion ratio {ratio:.3f} outside [{low}, {high}]", ratio=ratio)

    erased = np.where(occ[None], 0.0, target_image)
    if meta is not None:
        meta = meta.model_copy(update={"dx": dx, "dy": dy, "ratio": ratio})
    return CompositeSample(
        gt_image=np.asarray(target_image, dtype=np.float64),
        erased_image=erased,
        occluded=occ,
        visible=vis,
        amodal=occ | vis,
        weighted=build_weighted_mask(occ, vis),
        meta=meta,
    )


def _bbox(mask: np.ndarray) -> Tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def sample_placement(target_mask: np.ndarray, occluder_mask: np.ndarray,
                     rng: np.random.Generator) -> Tuple[int, int]:
    """Uniform offset (dx, dy) among those whose shifted occluder bbox meets the target bbox."""
    ty0, ty1, tx0, tx1 = _bbox(as_binary(target_mask))
    oy0, oy1, ox0, ox1 = _bbox(as_binary(occluder_mask))
    dy = int(rng.integers(ty0 - oy1, ty1 - oy0 + 1))
    dx = int(rng.integers(tx0 - ox1, tx1 - ox0 + 1))
    return dx, dy


def compose_with_retries(target_image: np.ndarray, target_mask: np.ndarray, occluder_mask: np.ndarray,
                         rng: np.random.Generator,
                         bounds: Tuple[float, float] = DEFAULT_RATIO_BOUNDS,
                         max_tries: int = DEFAULT_MAX_TRIES,
                         meta: Optional[SampleMeta] = None) -> CompositeSample:
    """Resample placements until one lands within `bounds`; re-raises the last rejection."""
    target_mask, occluder_mask = as_binary(target_mask), as_binary(occluder_mask)
    if not target_mask.any() or not occluder_mask.any():
        raise MaskError("compose_occlusion needs nonempty target and occluder masks")
    last: Optional[PlacementRejected] = None
    for attempt in range(max_tries):
        placement = sample_placement(target_mask, occluder_mask, rng)
        try:
            return compose_occlusion(target_image, target_mask, occluder_mask, placement, bounds, meta)
        except PlacementRejected as exc:
            logger.debug("placement %s rejected on try %d: ratio %.3f", placement, attempt, exc.ratio)
            last = exc
    raise PlacementRejected(f"no placement within {bounds} after {max_tries} tries", ratio=last.ratio)
