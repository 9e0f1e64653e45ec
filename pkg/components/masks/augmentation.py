import logging
from dataclasses import replace
from typing import List

import numpy as np

from components.errors import MaskError
from components.masks.mask_algebra import CONTEXT, CompositeSample
from models.sample_model import Transform

logger = logging.getLogger(__name__)


def _resize_nearest(array: np.ndarray, size) -> np.ndarray:
    h, w = array.shape[-2:]
    out_h, out_w = size
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return array[..., rows[:, None], cols[None, :]]


def apply_transform(array: np.ndarray, transform: Transform, fill=0) -> np.ndarray:
    """
    Apply `transform` to the last two axes of `array`.

    Vacated pixels (shift) take `fill`; a weighted mask passes CONTEXT so that
    transforming it matches rebuilding it from transformed binary masks.
    """
    h, w = array.shape[-2:]
    if transform.kind == "hflip":
        return array[..., ::-1].copy()
    if transform.kind == "rot90":
        return np.rot90(array, transform.k, axes=(-2, -1)).copy()
    if transform.kind == "crop":
        if transform.box is None:
            raise MaskError("crop transform without a box")
        top, left, height, width = transform.box
        if top < 0 or left < 0 or height < 1 or width < 1 or top + height > h or left + width > w:
            raise MaskError(f"crop box {transform.box} outside {h}x{w} frame")
        return array[..., top:top + height, left:left + width].copy()
    if transform.kind == "shift":
        out = np.full(array.shape, fill, dtype=array.dtype)
        dx, dy = transform.dx, transform.dy
        src_rows = slice(max(-dy, 0), min(h - dy, h))
        dst_rows = slice(max(dy, 0), min(h + dy, h))
        src_cols = slice(max(-dx, 0), min(w - dx, w))
        dst_cols = slice(max(dx, 0), min(w + dx, w))
        if abs(dx) < w and abs(dy) < h:
            out[..., dst_rows, dst_cols] = array[..., src_rows, src_cols]
        return out
    if transform.kind == "resize":
        if transform.size is None:
            raise MaskError("resize transform without a size")
        return _resize_nearest(array, transform.size)
    raise MaskError(f"unknown transform kind {transform.kind!r}")


def augment(sample: CompositeSample, transform: Transform) -> CompositeSample:
    """Transform image and all four masks identically; raises MaskError if no visible pixel survives."""
    visible = apply_transform(sample.visible, transform, fill=False)
    if not visible.any():
        raise MaskError(f"{transform.label()} evicts the entire visible region")
    meta = sample.meta
    if meta is not None:
        meta = meta.model_copy(update={"transforms": list(meta.transforms) + [transform.label()]})
    return replace(
        sample,
        gt_image=apply_transform(sample.gt_image, transform, fill=0.0),
        erased_image=apply_transform(sample.erased_image, transform, fill=0.0),
        occluded=apply_transform(sample.occluded, transform, fill=False),
        visible=visible,
        amodal=apply_transform(sample.amodal, transform, fill=False),
        weighted=apply_transform(sample.weighted, transform, fill=CONTEXT),
        meta=meta,
    )


def _random_crop(extents, rng: np.random.Generator) -> List[Transform]:
    h, w = extents
    ch, cw = max(1, int(round(0.75 * h))), max(1, int(round(0.75 * w)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    # crop then restore the frame so every sample in a split shares extents
    return [Transform(kind="crop", box=(top, left, ch, cw)), Transform(kind="resize", size=(h, w))]


def recipe_chains(recipe: str, extents, rng: np.random.Generator) -> List[List[Transform]]:
    """
    Transform chains for one composited sample. Each chain yields one output sample.

    'none' keeps the sample as is; 'x4' keeps it and adds a flipped, a rotated and a
    cropped-and-shifted variant, so a split grows four-fold.
    """
    if recipe == "none":
        return [[]]
    if recipe == "x4":
        h, w = extents
        k = 2 if h != w else int(rng.integers(1, 4))
        shift = Transform(kind="shift", dx=int(rng.integers(-w // 8, w // 8 + 1)),
                          dy=int(rng.integers(-h // 8, h // 8 + 1)))
        return [
            [],
            [Transform(kind="hflip")],
            [Transform(kind="rot90", k=k)],
            _random_crop(extents, rng) + [shift],
        ]
    raise MaskError(f"unknown augmentation recipe {recipe!r}; expected 'none' or 'x4'")


def augment_chain(sample: CompositeSample, chain: List[Transform]) -> CompositeSample:
    for transform in chain:
        sample = augment(sample, transform)
    return sample
