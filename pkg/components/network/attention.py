"""
Contextual attention: rebuild features inside the hole from valid background patches.

Background patches (k x k, stride 1, zero padded) are matched against every
foreground position by cosine similarity, the scores go through a softmax over the
valid patches, and the output is the score-weighted overlap-add of the raw patches
divided by k*k.
"""
import logging
from typing import Tuple, Union

import numpy as np

from components.errors import MaskError, ShapeError
from components.tensor import ops
from components.tensor.tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_SCALE = 10.0
DEFAULT_PATCH = 3


def downsample_validity(weighted: np.ndarray, factor: int) -> np.ndarray:
    """
    (n, h, w) weighted mask -> (n, h/factor, w/factor) validity.

    A block is valid only when none of its pixels lies in the hole.
    """
    n, h, w = weighted.shape
    if h % factor or w % factor:
        raise ShapeError(f"mask extents {h}x{w} are not divisible by {factor}")
    valid = (weighted > 0.0).reshape(n, h // factor, factor, w // factor, factor)
    return valid.all(axis=(2, 4))


def patch_validity(validity: np.ndarray) -> np.ndarray:
    """(n, h, w) validity -> (n, h*w) flags, one per patch centred on each position."""
    validity = np.asarray(validity)
    return (validity > 0).reshape(validity.shape[0], -1)


def contextual_attention(fg: Tensor, bg: Tensor, validity: np.ndarray, scale: float = DEFAULT_SCALE,
                         patch: int = DEFAULT_PATCH,
                         return_weights: bool = False) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """
    Args:
        fg: (n, c, h, w) query features.
        bg: (n, c, h, w) features patches are borrowed from.
        validity: (n, h, w) map; a patch is usable where its centre is > 0.
        scale: softmax temperature multiplier on cosine scores.
        patch: odd patch extent.
        return_weights: also return the (n, patches, queries) attention weights.
    """
    if fg.shape != bg.shape:
        raise ShapeError(f"attention needs equal fg/bg extents, got {fg.shape} and {bg.shape}")
    n, c, h, w = fg.shape
    validity = np.asarray(validity)
    if validity.shape != (n, h, w):
        raise ShapeError(f"validity extents {validity.shape} do not match features {(n, h, w)}")
    valid = patch_validity(validity)
    empty = [i for i in range(n) if not valid[i].any()]
    if empty:
        raise MaskError(f"no valid background patch for samples {empty}")

    bg_cols = ops.unfold(bg, patch)  # (n, c*k*k, L)
    fg_cols = ops.unfold(fg, patch)  # (n, c*k*k, P)
    scores = ops.bmm(ops.l2_normalize(bg_cols, axis=1), ops.l2_normalize(fg_cols, axis=1), transpose_a=True)
    weights = ops.masked_softmax(scores, valid, scale=scale)
    cols = ops.bmm(bg_cols, weights)
    out = ops.scale(ops.fold(cols, (n, c, h, w), patch), 1.0 / (patch * patch))
    if return_weights:
        return out, weights
    return out
