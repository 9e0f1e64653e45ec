"""Side-by-side comparison grids: ground truth | weighted mask | masked input | output."""
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image

from components.errors import ShapeError
from components.masks.mask_algebra import CompositeSample, hole_mask

logger = logging.getLogger(__name__)

GAP = 2
HOLE_GRAY = 0.5


def _rgb(image: np.ndarray) -> np.ndarray:
    """(c, h, w) in [0, 1] -> (h, w, 3) uint8."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    return np.rint(image.transpose(1, 2, 0) * 255.0).astype(np.uint8)


def masked_view(sample: CompositeSample) -> np.ndarray:
    """The erased input with the hole painted gray, as shown to a reader."""
    return np.where(hole_mask(sample.weighted)[None], HOLE_GRAY, sample.erased_image)


def panel_row(sample: CompositeSample, output: np.ndarray) -> np.ndarray:
    if output.shape != sample.gt_image.shape:
        raise ShapeError(f"output {output.shape} does not match sample {sample.gt_image.shape}")
    tiles = [_rgb(sample.gt_image), _rgb(sample.weighted[None]), _rgb(masked_view(sample)), _rgb(output)]
    h, w = sample.extents
    row = np.full((h, 4 * w + 3 * GAP, 3), 255, dtype=np.uint8)
    for index, tile in enumerate(tiles):
        left = index * (w + GAP)
        row[:, left:left + w] = tile
    return row


def write_panel(path: Union[str, Path], samples: Sequence[CompositeSample], outputs: Sequence[np.ndarray],
                limit: Optional[int] = None) -> Path:
    """One row per sample; `outputs` are (c, h, w) completions in [0, 1]."""
    pairs = list(zip(samples, outputs))[:limit]
    if not pairs:
        raise ShapeError("panel needs at least one sample")
    rows = [panel_row(s, o) for s, o in pairs]
    width = rows[0].shape[1]
    grid = np.full((sum(r.shape[0] for r in rows) + GAP * (len(rows) - 1), width, 3), 255, dtype=np.uint8)
    top = 0
    for row in rows:
        if row.shape[1] != width:
            raise ShapeError("panel rows differ in width; samples must share extents")
        grid[top:top + row.shape[0]] = row
        top += row.shape[0] + GAP
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(path)
    logger.info("panel with %d rows written to %s", len(rows), path)
    return path
