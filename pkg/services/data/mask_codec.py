"""
Instance segmentations to boolean masks and back.

Polygons are filled with the even-odd rule, sampled at pixel centres
(x + 0.5, y + 0.5); a multi-part polygon is the union of its parts. Run-length
counts are column-major and start with a run of zeros, in either the plain list
form or the compressed string form used by COCO crowd annotations.
"""
import logging
from typing import List, Sequence, Union

import numpy as np

from components.errors import DataError, MaskError
from models.sample_model import InstanceRecord, RleSegmentation

logger = logging.getLogger(__name__)


def _fill(points: Sequence[float], height: int, width: int) -> np.ndarray:
    coords = np.asarray(points, dtype=np.float64)
    if coords.size % 2 or coords.size < 6:
        raise DataError(f"polygon needs at least 3 (x, y) pairs, got {coords.size} values")
    xs, ys = coords[0::2], coords[1::2]
    px = np.arange(width, dtype=np.float64)[None, :] + 0.5
    py = np.arange(height, dtype=np.float64)[:, None] + 0.5
    inside = np.zeros((height, width), dtype=bool)
    xj, yj = np.roll(xs, 1), np.roll(ys, 1)
    for x0, y0, x1, y1 in zip(xs, ys, xj, yj):
        if y0 == y1:
            continue
        straddles = (y0 > py) != (y1 > py)
        crossing = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= straddles & (px < crossing)
    return inside


def rasterize_polygon(points: Sequence[float], height: int, width: int) -> np.ndarray:
    """One flat [x0, y0, x1, y1, ...] ring -> (height, width) bool mask; MaskError if no pixel centre is inside."""
    mask = _fill(points, height, width)
    if not mask.any():
        raise MaskError("polygon covers no pixel centre inside the frame")
    return mask


def rasterize_parts(parts: Sequence[Sequence[float]], height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for part in parts:
        mask |= _fill(part, height, width)
    if not mask.any():
        raise MaskError("polygon parts cover no pixel centre inside the frame")
    return mask


def decode_rle(counts: Sequence[int], height: int, width: int) -> np.ndarray:
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise DataError("run-length counts must be non-negative")
    if sum(counts) != height * width:
        raise DataError(f"run-length counts sum to {sum(counts)}, expected {height * width}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape(width, height).T.copy()


def encode_rle(mask: np.ndarray) -> List[int]:
    flat = np.asarray(mask, dtype=bool).T.reshape(-1)
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def encode_rle_string(counts: Sequence[int]) -> str:
    """Plain counts -> compressed string (delta coded from the third run, 5-bit groups)."""
    chars = []
    for i, count in enumerate(counts):
        x = int(count)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = x != -1 if c & 0x10 else x != 0
            if more:
                c |= 0x20
            chars.append(chr(c + 48))
    return "".join(chars)


def decode_rle_string(text: str) -> List[int]:
    counts: List[int] = []
    p = 0
    while p < len(text):
        x, k, more = 0, 0, True
        while more:
            if p >= len(text):
                raise DataError("truncated run-length string")
            c = ord(text[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and c & 0x10:
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def decode_segmentation(segmentation: Union[List[List[float]], RleSegmentation], height: int, width: int) -> np.ndarray:
    if isinstance(segmentation, RleSegmentation):
        h, w = segmentation.size
        if (h, w) != (height, width):
            raise DataError(f"run-length size {(h, w)} differs from image size {(height, width)}")
        counts = segmentation.counts
        if isinstance(counts, str):
            counts = decode_rle_string(counts)
        return decode_rle(counts, h, w)
    return rasterize_parts(segmentation, height, width)


def instance_mask(record: InstanceRecord) -> np.ndarray:
    return decode_segmentation(record.segmentation, record.height, record.width)
