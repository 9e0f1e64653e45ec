"""
On-disk layout of a synthesized split.

Each sample `<name>` is three PNG files:
    <name>_gt.png      ground-truth RGB crop
    <name>_erased.png  the same crop with the occluded region zeroed
    <name>_masks.png   RGBA: occluded, visible, amodal, weighted (0 / 128 / 255)
plus one row in `index.tsv`.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image

from components.errors import DataError, MaskError
from components.masks.mask_algebra import CONTEXT, HOLE, VISIBLE, CompositeSample
from models.sample_model import SampleMeta

logger = logging.getLogger(__name__)

INDEX_FILE = "index.tsv"
INDEX_COLUMNS = ["name", "index", "target_id", "occluder_id", "dx", "dy", "ratio", "seed", "transforms"]
WEIGHTED_LEVELS = {0: HOLE, 128: CONTEXT, 255: VISIBLE}


def sample_name(split: str, index: int) -> str:
    return f"{split}_{index:05d}"


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def _save_rgb(path: Path, image: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(_to_uint8(image).transpose(1, 2, 0))).save(path)


def _weighted_to_uint8(weighted: np.ndarray) -> np.ndarray:
    out = np.full(weighted.shape, 128, dtype=np.uint8)
    out[weighted == HOLE] = 0
    out[weighted == VISIBLE] = 255
    return out


def write_sample(out_dir: Union[str, Path], name: str, sample: CompositeSample) -> None:
    out_dir = Path(out_dir)
    _save_rgb(out_dir / f"{name}_gt.png", sample.gt_image)
    _save_rgb(out_dir / f"{name}_erased.png", sample.erased_image)
    masks = np.stack([
        sample.occluded.astype(np.uint8) * 255,
        sample.visible.astype(np.uint8) * 255,
        sample.amodal.astype(np.uint8) * 255,
        _weighted_to_uint8(sample.weighted),
    ], axis=-1)
    Image.fromarray(masks).save(out_dir / f"{name}_masks.png")


def _read_png(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            if image.mode != mode:
                raise DataError(f"{path} has mode {image.mode}, expected {mode}")
            return np.asarray(image, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise DataError(f"sample file {path} is missing") from exc


def read_sample(split_dir: Union[str, Path], name: str, meta: Optional[SampleMeta] = None) -> CompositeSample:
    """Load one sample and re-check every mask invariant; MaskError on violation."""
    split_dir = Path(split_dir)
    gt = _read_png(split_dir / f"{name}_gt.png", "RGB").transpose(2, 0, 1) / 255.0
    erased = _read_png(split_dir / f"{name}_erased.png", "RGB").transpose(2, 0, 1) / 255.0
    masks = _read_png(split_dir / f"{name}_masks.png", "RGBA")
    levels = masks[..., 3]
    unknown = set(np.unique(levels).tolist()) - set(WEIGHTED_LEVELS)
    if unknown:
        raise MaskError(f"{name}: weighted mask holds levels {sorted(unknown)}")
    weighted = np.full(levels.shape, CONTEXT)
    weighted[levels == 0] = HOLE
    weighted[levels == 255] = VISIBLE
    sample = CompositeSample(
        gt_image=gt,
        erased_image=erased,
        occluded=masks[..., 0] > 127,
        visible=masks[..., 1] > 127,
        amodal=masks[..., 2] > 127,
        weighted=weighted,
        meta=meta,
    )
    sample.check_invariants()
    return sample


def write_index(out_dir: Union[str, Path], metas: Sequence[Tuple[str, SampleMeta]]) -> Path:
    rows = []
    for name, meta in metas:
        row = meta.model_dump()
        row["name"] = name
        row["transforms"] = ";".join(meta.transforms)
        rows.append(row)
    df = pd.DataFrame(rows, columns=INDEX_COLUMNS)
    path = Path(out_dir) / INDEX_FILE
    df.to_csv(path, sep="\t", index=False, float_format="%.6f")
    return path


def read_index(split_dir: Union[str, Path]) -> List[Tuple[str, SampleMeta]]:
    path = Path(split_dir) / INDEX_FILE
    if not path.is_file():
        raise DataError(f"{split_dir} has no {INDEX_FILE}; run synth first")
    df = pd.read_csv(path, sep="\t", keep_default_na=False, dtype={"transforms": str})
    missing = [c for c in INDEX_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path} lacks columns {missing}")
    entries = []
    for _, row in df.iterrows():
        transforms = [t for t in str(row["transforms"]).split(";") if t]
        meta = SampleMeta(index=int(row["index"]), target_id=int(row["target_id"]),
                          occluder_id=int(row["occluder_id"]), dx=int(row["dx"]), dy=int(row["dy"]),
                          ratio=float(row["ratio"]), seed=int(row["seed"]), transforms=transforms)
        entries.append((str(row["name"]), meta))
    return entries


def load_split(split_dir: Union[str, Path], limit: Optional[int] = None) -> List[CompositeSample]:
    entries = read_index(split_dir)
    if limit is not None:
        entries = entries[:limit]
    samples = [read_sample(split_dir, name, meta) for name, meta in entries]
    logger.info("loaded %d samples from %s", len(samples), split_dir)
    return samples
