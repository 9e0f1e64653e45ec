import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from PIL import Image

from components.errors import DataError
from models.sample_model import InstanceRecord, ParseReport, RleSegmentation
from services.data.mask_codec import instance_mask

logger = logging.getLogger(__name__)

REQUIRED_SECTIONS = ("images", "annotations", "categories")


def _to_int(val):
    if val is not None and not pd.isna(val):
        try:
            return int(val)
        except Exception:
            return None
    return None


def _to_str(val):
    if val is not None and not pd.isna(val):
        return str(val)
    return ""


def _segmentation(val) -> Union[List[List[float]], RleSegmentation, None]:
    if isinstance(val, dict):
        if "counts" not in val or "size" not in val:
            return None
        return RleSegmentation(size=tuple(val["size"]), counts=val["counts"])
    if isinstance(val, list):
        parts = [list(map(float, part)) for part in val if isinstance(part, list) and len(part) >= 6]
        return parts or None
    return None


def _bbox(val) -> tuple:
    if isinstance(val, (list, tuple)) and len(val) == 4:
        return tuple(float(v) for v in val)
    return (0.0, 0.0, 0.0, 0.0)


def load_document(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"annotation file {path} does not exist") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"annotation file {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise DataError(f"annotation file {path} must hold a JSON object")
    missing = [s for s in REQUIRED_SECTIONS if not isinstance(document.get(s), list)]
    if missing:
        raise DataError(f"annotation file {path} lacks sections {missing}")
    return document


def _frames(document: dict) -> pd.DataFrame:
    images = pd.DataFrame(document["images"], columns=["id", "file_name", "height", "width"])
    images = images.rename(columns={"id": "image_id"})
    categories = pd.DataFrame(document["categories"], columns=["id", "name", "supercategory"])
    categories = categories.rename(columns={"id": "category_id", "name": "category_name"})
    annotations = pd.DataFrame(document["annotations"],
                               columns=["id", "image_id", "category_id", "segmentation", "bbox", "iscrowd", "area"])
    annotations = annotations.rename(columns={"id": "annotation_id"})
    merged = annotations.merge(images, on="image_id", how="left")
    return merged.merge(categories, on="category_id", how="left")


def matches_filter(record: InstanceRecord, category_filter: Sequence[str]) -> bool:
    """A record matches when its category or supercategory name is in the filter; an empty filter matches all."""
    if not category_filter:
        return True
    wanted = {c.strip().lower() for c in category_filter}
    return record.category_name.lower() in wanted or (record.supercategory or "").lower() in wanted


def filter_records(records: Iterable[InstanceRecord], category_filter: Sequence[str]) -> List[InstanceRecord]:
    return [r for r in records if matches_filter(r, category_filter)]


def parse_annotations(path: Union[str, Path], images_dir: Optional[Union[str, Path]] = None,
                      category_filter: Sequence[str] = ()) -> ParseReport:
    """
    Read a COCO-style instance document into InstanceRecords.

    Instances with an empty or malformed segmentation, a missing image file (checked
    only when `images_dir` is given) or a segmentation that rasterises to nothing are
    skipped with a warning and counted in the report. A malformed document raises DataError.
    """
    df = _frames(load_document(path))
    report = ParseReport(total=len(df))
    for _, row in df.iterrows():
        annotation_id = _to_int(row["annotation_id"])
        segmentation = _segmentation(row["segmentation"])
        if segmentation is None:
            logger.warning("annotation %s has an empty segmentation; skipped", annotation_id)
            report.skipped_empty_segmentation += 1
            continue
        file_name = _to_str(row["file_name"])
        height, width = _to_int(row["height"]), _to_int(row["width"])
        if not file_name or height is None or width is None:
            logger.warning("annotation %s refers to unknown image %s; skipped", annotation_id, row["image_id"])
            report.skipped_missing_image += 1
            continue
        if images_dir is not None and not (Path(images_dir) / file_name).is_file():
            logger.warning("image %s for annotation %s is missing; skipped", file_name, annotation_id)
            report.skipped_missing_image += 1
            continue
        supercategory = _to_str(row["supercategory"])
        record = InstanceRecord(
            annotation_id=annotation_id,
            image_id=_to_int(row["image_id"]),
            file_name=file_name,
            height=height,
            width=width,
            category_id=_to_int(row["category_id"]),
            category_name=_to_str(row["category_name"]),
            supercategory=supercategory or None,
            segmentation=segmentation,
            bbox=_bbox(row["bbox"]),
            extra={"iscrowd": _to_int(row["iscrowd"]) or 0},
        )
        try:
            empty = not instance_mask(record).any()
        except DataError as exc:
            logger.warning("annotation %s does not decode (%s); skipped", annotation_id, exc)
            empty = True
        if empty:
            report.skipped_empty_mask += 1
            continue
        if not matches_filter(record, category_filter):
            report.filtered_out += 1
            continue
        report.records.append(record)
    logger.info("parsed %d of %d instances from %s (%d skipped, %d filtered out)",
                len(report.records), report.total, path, report.skipped, report.filtered_out)
    return report


def load_image(path: Union[str, Path]) -> np.ndarray:
    """RGB image file -> (3, h, w) uint8 array."""
    try:
        with Image.open(path) as image:
            pixels = np.asarray(image.convert("RGB"), dtype=np.uint8)
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))
