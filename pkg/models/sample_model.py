from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field


class RleSegmentation(BaseModel):
    size: Tuple[int, int]  # (height, width)
    counts: Union[List[int], str]


class InstanceRecord(BaseModel):
    annotation_id: int
    image_id: int
    file_name: str
    height: int
    width: int
    category_id: int
    category_name: str
    supercategory: Optional[str] = None
    # polygon parts (flat x,y lists) or run-length counts
    segmentation: Union[List[List[float]], RleSegmentation]
    bbox: Tuple[float, float, float, float]  # x, y, w, h
    extra: Dict[str, object] = Field(default_factory=dict)


class ParseReport(BaseModel):
    records: List[InstanceRecord] = Field(default_factory=list)
    total: int = 0
    skipped_empty_segmentation: int = 0
    skipped_missing_image: int = 0
    skipped_empty_mask: int = 0
    filtered_out: int = 0

    @property
    def skipped(self) -> int:
        return self.skipped_empty_segmentation + self.skipped_missing_image + self.skipped_empty_mask


class Transform(BaseModel):
    kind: Literal["hflip", "rot90", "crop", "shift", "resize"]
    k: int = 1  # rot90 quarter turns
    box: Optional[Tuple[int, int, int, int]] = None  # crop: top, left, height, width
    dx: int = 0
    dy: int = 0
    size: Optional[Tuple[int, int]] = None  # resize: height, width

    def label(self) -> str:
        if self.kind == "rot90":
            return f"rot90x{self.k % 4}"
        if self.kind == "crop":
            return "crop" + ":".join(str(v) for v in self.box or ())
        if self.kind == "shift":
            return f"shift{self.dx}:{self.dy}"
        if self.kind == "resize":
            return "resize" + ":".join(str(v) for v in self.size or ())
        return self.kind


class DatasetManifest(BaseModel):
    split: str
    instances: List[InstanceRecord] = Field(default_factory=list)
    category_filter: List[str] = Field(default_factory=list)
    augment: str = "none"
    seed: int = 0


class SampleMeta(BaseModel):
    index: int = 0
    target_id: int
    occluder_id: int
    dx: int
    dy: int
    ratio: float
    seed: int = 0
    transforms: List[str] = Field(default_factory=list)


class SynthesisReport(BaseModel):
    split: str
    written: int = 0
    targets: int = 0
    skipped_no_occluder: int = 0
    skipped_empty_target: int = 0
    augment_fallbacks: int = 0
    out_dir: str = ""
