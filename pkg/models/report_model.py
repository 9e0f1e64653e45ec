import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_serializer


class LossReport(BaseModel):
    # unweighted components; ablated terms are still reported
    adversarial: float = 0.0
    perceptual: float = 0.0
    patch: float = 0.0
    style: float = 0.0
    reconstruction: float = 0.0
    total: float = 0.0
    weighted: Dict[str, float] = Field(default_factory=dict)
    discriminator: Optional[float] = None
    step: Optional[int] = None

    def components(self) -> Dict[str, float]:
        return {
            "adversarial": self.adversarial,
            "perceptual": self.perceptual,
            "patch": self.patch,
            "style": self.style,
            "reconstruction": self.reconstruction,
        }


def _finite_or_label(value: float):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


class SampleMetrics(BaseModel):
    sample: str
    l1_error: float
    l2_error: float
    psnr_db: float
    ssim: float

    @field_serializer("psnr_db")
    def _serialize_psnr(self, value: float):
        return _finite_or_label(value)


class MetricReport(BaseModel):
    samples: List[SampleMetrics] = Field(default_factory=list)
    l1_error: float = 0.0
    l2_error: float = 0.0
    psnr_db: float = 0.0
    ssim: float = 0.0
    region: str = "full"
    completer: str = "model"

    @field_serializer("psnr_db")
    def _serialize_psnr(self, value: float):
        return _finite_or_label(value)

    def aggregate_record(self) -> Dict[str, object]:
        return {
            "sample": "aggregate",
            "l1_error": self.l1_error,
            "l2_error": self.l2_error,
            "psnr_db": _finite_or_label(self.psnr_db),
            "ssim": self.ssim,
            "count": len(self.samples),
        }


class AuditResult(BaseModel):
    check: str
    kind: str  # 'gradient' or 'invariant'
    error: float
    tolerance: float
    passed: bool
    detail: str = ""


class AuditReport(BaseModel):
    results: List[AuditResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[AuditResult]:
        return [r for r in self.results if not r.passed]


class AblationRow(BaseModel):
    description: str
    dropped: Optional[str] = None
    l1_error: float
    l2_error: float
    psnr_db: float
    ssim: float
