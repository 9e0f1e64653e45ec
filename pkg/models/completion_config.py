from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

LOSS_TERMS = ("adversarial", "perceptual", "patch", "style", "reconstruction")


class LossWeights(BaseModel):
    # weights of the five generator terms
    adversarial: float = Field(default=1.0, ge=0.0)
    perceptual: float = Field(default=100.0, ge=0.0)
    patch: float = Field(default=10.0, ge=0.0)
    style: float = Field(default=1.0, ge=0.0)
    reconstruction: float = Field(default=100.0, ge=0.0)

    def ablated(self, terms: List[str]) -> "LossWeights":
        unknown = [t for t in terms if t not in LOSS_TERMS]
        if unknown:
            raise ValueError(f"unknown loss terms {unknown}; expected {LOSS_TERMS}")
        return self.model_copy(update={t: 0.0 for t in terms})

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return tuple(getattr(self, t) for t in LOSS_TERMS)


class ModelConfig(BaseModel):
    image_channels: int = Field(default=3, ge=1)
    resolution: int = Field(default=64, ge=8)
    # coarse / refinement encoder widths at full, 1/2 and 1/4 resolution
    widths: Tuple[int, int, int] = (24, 48, 96)
    dilations: Tuple[int, ...] = (2, 4, 8)
    activation: str = "elu"
    attention: bool = True
    attention_scale: float = 10.0
    attention_patch: int = 3
    paste_coarse: bool = False
    mask_mode: str = "weighted"  # 'weighted' or 'binary'
    disc_widths: Tuple[int, ...] = (32, 64, 128, 256, 256)
    disc_kernel: int = 5
    disc_mask: str = "weighted"  # 'weighted', 'binary' or 'none'
    power_iterations: int = Field(default=1, ge=1)
    init_scale: float = 1.0
    seed: int = 0

    @field_validator("mask_mode")
    @classmethod
    def _check_mask_mode(cls, value: str) -> str:
        if value not in ("weighted", "binary"):
            raise ValueError(f"mask_mode must be 'weighted' or 'binary', got {value!r}")
        return value

    @field_validator("disc_mask")
    @classmethod
    def _check_disc_mask(cls, value: str) -> str:
        if value not in ("weighted", "binary", "none"):
            raise ValueError(f"disc_mask must be 'weighted', 'binary' or 'none', got {value!r}")
        return value

    @model_validator(mode="after")
    def _check_resolution(self) -> "ModelConfig":
        if self.resolution % 4:
            raise ValueError(f"resolution must be divisible by 4, got {self.resolution}")
        return self


class BackboneConfig(BaseModel):
    widths: Tuple[int, int, int, int] = (16, 32, 64, 64)
    perceptual_taps: Tuple[str, ...] = ("block4",)
    style_taps: Tuple[str, ...] = ("block3", "block4")
    seed: int = 1234
    weights_path: Optional[str] = None


class TrainConfig(BaseModel):
    batch_size: int = Field(default=4, ge=1)
    steps: int = Field(default=1000, ge=0)
    g_lr: float = Field(default=1e-4, ge=0.0)
    d_lr: float = Field(default=1e-4, ge=0.0)
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = Field(default=10, ge=1)
    checkpoint_every: int = Field(default=100, ge=1)
    # loss terms whose weight is forced to zero (ablation rows)
    ablate: List[str] = Field(default_factory=list)
    loss: LossWeights = Field(default_factory=LossWeights)

    @field_validator("ablate")
    @classmethod
    def _check_ablate(cls, value: List[str]) -> List[str]:
        unknown = [t for t in value if t not in LOSS_TERMS]
        if unknown:
            raise ValueError(f"unknown loss terms {unknown}; expected {LOSS_TERMS}")
        return value

    def effective_weights(self) -> LossWeights:
        return self.loss.ablated(self.ablate)


class DataConfig(BaseModel):
    crop_size: int = Field(default=64, ge=4)
    # square crop side = context * longest bbox side
    context: float = Field(default=1.5, ge=1.0)
    min_ratio: float = 0.05
    max_ratio: float = 0.70
    max_tries: int = Field(default=50, ge=1)
    augment: str = "none"
    category_filter: List[str] = Field(default_factory=list)

    @field_validator("augment")
    @classmethod
    def _check_augment(cls, value: str) -> str:
        if value not in ("none", "x4"):
            raise ValueError(f"augment must be 'none' or 'x4', got {value!r}")
        return value

    @model_validator(mode="after")
    def _check_ratio_bounds(self) -> "DataConfig":
        if not 0.0 < self.min_ratio < self.max_ratio <= 1.0:
            raise ValueError(f"ratio bounds must satisfy 0 < min < max <= 1, got {self.min_ratio}, {self.max_ratio}")
        return self


class ExperimentConfig(BaseModel):
    """Everything a command can be configured with; one section per config-file prefix."""

    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    @model_validator(mode="after")
    def _sync_loss(self) -> "ExperimentConfig":
        # the loss section is authoritative for the weights the trainer uses
        self.train.loss = self.loss
        return self


class RunConfig(BaseModel):
    command: str
    config_path: Optional[str] = None
    overrides: dict = Field(default_factory=dict)
    seed: int = 0
    paths: dict = Field(default_factory=dict)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)

    def resolved(self) -> str:
        return self.model_dump_json()
