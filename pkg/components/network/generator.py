"""
Coarse-to-refinement gated generator.

Both stages see the image concatenated with one mask channel. The coarse stage is a
gated encoder (full, 1/2 and 1/4 resolution), a dilated middle and a mirror decoder.
The refinement stage runs a dilated conv branch and a contextual-attention branch
side by side at 1/4 resolution, concatenates them and decodes. Heads end in tanh so
outputs live in [-1, 1], the range images are kept in internally.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from components.errors import ShapeError
from components.masks.mask_algebra import binary_validity, hole_mask, validate_weighted
from components.network.attention import contextual_attention, downsample_validity
from components.network.gated_conv import ConvLayer, GatedConvLayer
from components.tensor import ops
from components.tensor.tensor import Tensor
from models.completion_config import ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class GeneratorOutput:
    coarse: Tensor
    refined: Tensor
    composited: Tensor


def as_mask_batch(weighted: np.ndarray) -> np.ndarray:
    """Accept (n, h, w) or (n, 1, h, w); return (n, h, w) float64."""
    weighted = validate_weighted(weighted)
    if weighted.ndim == 4 and weighted.shape[1] == 1:
        weighted = weighted[:, 0]
    if weighted.ndim != 3:
        raise ShapeError(f"mask batch must be (n, h, w) or (n, 1, h, w), got {weighted.shape}")
    return weighted


def attention_validity(weighted: np.ndarray) -> np.ndarray:
    """
    Quarter-resolution patch validity for the attention branch.

    A block counts as background only when none of its pixels is in the hole, so a
    hole spread over every block leaves nothing to copy from. Such samples attend
    over all patches instead.
    """
    validity = downsample_validity(weighted, 4)
    empty = ~validity.any(axis=(1, 2))
    if empty.any():
        logger.debug("no hole-free block for samples %s, attending over every patch", np.flatnonzero(empty).tolist())
        validity[empty] = True
    return validity


def _run(layers: List[GatedConvLayer], x: Tensor) -> Tensor:
    for layer in layers:
        x = layer(x)
    return x


class GatedGenerator:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        w0, w1, w2 = config.widths
        half = max(1, w0 // 2)
        c_in = config.image_channels + 1

        def gated(in_c, out_c, kernel=3, stride=1, dilation=1):
            return GatedConvLayer.create(rng, in_c, out_c, kernel, stride, dilation,
                                         config.activation, config.init_scale)

        def encoder() -> List[GatedConvLayer]:
            return [gated(c_in, w0, 5), gated(w0, w1, 3, 2), gated(w1, w1), gated(w1, w2, 3, 2), gated(w2, w2)]

        self.coarse_encoder = encoder() + [gated(w2, w2, dilation=d) for d in config.dilations] + [gated(w2, w2)]
        self.coarse_up1 = [gated(w2, w1), gated(w1, w1)]
        self.coarse_up2 = [gated(w1, w0), gated(w0, half)]
        self.coarse_head = ConvLayer.create(rng, half, config.image_channels, 3, scale=config.init_scale)

        self.refine_conv = encoder() + [gated(w2, w2, dilation=d) for d in config.dilations]
        self.refine_attn_pre = encoder() if config.attention else []
        self.refine_attn_post = [gated(w2, w2), gated(w2, w2)] if config.attention else []
        self.refine_merge = [gated(2 * w2 if config.attention else w2, w2), gated(w2, w2)]
        self.refine_up1 = [gated(w2, w1), gated(w1, w1)]
        self.refine_up2 = [gated(w1, w0), gated(w0, half)]
        self.refine_head = ConvLayer.create(rng, half, config.image_channels, 3, scale=config.init_scale)

    def _groups(self) -> List[Tuple[str, list]]:
        return [
            ("coarse.encoder", self.coarse_encoder),
            ("coarse.up1", self.coarse_up1),
            ("coarse.up2", self.coarse_up2),
            ("coarse.head", [self.coarse_head]),
            ("refine.conv", self.refine_conv),
            ("refine.attn_pre", self.refine_attn_pre),
            ("refine.attn_post", self.refine_attn_post),
            ("refine.merge", self.refine_merge),
            ("refine.up1", self.refine_up1),
            ("refine.up2", self.refine_up2),
            ("refine.head", [self.refine_head]),
        ]

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = OrderedDict()
        for prefix, layers in self._groups():
            for index, layer in enumerate(layers):
                for name, tensor in layer.parameters().items():
                    params[f"generator.{prefix}.{index}.{name}"] = tensor
        return params

    def mask_channel(self, weighted: np.ndarray) -> Tensor:
        mask = weighted if self.config.mask_mode == "weighted" else binary_validity(weighted)
        return Tensor(mask[:, None])

    def _decode(self, x: Tensor, up1: List[GatedConvLayer], up2: List[GatedConvLayer], head: ConvLayer) -> Tensor:
        x = _run(up1, ops.resample(x, "nearest_up2"))
        x = _run(up2, ops.resample(x, "nearest_up2"))
        return ops.activation("tanh", head(x))

    def forward(self, erased_image: Tensor, weighted: np.ndarray) -> GeneratorOutput:
        """
        Args:
            erased_image: (n, c, h, w) input in [-1, 1].
            weighted: (n, h, w) weighted mask.

        Returns:
            GeneratorOutput; `composited` takes `refined` inside the hole and
            `erased_image` unchanged everywhere else.
        """
        weighted = as_mask_batch(weighted)
        n, c, h, w = erased_image.shape
        if c != self.config.image_channels or weighted.shape != (n, h, w):
            raise ShapeError(f"generator got image {erased_image.shape} and mask {weighted.shape}, "
                             f"configured for {self.config.image_channels} channels")
        if h % 4 or w % 4:
            raise ShapeError(f"generator extents must be divisible by 4, got {h}x{w}")

        hole = hole_mask(weighted)[:, None]
        keep = Tensor((~hole).astype(np.float64))
        mask = self.mask_channel(weighted)
        x = ops.mul(erased_image, keep)

        coarse = self._decode(_run(self.coarse_encoder, ops.concat([x, mask])),
                              self.coarse_up1, self.coarse_up2, self.coarse_head)

        stage_input = ops.where(hole, coarse, x) if self.config.paste_coarse else coarse
        refine_in = ops.concat([stage_input, mask])
        branch = _run(self.refine_conv, refine_in)
        if self.config.attention:
            features = _run(self.refine_attn_pre, refine_in)
            validity = attention_validity(weighted)
            attended = contextual_attention(features, features, validity,
                                            scale=self.config.attention_scale,
                                            patch=self.config.attention_patch)
            branch = ops.concat([branch, _run(self.refine_attn_post, attended)])
        refined = self._decode(_run(self.refine_merge, branch), self.refine_up1, self.refine_up2, self.refine_head)

        composited = ops.where(hole, refined, erased_image)
        return GeneratorOutput(coarse=coarse, refined=refined, composited=composited)

    __call__ = forward


def generator_forward(generator: GatedGenerator, erased_image: Tensor, weighted: np.ndarray) -> GeneratorOutput:
    return generator.forward(erased_image, weighted)
