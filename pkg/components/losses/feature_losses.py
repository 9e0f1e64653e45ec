"""
Frozen feature extractor and the perceptual / style losses computed on its taps.

The extractor is a seed-deterministic random conv stack: each block is a conv and
relu, tapped as 'block<i>', followed by a 2x average downsample while the extents
stay even. The tap 'input' returns the image itself. Real exported weights can
replace the random ones through `load_arrays`.
"""
import logging
from collections import OrderedDict
from typing import Dict, List, Sequence

import numpy as np

from components.errors import CheckpointError, ConfigError
from components.network.gated_conv import ConvLayer
from components.losses.reconstruction import mean_abs_diff
from components.tensor import ops
from components.tensor.tensor import Tensor
from models.completion_config import BackboneConfig

logger = logging.getLogger(__name__)

INPUT_TAP = "input"


class FeatureBackbone:
    def __init__(self, config: BackboneConfig, in_channels: int = 3, kernel: int = 3, downsample: bool = True):
        self.config = config
        self.downsample = downsample
        rng = np.random.default_rng(config.seed)
        self.blocks: List[ConvLayer] = []
        for width in config.widths:
            layer = ConvLayer.create(rng, in_channels, width, kernel)
            layer.weight.requires_grad = False
            layer.bias.requires_grad = False
            self.blocks.append(layer)
            in_channels = width
        self.taps = (INPUT_TAP,) + tuple(f"block{i + 1}" for i in range(len(self.blocks)))

    def _check_taps(self, taps: Sequence[str]) -> None:
        if not taps:
            raise ConfigError("at least one feature tap is required")
        unknown = [t for t in taps if t not in self.taps]
        if unknown:
            raise ConfigError(f"unknown feature taps {unknown}; available {list(self.taps)}")

    def features(self, x: Tensor, taps: Sequence[str]) -> Dict[str, Tensor]:
        self._check_taps(taps)
        wanted = set(taps)
        out: Dict[str, Tensor] = {}
        if INPUT_TAP in wanted:
            out[INPUT_TAP] = x
        deepest = max(self.taps.index(t) for t in taps)
        for index, layer in enumerate(self.blocks[:deepest]):
            x = ops.activation("relu", layer(x))
            name = f"block{index + 1}"
            if name in wanted:
                out[name] = x
            h, w = x.shape[2:]
            if self.downsample and h % 2 == 0 and w % 2 == 0 and h > 1 and w > 1:
                x = ops.resample(x, "avg_down2")
        return out

    def arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = OrderedDict()
        for index, layer in enumerate(self.blocks):
            out[f"backbone.{index}.weight"] = layer.weight.data
            out[f"backbone.{index}.bias"] = layer.bias.data
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Replace the random weights with exported ones of identical shapes."""
        for name, current in self.arrays().items():
            if name not in arrays:
                raise CheckpointError(f"backbone weights missing {name}")
            incoming = np.asarray(arrays[name], dtype=np.float64)
            if incoming.shape != current.shape:
                raise CheckpointError(f"backbone {name} has shape {incoming.shape}, expected {current.shape}")
        for index, layer in enumerate(self.blocks):
            layer.weight.data = np.array(arrays[f"backbone.{index}.weight"], dtype=np.float64)
            layer.bias.data = np.array(arrays[f"backbone.{index}.bias"], dtype=np.float64)
        logger.info("loaded %d backbone blocks from exported weights", len(self.blocks))


def perceptual(backbone: FeatureBackbone, out: Tensor, gt: Tensor, taps: Sequence[str]) -> Tensor:
    """Sum over taps of the per-element mean |features(out) - features(gt)|."""
    mine = backbone.features(out, taps)
    target = backbone.features(gt, taps)
    total = None
    for tap in taps:
        term = mean_abs_diff(mine[tap], target[tap])
        total = term if total is None else ops.add(total, term)
    return total


def gram(features: Tensor) -> Tensor:
    """(1, c, h, w) -> (c, c) correlations normalized by c*h*w."""
    return ops.gram(features)


def style_loss(backbone: FeatureBackbone, out: Tensor, gt: Tensor, taps: Sequence[str]) -> Tensor:
    """Sum over taps of mean |gram(out) - gram(gt)|, averaged over the batch."""
    mine = backbone.features(out, taps)
    target = backbone.features(gt, taps)
    n = out.shape[0]
    total = None
    for tap in taps:
        for index in range(n):
            term = mean_abs_diff(gram(ops.select_batch(mine[tap], index)),
                                 gram(ops.select_batch(target[tap], index)))
            total = term if total is None else ops.add(total, term)
    return ops.scale(total, 1.0 / n)
