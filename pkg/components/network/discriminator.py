import logging
from collections import OrderedDict
from typing import Dict, List

import numpy as np

from components.errors import ShapeError
from components.masks.mask_algebra import binary_validity
from components.network.gated_conv import ConvLayer
from components.network.generator import as_mask_batch
from components.network.spectral_norm import PowerState, power_iteration, spectral_normalize
from components.tensor import ops
from components.tensor.tensor import Tensor
from models.completion_config import ModelConfig

logger = logging.getLogger(__name__)


class PatchDiscriminator:
    """
    Strided spectral-normalized conv stack scoring dense patches; no global pooling.

    Every layer halves the extents. leaky_relu follows all layers but the last.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed + 1)
        in_c = config.image_channels + (0 if config.disc_mask == "none" else 1)
        self.layers: List[ConvLayer] = []
        self.power: List[PowerState] = []
        for width in config.disc_widths:
            layer = ConvLayer.create(rng, in_c, width, config.disc_kernel, stride=2, scale=config.init_scale)
            state = PowerState.create(width, in_c * config.disc_kernel ** 2, rng)
            power_iteration(layer.weight.data.reshape(width, -1), state, config.power_iterations)
            self.layers.append(layer)
            self.power.append(state)
            in_c = width

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = OrderedDict()
        for index, layer in enumerate(self.layers):
            params[f"discriminator.{index}.weight"] = layer.weight
            params[f"discriminator.{index}.bias"] = layer.bias
        return params

    def buffers(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = OrderedDict()
        for index, state in enumerate(self.power):
            out[f"discriminator.{index}.u"] = state.u
            out[f"discriminator.{index}.v"] = state.v
        return out

    def load_buffers(self, arrays: Dict[str, np.ndarray]) -> None:
        for index, state in enumerate(self.power):
            state.u = np.array(arrays[f"discriminator.{index}.u"], dtype=np.float64)
            state.v = np.array(arrays[f"discriminator.{index}.v"], dtype=np.float64)

    def normalized_weight(self, index: int, update_power: bool = False) -> Tensor:
        weight = self.layers[index].weight
        if not np.any(weight.data):
            # an all-zero bank has nothing to normalize and scores 0
            return weight
        return spectral_normalize(weight, self.power[index], self.config.power_iterations, update=update_power)

    def forward(self, image: Tensor, weighted: np.ndarray, update_power: bool = False) -> Tensor:
        """
        Args:
            image: (n, c, h, w) in [-1, 1].
            weighted: (n, h, w) weighted mask, fed as an extra channel unless
                `disc_mask` is 'none'.
            update_power: refine the power vectors before normalizing (discriminator
                training steps only).

        Returns:
            (n, c', h / 2^L, w / 2^L) patch scores.
        """
        weighted = as_mask_batch(weighted)
        n, c, h, w = image.shape
        if c != self.config.image_channels or weighted.shape != (n, h, w):
            raise ShapeError(f"discriminator got image {image.shape} and mask {weighted.shape}")
        x = image
        if self.config.disc_mask == "weighted":
            x = ops.concat([image, Tensor(weighted[:, None])])
        elif self.config.disc_mask == "binary":
            x = ops.concat([image, Tensor(binary_validity(weighted)[:, None])])

        last = len(self.layers) - 1
        for index, layer in enumerate(self.layers):
            weight = self.normalized_weight(index, update_power)
            x = ops.conv2d(x, weight, layer.bias, stride=layer.stride, padding=layer.padding)
            if index != last:
                x = ops.activation("leaky_relu", x)
        return x

    __call__ = forward


def discriminator_forward(discriminator: PatchDiscriminator, image: Tensor, weighted: np.ndarray,
                          update_power: bool = False) -> Tensor:
    return discriminator.forward(image, weighted, update_power)
