import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np

from components.errors import ShapeError
from components.tensor import ops
from components.tensor.tensor import Tensor

logger = logging.getLogger(__name__)


def init_weight(rng: np.random.Generator, out_c: int, in_c: int, kernel: int, scale: float = 1.0) -> Tensor:
    std = scale * np.sqrt(2.0 / (in_c * kernel * kernel))
    return Tensor(rng.normal(0.0, std, size=(out_c, in_c, kernel, kernel)), requires_grad=True)


@dataclass
class ConvLayer:
    weight: Tensor
    bias: Tensor
    stride: int = 1
    dilation: int = 1

    @classmethod
    def create(cls, rng: np.random.Generator, in_c: int, out_c: int, kernel: int = 3,
               stride: int = 1, dilation: int = 1, scale: float = 1.0) -> "ConvLayer":
        return cls(init_weight(rng, out_c, in_c, kernel, scale), Tensor(np.zeros(out_c), requires_grad=True),
                   stride, dilation)

    @property
    def padding(self) -> int:
        return self.dilation * (self.weight.shape[2] // 2)

    def parameters(self) -> Dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, dilation=self.dilation)


@dataclass
class GatedConvLayer:
    """
    Two filter banks of identical shape: `w_feature` produces F, `w_gate` produces G,
    and the layer emits phi(F) * sigmoid(G). Padding keeps 'same' extents at stride 1.
    """

    w_feature: Tensor
    b_feature: Tensor
    w_gate: Tensor
    b_gate: Tensor
    stride: int = 1
    dilation: int = 1
    activation: str = "elu"

    @classmethod
    def create(cls, rng: np.random.Generator, in_c: int, out_c: int, kernel: int = 3, stride: int = 1,
               dilation: int = 1, activation: str = "elu", scale: float = 1.0) -> "GatedConvLayer":
        return cls(
            w_feature=init_weight(rng, out_c, in_c, kernel, scale),
            b_feature=Tensor(np.zeros(out_c), requires_grad=True),
            w_gate=init_weight(rng, out_c, in_c, kernel, scale),
            b_gate=Tensor(np.zeros(out_c), requires_grad=True),
            stride=stride,
            dilation=dilation,
            activation=activation,
        )

    @property
    def in_channels(self) -> int:
        return self.w_feature.shape[1]

    @property
    def out_channels(self) -> int:
        return self.w_feature.shape[0]

    @property
    def padding(self) -> int:
        return self.dilation * (self.w_feature.shape[2] // 2)

    def parameters(self) -> Dict[str, Tensor]:
        return {"w_feature": self.w_feature, "b_feature": self.b_feature,
                "w_gate": self.w_gate, "b_gate": self.b_gate}

    def __call__(self, x: Tensor) -> Tensor:
        return gated_conv(self, x)


def gated_conv(layer: GatedConvLayer, input: Tensor) -> Tensor:
    if layer.w_feature.shape != layer.w_gate.shape:
        raise ShapeError(f"feature bank {layer.w_feature.shape} and gate bank {layer.w_gate.shape} differ")
    if input.ndim != 4 or input.shape[1] != layer.in_channels:
        raise ShapeError(f"gated conv expects {layer.in_channels} input channels, got shape {input.shape}")
    geometry = dict(stride=layer.stride, padding=layer.padding, dilation=layer.dilation)
    feature = ops.conv2d(input, layer.w_feature, layer.b_feature, **geometry)
    gate = ops.conv2d(input, layer.w_gate, layer.b_gate, **geometry)
    return ops.mul(ops.activation(layer.activation, feature), ops.activation("sigmoid", gate))
