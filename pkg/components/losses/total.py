import logging
import math
from typing import Dict, Tuple, Union

import numpy as np

from components.errors import ConfigError, NumericError
from components.losses.adversarial import hinge_g
from components.losses.feature_losses import FeatureBackbone, perceptual, style_loss
from components.losses.reconstruction import l1_recon, patch_loss
from components.masks.mask_algebra import hole_mask
from components.network.generator import GeneratorOutput
from components.tensor import ops
from components.tensor.tensor import Tensor
from models.completion_config import LOSS_TERMS, BackboneConfig, LossWeights
from models.report_model import LossReport

logger = logging.getLogger(__name__)

Component = Union[Tensor, float]


def _as_tensor(value: Component) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(float(value))


def total_loss(weights: LossWeights, components: Dict[str, Component]) -> Tuple[Tensor, LossReport]:
    """
    Weighted sum of the five generator terms.

    Terms whose weight is 0 stay in the report but are left out of the returned
    graph, so an ablated term never contributes a gradient.

    Raises:
        NumericError: a component is NaN or infinite; `component` names it.
    """
    missing = [t for t in LOSS_TERMS if t not in components]
    if missing:
        raise ConfigError(f"loss components missing: {missing}")
    values = {}
    for term in LOSS_TERMS:
        component = components[term]
        value = component.item() if isinstance(component, Tensor) else float(component)
        if not math.isfinite(value):
            raise NumericError(f"loss component {term} is {value}", component=term)
        values[term] = value

    lambdas = dict(zip(LOSS_TERMS, weights.as_tuple()))
    total = None
    weighted = {}
    for term in LOSS_TERMS:
        weighted[term] = lambdas[term] * values[term]
        if lambdas[term] == 0.0:
            continue
        contribution = ops.scale(_as_tensor(components[term]), lambdas[term])
        total = contribution if total is None else ops.add(total, contribution)
    if total is None:
        total = Tensor(0.0)
    report = LossReport(total=total.item(), weighted=weighted, **values)
    return total, report


def check_signs(report: LossReport) -> None:
    """Every term but the adversarial one is non-negative."""
    for term, value in report.components().items():
        if term != "adversarial" and value < 0.0:
            raise NumericError(f"loss component {term} is negative ({value})", component=term)


def generator_components(backbone: FeatureBackbone, backbone_config: BackboneConfig, output: GeneratorOutput,
                         gt: Tensor, weighted: np.ndarray, fake_scores: Tensor) -> Dict[str, Tensor]:
    hole = hole_mask(weighted)
    return {
        "adversarial": hinge_g(fake_scores),
        "perceptual": perceptual(backbone, output.refined, gt, backbone_config.perceptual_taps),
        "patch": patch_loss(hole, gt, output.refined),
        "style": style_loss(backbone, output.refined, gt, backbone_config.style_taps),
        "reconstruction": l1_recon(gt, output.coarse, output.refined),
    }
