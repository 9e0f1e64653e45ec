"""
Self-audit: finite-difference gradient checks of every layer and loss at 8x8, plus
exact invariant checks on the mask algebra, attention, spectral norm and checkpoints.

Each check draws from its own generator seeded by (seed, check index), so two runs
with the same seed produce the same report.
"""
import logging
from contextlib import ExitStack
from typing import Callable, List, Optional, Tuple

import numpy as np

from components.errors import CompletionError, ConfigError, MaskError
from components.losses.adversarial import hinge_d, hinge_g
from components.losses.feature_losses import FeatureBackbone, perceptual, style_loss
from components.losses.reconstruction import l1_recon, patch_loss
from components.losses.total import generator_components, total_loss
from components.masks.augmentation import augment
from components.masks.mask_algebra import build_weighted_mask, compose_with_retries
from components.network.attention import contextual_attention
from components.network.discriminator import PatchDiscriminator
from components.network.gated_conv import GatedConvLayer
from components.network.generator import GatedGenerator
from components.network.spectral_norm import PowerState, SpectralNormalize, spectral_normalize
from components.tensor import ops
from components.tensor.gradcheck import finite_diff_check, inject_backward_fault
from components.tensor.tensor import Tensor
from models.completion_config import BackboneConfig, LossWeights, ModelConfig
from models.report_model import AuditReport, AuditResult
from models.sample_model import SampleMeta, Transform
from services.training.checkpoint import decode_checkpoint, encode_checkpoint
from services.training.trainer import resident_mb

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
AUDIT_SIZE = 8
GENERATOR_COORDS = 80

AUDIT_MODEL = ModelConfig(resolution=AUDIT_SIZE, widths=(2, 3, 4), dilations=(2,), disc_widths=(2, 3),
                          disc_kernel=3, seed=3)
AUDIT_BACKBONE = BackboneConfig(widths=(2, 3, 3, 4))

# op families whose backward can be sabotaged as a negative control
FAULT_TARGETS = {
    "conv2d": ops.Conv2d,
    "activation": ops.Activation,
    "resample": ops.Resample,
    "mul": ops.Mul,
    "mean": ops.Mean,
    "gram": ops.Gram,
    "softmax": ops.MaskedSoftmax,
    "spectral_norm": SpectralNormalize,
}


def _hole_mask_batch(n: int = 1, size: int = AUDIT_SIZE) -> np.ndarray:
    # hole in one quadrant so quarter-resolution attention still finds valid patches
    weighted = np.full((n, size, size), 0.5)
    weighted[:, :size // 4, :size // 4] = 0.0
    weighted[:, size // 4:size // 2, :size // 2] = 1.0
    return weighted


def _image(rng, n=1, c=3, size=AUDIT_SIZE, requires_grad=False) -> Tensor:
    return Tensor(rng.uniform(-1, 1, size=(n, c, size, size)), requires_grad=requires_grad)


def _probe_sum(x: Tensor, target: Tensor) -> Tensor:
    return ops.sum_(ops.mul(x, target))


def check_conv2d(rng):
    x = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    target = Tensor(rng.normal(size=(1, 3, 4, 4)))
    return finite_diff_check(lambda: _probe_sum(ops.conv2d(x, w, b, stride=2, padding=2, dilation=2), target),
                             [x, w, b])


def check_activations(rng):
    x = Tensor(rng.normal(size=(1, 2, 4, 4)) + 0.05, requires_grad=True)
    target = Tensor(rng.normal(size=(1, 2, 4, 4)))
    return max(finite_diff_check(lambda k=kind: _probe_sum(ops.activation(k, x), target), [x])
               for kind in ("elu", "leaky_relu", "sigmoid", "tanh"))


def check_resample(rng):
    x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    up = Tensor(rng.normal(size=(1, 2, 8, 8)))
    down = Tensor(rng.normal(size=(1, 2, 2, 2)))
    return max(finite_diff_check(lambda: _probe_sum(ops.resample(x, "nearest_up2"), up), [x]),
               finite_diff_check(lambda: _probe_sum(ops.resample(x, "avg_down2"), down), [x]))


def check_gated_conv(rng):
    layer = GatedConvLayer.create(rng, 2, 3, kernel=3, dilation=2)
    x = Tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True)
    target = Tensor(rng.normal(size=(1, 3, 8, 8)))
    return finite_diff_check(lambda: _probe_sum(layer(x), target), [x, *layer.parameters().values()])


def check_attention(rng):
    fg = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    bg = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    validity = np.ones((1, 4, 4))
    validity[0, :2, :2] = 0.0
    target = Tensor(rng.normal(size=(1, 2, 4, 4)))
    return finite_diff_check(lambda: _probe_sum(contextual_attention(fg, bg, validity, scale=2.0), target), [fg, bg])


def check_spectral_norm(rng):
    weight = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    state = PowerState.create(3, 18, rng)
    spectral_normalize(weight, state, iters=5)
    target = Tensor(rng.normal(size=(3, 2, 3, 3)))
    return finite_diff_check(lambda: _probe_sum(spectral_normalize(weight, state, update=False), target), [weight])


def check_generator(rng):
    generator = GatedGenerator(AUDIT_MODEL)
    erased, target = _image(rng), _image(rng)
    weighted = _hole_mask_batch()

    def loss():
        out = generator(erased, weighted)
        return ops.add(ops.mean(ops.mul(out.refined, target)), ops.mean(ops.mul(out.coarse, target)))

    return finite_diff_check(loss, list(generator.parameters().values()), max_coords=GENERATOR_COORDS,
                             seed=int(rng.integers(2 ** 31)))


def check_discriminator(rng):
    discriminator = PatchDiscriminator(AUDIT_MODEL)
    image = _image(rng, requires_grad=True)
    weighted = _hole_mask_batch()
    params = [image, *discriminator.parameters().values()]
    return finite_diff_check(lambda: ops.mean(discriminator(image, weighted)), params)


def check_adversarial(rng):
    real = Tensor(rng.normal(size=(2, 1, 2, 2)), requires_grad=True)
    fake = Tensor(rng.normal(size=(2, 1, 2, 2)), requires_grad=True)
    return max(finite_diff_check(lambda: hinge_d(real, fake), [real, fake]),
               finite_diff_check(lambda: hinge_g(fake), [fake]))


def check_reconstruction(rng):
    gt = _image(rng)
    coarse, refined = _image(rng, requires_grad=True), _image(rng, requires_grad=True)
    hole = rng.random((1, AUDIT_SIZE, AUDIT_SIZE)) > 0.6
    return max(finite_diff_check(lambda: l1_recon(gt, coarse, refined), [coarse, refined]),
               finite_diff_check(lambda: patch_loss(hole, gt, refined), [refined]))


def check_feature_losses(rng):
    backbone = FeatureBackbone(AUDIT_BACKBONE)
    out, gt = _image(rng, requires_grad=True), _image(rng)
    return max(finite_diff_check(lambda: perceptual(backbone, out, gt, ["block4"]), [out]),
               finite_diff_check(lambda: style_loss(backbone, out, gt, ["block3", "block4"]), [out]))


def check_total_objective(rng):
    generator = GatedGenerator(AUDIT_MODEL)
    discriminator = PatchDiscriminator(AUDIT_MODEL)
    backbone = FeatureBackbone(AUDIT_BACKBONE)
    erased, gt = _image(rng), _image(rng)
    weighted = _hole_mask_batch()

    def loss():
        output = generator(erased, weighted)
        components = generator_components(backbone, AUDIT_BACKBONE, output, gt, weighted,
                                          discriminator(output.composited, weighted))
        return total_loss(LossWeights(), components)[0]

    return finite_diff_check(loss, list(generator.parameters().values()), max_coords=GENERATOR_COORDS // 2,
                             seed=int(rng.integers(2 ** 31)))


def _random_composite(rng, size=12):
    target = np.zeros((size, size), dtype=bool)
    target[2:10, 3:9] = True
    meta = SampleMeta(target_id=1, occluder_id=2, dx=0, dy=0, ratio=0.0)
    return compose_with_retries(rng.random((3, size, size)), target, np.ones((5, 4), dtype=bool), rng, meta=meta)


def check_mask_algebra(rng) -> Tuple[float, str]:
    failures = 0
    for _ in range(200):
        sample = _random_composite(rng)
        try:
            sample.check_invariants()
        except CompletionError:
            failures += 1
    return float(failures), f"{failures} of 200 composites violate the set equalities"


def check_augment_commutes(rng) -> Tuple[float, str]:
    transforms = [Transform(kind="hflip"), Transform(kind="rot90", k=1), Transform(kind="shift", dx=2, dy=-1),
                  Transform(kind="crop", box=(1, 2, 8, 8)), Transform(kind="resize", size=(24, 24))]
    mismatches, applied = 0, 0
    for transform in transforms:
        sample = _random_composite(rng)
        try:
            moved = augment(sample, transform)
        except MaskError:
            continue
        applied += 1
        if not np.array_equal(moved.weighted, build_weighted_mask(moved.occluded, moved.visible)):
            mismatches += 1
    return float(mismatches), f"{mismatches} of {applied} transforms break weighted-mask commutation"


def check_attention_weights(rng) -> Tuple[float, str]:
    fg = Tensor(rng.normal(size=(2, 3, 6, 6)))
    validity = (rng.random((2, 6, 6)) > 0.3).astype(np.float64)
    validity[:, 2, 2] = 1.0
    _, weights = contextual_attention(fg, fg, validity, return_weights=True)
    error = float(np.max(np.abs(weights.data.sum(axis=1) - 1.0)))
    return error, "max |sum of weights per query - 1|"


def check_spectral_svd(rng) -> Tuple[float, str]:
    worst = 0.0
    for _ in range(20):
        weight = Tensor(rng.normal(size=(8, 16)))
        state = PowerState.create(8, 16, rng)
        normalized = spectral_normalize(weight, state, iters=30)
        worst = max(worst, abs(float(np.linalg.svd(normalized.data, compute_uv=False)[0]) - 1.0))
    return worst, "max |top singular value - 1| over 20 matrices"


def check_checkpoint_round_trip(rng) -> Tuple[float, str]:
    arrays = {"a.weight": rng.normal(size=(3, 2, 3, 3)), "a.step": np.array(7, dtype=np.int64),
              "meta.config": np.frombuffer(b'{"k": 1}', dtype=np.uint8).copy()}
    blob = encode_checkpoint(arrays)
    decoded = decode_checkpoint(blob)
    equal = all(np.array_equal(decoded[k], v) and decoded[k].dtype == np.asarray(v).dtype for k, v in arrays.items())
    identical = encode_checkpoint(decoded) == blob
    return float(not (equal and identical)), "save -> load -> save byte identity"


GRADIENT_CHECKS: List[Tuple[str, Callable]] = [
    ("conv2d", check_conv2d),
    ("activations", check_activations),
    ("resample", check_resample),
    ("gated_conv", check_gated_conv),
    ("contextual_attention", check_attention),
    ("spectral_norm", check_spectral_norm),
    ("generator", check_generator),
    ("discriminator", check_discriminator),
    ("loss.adversarial", check_adversarial),
    ("loss.reconstruction_patch", check_reconstruction),
    ("loss.perceptual_style", check_feature_losses),
    ("loss.total", check_total_objective),
]

INVARIANT_CHECKS: List[Tuple[str, Callable, float]] = [
    ("mask_algebra.composites", check_mask_algebra, 0.0),
    ("mask_algebra.augment_commutes", check_augment_commutes, 0.0),
    ("attention.weights_sum_to_one", check_attention_weights, 1e-6),
    ("spectral_norm.svd", check_spectral_svd, 1e-3),
    ("checkpoint.round_trip", check_checkpoint_round_trip, 0.0),
]


def run_audit(seed: int = 0, fault: Optional[str] = None) -> AuditReport:
    """
    Run every gradient and invariant check.

    `fault` names an op family from FAULT_TARGETS whose backward is scaled by 2 for
    the whole run; the report must then fail.
    """
    if fault is not None and fault not in FAULT_TARGETS:
        raise ConfigError(f"unknown fault target {fault!r}; choose from {sorted(FAULT_TARGETS)}")
    report = AuditReport()
    with ExitStack() as stack:
        if fault is not None:
            stack.enter_context(inject_backward_fault(FAULT_TARGETS[fault]))
            logger.warning("audit runs with a sabotaged %s backward", fault)
        for index, (name, check) in enumerate(GRADIENT_CHECKS):
            rng = np.random.default_rng([seed, index])
            try:
                error, detail = check(rng), "max relative error vs central differences"
            except CompletionError as exc:
                error, detail = float("inf"), f"{type(exc).__name__}: {exc}"
            report.results.append(AuditResult(check=name, kind="gradient", error=error, tolerance=GRADIENT_TOLERANCE,
                                              passed=error < GRADIENT_TOLERANCE, detail=detail))
            logger.debug("audit %s: %.3e", name, error)
        offset = len(GRADIENT_CHECKS)
        for index, (name, check, tolerance) in enumerate(INVARIANT_CHECKS):
            rng = np.random.default_rng([seed, offset + index])
            try:
                error, detail = check(rng)
            except CompletionError as exc:
                error, detail = float("inf"), f"{type(exc).__name__}: {exc}"
            report.results.append(AuditResult(check=name, kind="invariant", error=error, tolerance=tolerance,
                                              passed=error <= tolerance, detail=detail))
    logger.info("audit: %d checks, %d failed, rss=%.0fMB", len(report.results), len(report.failures), resident_mb())
    return report
