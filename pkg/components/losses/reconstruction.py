import numpy as np

from components.errors import ShapeError
from components.tensor import ops
from components.tensor.tensor import Tensor


def _same_shape(*tensors: Tensor) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"loss inputs differ in shape: {sorted(shapes)}")


def mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b)
    return ops.mean(ops.abs_(ops.sub(a, b)))


def l1_recon(gt: Tensor, coarse: Tensor, refined: Tensor) -> Tensor:
    """Per-element mean |gt - coarse| plus mean |gt - refined|."""
    _same_shape(gt, coarse, refined)
    return ops.add(mean_abs_diff(gt, coarse), mean_abs_diff(gt, refined))


def patch_loss(mask: np.ndarray, gt: Tensor, refined: Tensor) -> Tensor:
    """
    Hole-mean absolute error: sum |M * (gt - refined)| / (|M| * channels).

    `mask` is (n, h, w) boolean; an empty mask gives a constant 0.
    """
    _same_shape(gt, refined)
    mask = np.asarray(mask, dtype=bool)
    n, c, h, w = gt.shape
    if mask.shape != (n, h, w):
        raise ShapeError(f"patch mask {mask.shape} does not match images {(n, h, w)}")
    count = int(mask.sum())
    if count == 0:
        return Tensor(0.0)
    masked = ops.mul(ops.abs_(ops.sub(gt, refined)), Tensor(mask[:, None].astype(np.float64)))
    return ops.scale(ops.sum_(masked), 1.0 / (count * c))
