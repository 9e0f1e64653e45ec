from components.errors import ShapeError
from components.tensor import ops
from components.tensor.tensor import Tensor


def _check_scores(scores: Tensor, role: str) -> None:
    if scores.size == 0:
        raise ShapeError(f"{role} score map is empty")


def hinge_d(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """mean(relu(1 - D(x))) + mean(relu(1 + D(G(z)))), minimized by the discriminator."""
    _check_scores(real_scores, "real")
    _check_scores(fake_scores, "fake")
    real_term = ops.mean(ops.activation("relu", ops.shift(ops.scale(real_scores, -1.0), 1.0)))
    fake_term = ops.mean(ops.activation("relu", ops.shift(fake_scores, 1.0)))
    return ops.add(real_term, fake_term)


def hinge_g(fake_scores: Tensor) -> Tensor:
    _check_scores(fake_scores, "fake")
    return ops.scale(ops.mean(fake_scores), -1.0)
