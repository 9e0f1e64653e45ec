import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Type

import numpy as np

from components.errors import NumericError
from components.tensor.tensor import Function, Tensor, backward, no_grad, zero_grad

logger = logging.getLogger(__name__)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
                      max_coords: Optional[int] = None, seed: int = 0) -> float:
    """
    Compare the tape gradient of the scalar `f()` against central differences.

    Returns max over probed coordinates of |analytic - numeric| / max(1, |analytic|).
    `max_coords` limits the probe to a seeded random subset of coordinates across
    all params; None probes every coordinate.
    """
    params = list(params)
    for p in params:
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
    zero_grad(params)
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    zero_grad(params)

    coords: List[Tuple[int, int]] = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(picked)]

    worst = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        original = flat[j]
        flat[j] = original + eps
        upper = _probe(f)
        flat[j] = original - eps
        lower = _probe(f)
        flat[j] = original
        numeric = (upper - lower) / (2.0 * eps)
        exact = analytic[i].reshape(-1)[j]
        error = abs(exact - numeric) / max(1.0, abs(exact))
        worst = max(worst, error)
    logger.debug("finite_diff_check probed %d coordinates, max relative error %.3e", len(coords), worst)
    return worst


def _probe(f: Callable[[], Tensor]) -> float:
    try:
        with no_grad():
            value = f().item()
    except NumericError as exc:
        raise NumericError(f"non-finite value at probe point: {exc}", component=exc.component) from exc
    if not np.isfinite(value):
        raise NumericError("non-finite value at probe point")
    return value


@contextmanager
def inject_backward_fault(function: Type[Function], factor: float = 2.0) -> Iterator[None]:
    """Scale every gradient `function` returns; a negative control for audits."""
    original = function.backward

    def faulty(self, grad):
        return tuple(None if g is None else g * factor for g in original(self, grad))

    function.backward = faulty
    try:
        yield
    finally:
        function.backward = original
