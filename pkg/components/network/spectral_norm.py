"""
Spectral normalization by power iteration.

A weight of any rank is viewed as a matrix (out, rest). The persistent vectors u, v
are refined by `power_iteration`; the normalized weight is W / sigma with
sigma = u^T W v, and the tape differentiates through sigma with u, v held fixed.
"""
import logging
from dataclasses import dataclass

import numpy as np

from components.errors import ConfigError, NumericError
from components.tensor.tensor import Function, Tensor

logger = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class PowerState:
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def create(cls, rows: int, cols: int, rng: np.random.Generator) -> "PowerState":
        u = rng.normal(size=rows)
        v = rng.normal(size=cols)
        return cls(u / np.linalg.norm(u), v / np.linalg.norm(v))


def _as_matrix(weight: np.ndarray) -> np.ndarray:
    return weight.reshape(weight.shape[0], -1)


def power_iteration(matrix: np.ndarray, state: PowerState, iters: int = 1) -> float:
    """Refine `state` in place; returns the estimate u^T W v."""
    if iters < 1:
        raise ConfigError(f"power iteration needs iters >= 1, got {iters}")
    if not np.any(matrix):
        raise NumericError("spectral normalization of a zero weight matrix", component="spectral_normalize")
    u, v = state.u, state.v
    for _ in range(iters):
        v = matrix.T @ u
        v = v / max(np.linalg.norm(v), EPS)
        u = matrix @ v
        u = u / max(np.linalg.norm(u), EPS)
    state.u, state.v = u, v
    return float(u @ matrix @ v)


class SpectralNormalize(Function):
    name = "spectral_normalize"

    def forward(self, weight, u=None, v=None):
        matrix = _as_matrix(weight)
        sigma = float(u @ matrix @ v)
        if sigma <= EPS:
            raise NumericError(f"spectral norm estimate {sigma:.3e} is not positive")
        self.weight, self.sigma, self.u, self.v = weight, sigma, u, v
        return weight / sigma

    def backward(self, grad):
        inner = float(np.sum(grad * self.weight))
        outer = np.outer(self.u, self.v).reshape(self.weight.shape)
        return (grad / self.sigma - inner / self.sigma ** 2 * outer,)


def spectral_normalize(weight: Tensor, state: PowerState, iters: int = 1, update: bool = True) -> Tensor:
    """
    Divide `weight` by its estimated top singular value.

    With `update` the power vectors are refined `iters` times first; without it the
    stored vectors are used as they are, which keeps repeated calls deterministic.
    """
    matrix = _as_matrix(weight.data)
    if update:
        power_iteration(matrix, state, iters)
    elif not np.any(matrix):
        raise NumericError("spectral normalization of a zero weight matrix", component="spectral_normalize")
    return SpectralNormalize.apply(weight, u=state.u, v=state.v)
