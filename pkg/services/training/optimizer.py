import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from components.errors import CheckpointError, NumericError, ShapeError
from components.tensor.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    v: Dict[str, np.ndarray] = field(default_factory=OrderedDict)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Optional[np.ndarray]], state: AdamState,
              lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """
    One bias-corrected adaptive-moment update, in place on `params`.

    A missing gradient counts as zero. Every gradient is checked before anything is
    touched, so a non-finite one leaves parameters and moments as they were.

    Raises:
        NumericError: a gradient holds NaN / Inf; `component` names the parameter.
        ShapeError: a gradient does not match its parameter.
    """
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.data.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter {param.data.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name}; step aborted", component=name)

    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        m = state.m.get(name, np.zeros_like(param.data))
        v = state.v.get(name, np.zeros_like(param.data))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        param.data = param.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    state.step = step
    return state


class Adam:
    """Adam over a fixed, named parameter set; reads `.grad` from each parameter."""

    def __init__(self, params: Dict[str, Tensor], lr: float, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = OrderedDict()
        out[f"{prefix}.step"] = np.array(self.state.step, dtype=np.int64)
        for name in self.params:
            zeros = np.zeros_like(self.params[name].data)
            out[f"{prefix}.m.{name}"] = self.state.m.get(name, zeros)
            out[f"{prefix}.v.{name}"] = self.state.v.get(name, zeros)
        return out

    def load_state_arrays(self, prefix: str, arrays: Dict[str, np.ndarray]) -> None:
        key = f"{prefix}.step"
        if key not in arrays:
            raise CheckpointError(f"checkpoint has no {key}")
        state = AdamState(step=int(arrays[key]))
        for name, param in self.params.items():
            for moment, target in (("m", state.m), ("v", state.v)):
                entry = f"{prefix}.{moment}.{name}"
                if entry not in arrays:
                    raise CheckpointError(f"checkpoint has no {entry}")
                if arrays[entry].shape != param.data.shape:
                    raise CheckpointError(f"{entry} has shape {arrays[entry].shape}, expected {param.data.shape}")
                target[name] = np.array(arrays[entry], dtype=np.float64)
        self.state = state
