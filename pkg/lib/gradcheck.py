"""
Finite-difference gradient check.

Error metric per parameter is norm-wise:
    |analytic - numeric| / max(|analytic| + |numeric|, floor)
so a parameter whose true gradient is ~0 does not blow up on
difference noise. The check reports the worst parameter.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from .tensor_engine import Tape, Tensor, backward

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckResult:
    errors: Dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get) if self.errors else ""


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> float:
    diff = float(np.linalg.norm(analytic - numeric))
    return diff / max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), floor)


def numeric_gradient(f: Callable[[], float], array: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of f() w.r.t. every entry of `array` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = f()
        flat[i] = original - step
        minus = f()
        flat[i] = original
        gflat[i] = (plus - minus) / (2.0 * step)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tuple[str, Tensor]],
                    step: float = DEFAULT_STEP, floor: float = DEFAULT_FLOOR) -> GradCheckResult:
    """Compare tape gradients of loss_fn() with central differences.

    loss_fn must rebuild the loss from the current parameter values on
    every call.
    """
    for _, t in params:
        t.grad = None
    with Tape():
        backward(loss_fn())
    analytic = {name: (t.grad if t.grad is not None else np.zeros(t.shape)) for name, t in params}

    def value() -> float:
        return float(loss_fn().data)

    errors = {}
    for name, t in params:
        errors[name] = relative_error(analytic[name], numeric_gradient(value, t.data, step), floor)
    return GradCheckResult(errors)
