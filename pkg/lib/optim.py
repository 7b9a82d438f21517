"""
Adam over the trainable subset of a parameter registry.

Moment buffers exist only for trainable parameters; freezing a
parameter mid-run discards its buffers (AdamState.discard), so a
frozen parameter carries no optimizer state at all.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List

import numpy as np

from .model import Parameter


class OptimizerError(ValueError):
    """Optimizer state and parameter set disagree, or a bad step count."""


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise OptimizerError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise OptimizerError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.eps <= 0:
            raise OptimizerError(f"eps must be > 0, got {self.eps}")


class AdamState:
    def __init__(self):
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    @classmethod
    def for_parameters(cls, params: Iterable[Parameter]) -> "AdamState":
        state = cls()
        for p in params:
            if p.trainable:
                state.m[p.name] = np.zeros(p.shape, dtype=np.float64)
                state.v[p.name] = np.zeros(p.shape, dtype=np.float64)
        return state

    @property
    def names(self) -> List[str]:
        return list(self.m)

    def discard(self, names: Iterable[str]) -> None:
        for name in names:
            self.m.pop(name, None)
            self.v.pop(name, None)


def adam_step(params: Iterable[Parameter], state: AdamState, t: int,
              config: AdamConfig = AdamConfig()) -> None:
    """One bias-corrected Adam update of every trainable parameter.

    A trainable parameter with no gradient (unused this step) is updated
    as if its gradient were zero. Frozen parameters are skipped.
    """
    if t < 1:
        raise OptimizerError(f"step count starts at 1, got {t}")
    trainable = [p for p in params if p.trainable]
    names = {p.name for p in trainable}
    if names != set(state.m):
        missing = sorted(names - set(state.m))
        stale = sorted(set(state.m) - names)
        raise OptimizerError(
            f"optimizer state does not match trainable parameters "
            f"(no state for {missing[:3]}, state without parameter {stale[:3]})")
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for p in trainable:
        g = p.tensor.grad
        if g is None:
            g = np.zeros(p.shape, dtype=np.float64)
        m, v = state.m[p.name], state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.tensor.data -= config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.eps)
