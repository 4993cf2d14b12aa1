# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Adam with bias correction, plus global gradient-norm clipping.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .exceptions import NumericalError, ShapeError

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping

logger = logging.getLogger(__name__)

DEFAULT_LR = 1e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates and the step count of each parameter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> AdamState:
        state = cls()
        for name, value in params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
            state.t[name] = 0
        return state

    def copy(self) -> AdamState:
        return AdamState(
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            dict(self.t),
        )


def check_finite(grads: Mapping[str, np.ndarray | None], where: str = ""):
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            suffix = f" ({where})" if where else ""
            raise NumericalError(f"gradient of '{name}' contains NaN or infinite values{suffix}")


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float = DEFAULT_LR,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_EPS,
) -> tuple[Mapping[str, np.ndarray], AdamState]:
    """Update ``params`` in place from ``grads``.

    Only names with a gradient move; their step counters advance on their
    own. Every gradient is checked before anything is modified.
    """
    check_finite(grads)
    for name, grad in grads.items():
        if grad is None:
            continue
        param = params[name]
        if grad.shape != param.shape:
            raise ShapeError(f"gradient of '{name}' has shape {grad.shape}, parameter has {param.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
            state.t[name] = 0
        state.t[name] += 1
        step = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
    return params, state


def global_norm(grads: Iterable[np.ndarray | None]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads if g is not None))


def clip_grad_norm(grads: dict[str, np.ndarray | None], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(grads.values())
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        logger.debug("clipping gradient norm %.4g to %.4g", norm, max_norm)
        for name, grad in grads.items():
            if grad is not None:
                grads[name] = (grad * scale).astype(grad.dtype, copy=False)
    return norm
