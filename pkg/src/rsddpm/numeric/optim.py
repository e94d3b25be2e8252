"""Adaptive stochastic-gradient optimizer (Adam) and gradient collection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward


@dataclass
class Gradient:
    """Gradients aligned with a parameter list; frozen params map to None."""

    params: list[Tensor]
    values: list[np.ndarray | None]

    def flat(self) -> np.ndarray:
        parts = [v.ravel() for v in self.values if v is not None]
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)


def grad(loss: Tensor, params: list[Tensor]) -> Gradient:
    """d(loss)/d(p) for each p in params.

    ``loss`` must be a scalar built from tracked ops. Parameters with
    ``requires_grad=False`` (frozen models) receive no entry.
    """
    if loss.data.shape != ():
        raise ValueError(f"grad: loss must be scalar, got shape {loss.data.shape}")
    for p in params:
        p.grad = None
    backward(loss)
    values = [p.grad.copy() if (p.requires_grad and p.grad is not None) else None for p in params]
    return Gradient(params=list(params), values=values)


class Adam:
    """Adam with bias correction.

    update: m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2
            p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update from the gradients stored on the parameters."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"adam: gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype, copy=False)
