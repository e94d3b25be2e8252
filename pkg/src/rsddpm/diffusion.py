"""Forward noising, reverse denoising and the training objective.

The forward chain destroys a clean signal x0 with Gaussian noise, either one
step at a time,

    x_t = sqrt(1 - beta_t) * x_{t-1} + sqrt(beta_t) * eps,

or in closed form straight from x0,

    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

The reverse chain walks back with a noise-predicting model eps_pred:

    mean_t = (x_t - c_t * eps_pred) / sqrt(alpha_t),   c_t = beta_t / sqrt(1 - alpha_bar_t)
    x_{t-1} = mean_t + sqrt(sigma_sq_t) * z            (t >= 2)
    x_0     = mean_1                                   (final step, no noise)

c_t equals (1 - alpha_t) / sqrt(1 - alpha_bar_t) because beta_t = 1 - alpha_t;
the sampler uses the beta form and the tests assert the equivalence.

Timesteps may be a single int or a per-sample int array (training draws an
independent t per batch element).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numeric
from .numeric import Tensor, gaussian, no_grad
from .schedule import Schedule, check_timestep, lookup


@dataclass
class PosteriorParams:
    """Reverse-step Gaussian: mean tensor plus isotropic variance scalar."""

    mean: Tensor
    variance_scalar: float


EpsModel = Callable[[Tensor, Tensor, "int | np.ndarray"], Tensor]


def _check_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _coeff(values: np.ndarray, t, x: Tensor, sched: Schedule):
    """Per-timestep coefficient(s) shaped to combine with x without broadcasting
    surprises: a python float for scalar t, else (B, 1, ..., 1)."""
    if np.ndim(t) == 0:
        i = check_timestep(sched, int(t)) - 1
        return x.data.dtype.type(values[i])
    t = np.asarray(t)
    if t.ndim != 1 or t.shape[0] != x.data.shape[0]:
        raise ValueError(f"per-sample t must be 1-d of length {x.data.shape[0]}, got shape {t.shape}")
    if t.min() < 1 or t.max() > sched.T:
        raise ValueError(f"timestep out of range [1, {sched.T}]: {t.min()}..{t.max()}")
    c = values[t - 1].astype(x.data.dtype)
    return c.reshape((t.shape[0],) + (1,) * (x.data.ndim - 1))


def q_sample_closed(x0: Tensor, t, eps: Tensor, sched: Schedule) -> Tensor:
    """Closed-form forward sample: sqrt(alpha_bar_t)*x0 + sqrt(1-alpha_bar_t)*eps."""
    _check_shapes(x0, eps, "q_sample_closed")
    c0 = _coeff(np.sqrt(sched.alpha_bar), t, x0, sched)
    c1 = _coeff(np.sqrt(1.0 - sched.alpha_bar), t, eps, sched)
    return Tensor(c0 * x0.data + c1 * eps.data)


def q_sample_step(x_prev: Tensor, t, eps: Tensor, sched: Schedule) -> Tensor:
    """Single forward step: sqrt(1-beta_t)*x_{t-1} + sqrt(beta_t)*eps."""
    _check_shapes(x_prev, eps, "q_sample_step")
    c0 = _coeff(np.sqrt(1.0 - sched.beta), t, x_prev, sched)
    c1 = _coeff(np.sqrt(sched.beta), t, eps, sched)
    return Tensor(c0 * x_prev.data + c1 * eps.data)


def posterior_mean(x_t: Tensor, eps_pred: Tensor, t: int, sched: Schedule) -> PosteriorParams:
    """Reverse-step mean from the predicted noise, with variance sigma_sq_t."""
    _check_shapes(x_t, eps_pred, "posterior_mean")
    s = lookup(sched, t)
    dt = x_t.data.dtype.type
    coef = dt((1.0 - s.alpha) / math.sqrt(1.0 - s.alpha_bar))
    mean = (x_t.data - coef * eps_pred.data) * dt(1.0 / math.sqrt(s.alpha))
    return PosteriorParams(mean=Tensor(mean), variance_scalar=s.sigma_sq)


def reverse_step(x_t: Tensor, eps_pred: Tensor, t: int, z: Tensor, sched: Schedule) -> Tensor:
    """One noisy reverse step (t >= 2): mean + sqrt(sigma_sq_t) * z."""
    t = check_timestep(sched, t)
    if t < 2:
        raise ValueError("reverse_step: t=1 is deterministic; use final_step")
    _check_shapes(x_t, eps_pred, "reverse_step")
    _check_shapes(x_t, z, "reverse_step")
    s = lookup(sched, t)
    dt = x_t.data.dtype.type
    coef = dt(s.beta / math.sqrt(1.0 - s.alpha_bar))
    mean = (x_t.data - coef * eps_pred.data) * dt(1.0 / math.sqrt(s.alpha))
    return Tensor(mean + dt(math.sqrt(s.sigma_sq)) * z.data)


def final_step(x_1: Tensor, eps_pred: Tensor, sched: Schedule) -> Tensor:
    """Deterministic last step t=1: the posterior mean, no added noise."""
    _check_shapes(x_1, eps_pred, "final_step")
    s = lookup(sched, 1)
    dt = x_1.data.dtype.type
    coef = dt(s.beta / math.sqrt(1.0 - s.alpha_bar))
    return Tensor((x_1.data - coef * eps_pred.data) * dt(1.0 / math.sqrt(s.alpha)))


def training_loss(eps: Tensor, eps_pred: Tensor) -> Tensor:
    """Mean squared error over all elements; differentiable w.r.t. eps_pred."""
    _check_shapes(eps, eps_pred, "training_loss")
    diff = numeric.sub(eps_pred, eps)
    return numeric.mean_all(numeric.mul(diff, diff))


def sample(
    eps_model: EpsModel,
    cond: Tensor,
    sched: Schedule,
    rng,
    out_channels: int = 1,
) -> Tensor:
    """Run the full reverse chain conditioned on ``cond``.

    Starts from pure noise with the conditioning tensor's batch and spatial
    shape (``out_channels`` channels), takes noisy reverse steps for
    t = T..2 and the deterministic final step at t = 1. Deterministic given
    (model parameters, cond, rng state).
    """
    if cond.data.ndim != 4:
        raise ValueError(f"sample: conditioning input must be (B, C, H, W), got {cond.data.shape}")
    b, _, h, w = cond.data.shape
    shape = (b, out_channels, h, w)
    with no_grad():
        x = gaussian(rng, shape, dtype=cond.data.dtype)
        for t in range(sched.T, 1, -1):
            eps_pred = eps_model(x, cond, t)
            z = gaussian(rng, shape, dtype=cond.data.dtype)
            x = reverse_step(x, eps_pred, t, z, sched)
        eps_pred = eps_model(x, cond, 1)
        x = final_step(x, eps_pred, sched)
    return x
