"""Per-timestep scalars of the forward/reverse noising processes.

The noise level beta_t rises affinely from BETA_FIRST at t=1 to BETA_LAST at
t=T:

    beta_t = (BETA_FIRST*(T-t) + BETA_LAST*(t-1)) / (T-1)

From it the schedule precomputes, always at 64-bit:

    alpha_t     = 1 - beta_t
    alpha_bar_t = prod_{s<=t} alpha_s
    beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t
    sigma_sq_t  = beta_tilde_t

with the convention alpha_bar_0 = 1, which makes beta_tilde_1 = 0: the last
reverse step (t=1) adds no noise. Timesteps are 1-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

BETA_FIRST = 1e-4
BETA_LAST = 2e-2

# Identifier stored in checkpoints; the only schedule this build supports.
ALGORITHM = "linear-eq24"


@dataclass(frozen=True)
class Schedule:
    """Immutable table of per-timestep scalars, all float64 arrays of length T."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    sigma_sq: np.ndarray


class StepScalars(NamedTuple):
    beta: float
    alpha: float
    alpha_bar: float
    beta_tilde: float
    sigma_sq: float


def make_schedule(T: int) -> Schedule:
    """Build the affine-beta schedule for a horizon of T steps.

    T must be at least 2: the affine formula divides by T - 1, so a
    single-step horizon has no defined beta sequence.
    """
    T = int(T)
    if T < 2:
        raise ValueError(
            f"schedule horizon T={T} is invalid: the affine beta formula divides by "
            "T - 1, so T must be >= 2"
        )
    t = np.arange(1, T + 1, dtype=np.float64)
    beta = (BETA_FIRST * (T - t) + BETA_LAST * (t - 1)) / (T - 1)
    alpha = 1.0 - beta
    # Round beta through its complement so that beta == 1 - alpha holds
    # bit-exactly (the raw beta carries bits below the ulp of 1 - beta, which
    # 1 - alpha cannot reproduce). The reverse-step coefficient is written
    # beta/sqrt(1-ab) in one place and (1-alpha)/sqrt(1-ab) in another; the
    # stored pair must make those identical. Perturbs beta by < 6e-17.
    beta = 1.0 - alpha
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    sched = Schedule(
        T=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        beta_tilde=beta_tilde,
        sigma_sq=beta_tilde.copy(),
    )
    for arr in (sched.beta, sched.alpha, sched.alpha_bar, sched.beta_tilde, sched.sigma_sq):
        arr.setflags(write=False)
    return sched


def check_timestep(sched: Schedule, t: int) -> int:
    t = int(t)
    if not 1 <= t <= sched.T:
        raise ValueError(f"timestep t={t} out of range [1, {sched.T}]")
    return t


def lookup(sched: Schedule, t: int) -> StepScalars:
    """Stored scalars for timestep t (1-based); no recomputation."""
    t = check_timestep(sched, t)
    i = t - 1
    return StepScalars(
        beta=float(sched.beta[i]),
        alpha=float(sched.alpha[i]),
        alpha_bar=float(sched.alpha_bar[i]),
        beta_tilde=float(sched.beta_tilde[i]),
        sigma_sq=float(sched.sigma_sq[i]),
    )
