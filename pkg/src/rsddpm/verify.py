"""Named analytic self-checks: every identity the design relies on, executable.

Each check returns a measured value compared against a threshold; the
runner prints one line per check and fails on any violation. These are the
same identities the test suite pins, packaged so a fresh install can be
validated from the command line without the test harness.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import diffusion, metrics, pipeline
from .models import Denoiser
from .numeric import Rng, Tensor
from .schedule import BETA_FIRST, BETA_LAST, Schedule, make_schedule


@dataclass
class CheckResult:
    name: str
    measured: float
    threshold: float
    op: str            # "<" or ">"
    passed: bool
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<34} measured {self.measured:.3e} "
                f"(require {self.op} {self.threshold:.3e}, {self.seconds:.2f}s)")


def _result(name, measured, threshold, op, t0) -> CheckResult:
    passed = measured < threshold if op == "<" else measured > threshold
    return CheckResult(name, float(measured), float(threshold), op, bool(passed),
                       time.monotonic() - t0)


def check_schedule_endpoints() -> CheckResult:
    t0 = time.monotonic()
    err = 0.0
    for t_total in (2, 3, 10, 100, 1000):
        s = make_schedule(t_total)
        err = max(err, abs(s.beta[0] - BETA_FIRST), abs(s.beta[-1] - BETA_LAST))
    return _result("schedule-endpoints", err, 1e-15, "<", t0)


def check_schedule_linearity() -> CheckResult:
    t0 = time.monotonic()
    err = 0.0
    for t_total in (3, 10, 100, 1000):
        d2 = np.diff(make_schedule(t_total).beta, n=2)
        if d2.size:
            err = max(err, float(np.abs(d2).max()))
    return _result("schedule-linearity", err, 1e-12, "<", t0)


def check_alpha_bar_recurrence() -> CheckResult:
    t0 = time.monotonic()
    err = 0.0
    for t_total in (2, 10, 100, 1000):
        s = make_schedule(t_total)
        reference = s.alpha_bar[:-1] * s.alpha[1:]
        rel = np.abs(reference - s.alpha_bar[1:]) / np.abs(s.alpha_bar[1:])
        err = max(err, float(rel.max()))
    return _result("alpha-bar-recurrence", err, 1e-15, "<", t0)


def check_first_step_variance_zero() -> CheckResult:
    t0 = time.monotonic()
    err = 0.0
    for t_total in (2, 10, 1000):
        s = make_schedule(t_total)
        err = max(err, abs(s.beta_tilde[0]), abs(s.sigma_sq[0]))
    return _result("first-step-variance-zero", err, 1e-300, "<", t0)


def closed_vs_iterated_moments(sched: Schedule, draws: int, rng: Rng) -> float:
    """Max deviation, in standard-error units, between Monte-Carlo moments of
    the iterated one-step chain and the closed-form (mean, variance) at each t."""
    x0 = 0.7
    worst = 0.0
    for t in range(1, sched.T + 1):
        x = np.full(draws, x0)
        for step in range(1, t + 1):
            eps = rng.normal((draws,), dtype=np.float64)
            x = math.sqrt(1.0 - sched.beta[step - 1]) * x + math.sqrt(sched.beta[step - 1]) * eps
        want_mean = math.sqrt(sched.alpha_bar[t - 1]) * x0
        want_var = 1.0 - sched.alpha_bar[t - 1]
        m = float(x.mean())
        v = float(x.var(ddof=1))
        se_mean = math.sqrt(want_var / draws)
        se_var = want_var * math.sqrt(2.0 / (draws - 1))
        worst = max(worst, abs(m - want_mean) / se_mean, abs(v - want_var) / se_var)
    return worst


def check_noising_moments() -> CheckResult:
    t0 = time.monotonic()
    worst = closed_vs_iterated_moments(make_schedule(10), 20000, Rng(2026).child(5))
    return _result("closed-vs-iterated-noising", worst, 4.0, "<", t0)


def check_posterior_mean_identity() -> CheckResult:
    """diffusion.posterior_mean with the true noise vs an independently coded
    Gaussian posterior mean."""
    t0 = time.monotonic()
    sched = make_schedule(50)
    rng = Rng(77).child(1)
    err = 0.0
    for t in range(1, sched.T + 1):
        xbar0 = rng.normal((100,), dtype=np.float64)
        eps = rng.normal((100,), dtype=np.float64)
        ab = sched.alpha_bar[t - 1]
        ab_prev = 1.0 if t == 1 else sched.alpha_bar[t - 2]
        beta = sched.beta[t - 1]
        alpha = sched.alpha[t - 1]
        x_t = math.sqrt(ab) * xbar0 + math.sqrt(1.0 - ab) * eps
        independent = (math.sqrt(ab_prev) * beta * xbar0
                       + math.sqrt(alpha) * (1.0 - ab_prev) * x_t) / (1.0 - ab)
        got = diffusion.posterior_mean(Tensor(x_t), Tensor(eps), t, sched).mean.data
        err = max(err, float(np.abs(got - independent).max()))
    return _result("posterior-mean-identity", err, 1e-6, "<", t0)


def check_residual_ensemble_identity() -> CheckResult:
    t0 = time.monotonic()
    rng = Rng(11).child(2)
    err = 0.0
    for _ in range(100):
        x0 = Tensor(rng.normal((10, 4, 4), dtype=np.float32))
        xhat = Tensor(rng.normal((10, 4, 4), dtype=np.float32))
        back = pipeline.combine(pipeline.residual_target(x0, pipeline.residual(xhat, x0)), xhat)
        err = max(err, float(np.abs(back.data - x0.data).max()))
    return _result("residual-ensemble-identity", err, 1e-6, "<", t0)


def check_residual_antisymmetry() -> CheckResult:
    t0 = time.monotonic()
    rng = Rng(12).child(3)
    a = Tensor(rng.normal((64,), dtype=np.float32))
    b = Tensor(rng.normal((64,), dtype=np.float32))
    err = float(np.abs(pipeline.residual(a, b).data + pipeline.residual(b, a).data).max())
    return _result("residual-antisymmetry", err, 1e-300, "<", t0)


def check_combine_symmetry() -> CheckResult:
    t0 = time.monotonic()
    rng = Rng(13).child(4)
    a = Tensor(rng.normal((64,), dtype=np.float32))
    b = Tensor(rng.normal((64,), dtype=np.float32))
    comm = float(np.abs(pipeline.combine(a, b).data - pipeline.combine(b, a).data).max())
    idem = float(np.abs(pipeline.combine(a, a).data - a.data).max())
    return _result("combine-symmetry", max(comm, idem), 1e-300, "<", t0)


def check_restoration_target() -> CheckResult:
    t0 = time.monotonic()
    rng = Rng(14).child(5)
    i0 = Tensor(rng.normal((32,), dtype=np.float32))
    x0 = Tensor(rng.normal((32,), dtype=np.float32))
    xbar0 = pipeline.residual_target(x0, pipeline.direct_residual(i0, x0))
    # x0 - (i0 - x0) and 2*x0 - i0 round differently by at most an ulp each
    err = float(np.abs(xbar0.data - (2.0 * x0.data - i0.data)).max())
    return _result("restoration-target-identity", err, 1e-6, "<", t0)


def check_ensemble_error_halving() -> CheckResult:
    t0 = time.monotonic()
    rng = Rng(15).child(6)
    err = 0.0
    for _ in range(20):
        x0 = rng.normal((128,), dtype=np.float64)
        xhat = rng.normal((128,), dtype=np.float64)
        estimate = rng.normal((128,), dtype=np.float64)  # imperfect diffusion output
        xbar_true = 2.0 * x0 - xhat
        combined = pipeline.combine(Tensor(estimate), Tensor(xhat)).data
        lhs = np.linalg.norm(combined - x0)
        rhs = 0.5 * np.linalg.norm(estimate - xbar_true)
        err = max(err, abs(lhs - rhs) / max(rhs, 1e-12))
    return _result("ensemble-error-halving", err, 1e-6, "<", t0)


def oracle_chain(x_bar0: np.ndarray, sched: Schedule, start: np.ndarray) -> np.ndarray:
    """Reverse chain with the oracle noise model and z = 0.

    The oracle returns the exact noise that places the current x_t on the
    closed-form line through x_bar0, so the chain must walk back to x_bar0.
    """
    sqrt_ab = np.sqrt(sched.alpha_bar)
    sqrt_1ab = np.sqrt(1.0 - sched.alpha_bar)

    def oracle(x_t: Tensor, t: int) -> Tensor:
        return Tensor((x_t.data - sqrt_ab[t - 1] * x_bar0) / sqrt_1ab[t - 1])

    x = Tensor(start.copy())
    zero = Tensor(np.zeros_like(start))
    for t in range(sched.T, 1, -1):
        x = diffusion.reverse_step(x, oracle(x, t), t, zero, sched)
    return diffusion.final_step(x, oracle(x, 1), sched).data


def check_oracle_chain_recovery() -> CheckResult:
    """Full reverse chain + ensemble combination against known ground truth."""
    t0 = time.monotonic()
    sched = make_schedule(5)
    rng = Rng(16).child(7)
    x0 = rng.normal((4, 1, 8, 8), dtype=np.float64)
    xhat = np.clip(rng.normal((4, 1, 8, 8), dtype=np.float64), -1, 1)
    xbar0 = 2.0 * x0 - xhat
    start = rng.normal(x0.shape, dtype=np.float64)
    recovered = oracle_chain(xbar0, sched, start)
    combined = pipeline.combine(Tensor(recovered), Tensor(xhat)).data
    err = float(np.abs(combined - x0).max())
    return _result("oracle-chain-recovery", err, 1e-3, "<", t0)


def check_dice_iou_identity() -> CheckResult:
    t0 = time.monotonic()
    rng = Rng(17).child(8)
    err = 0.0
    for _ in range(50):
        a = np.where(rng.uniform((16, 16)) > 0.5, 1.0, -1.0)
        b = np.where(rng.uniform((16, 16)) > 0.5, 1.0, -1.0)
        i = metrics.iou(a, b)
        d = metrics.dice(a, b)
        err = max(err, abs(d - 2.0 * i / (1.0 + i)))
    empty = -np.ones((8, 8))
    if metrics.iou(empty, empty) != 1.0 or metrics.dice(empty, empty) != 1.0:
        err = max(err, 1.0)
    return _result("dice-iou-identity", err, 1e-12, "<", t0)


def check_final_step_inversion() -> CheckResult:
    """At t=1 the reverse step must invert the forward step exactly
    (alpha_bar_1 == alpha_1, and the step adds no noise)."""
    t0 = time.monotonic()
    err = 0.0
    for t_total in (2, 5, 100):
        sched = make_schedule(t_total)
        rng = Rng(18).child(9, t_total)
        xbar0 = Tensor(rng.normal((256,), dtype=np.float64))
        eps = Tensor(rng.normal((256,), dtype=np.float64))
        x1 = diffusion.q_sample_closed(xbar0, 1, eps, sched)
        back = diffusion.final_step(x1, eps, sched)
        err = max(err, float(np.abs(back.data - xbar0.data).max()))
    return _result("final-step-inversion", err, 1e-12, "<", t0)


def check_time_embedding_live() -> CheckResult:
    t0 = time.monotonic()
    rng = Rng(19).child(10)
    den = Denoiser(rng, base_channels=4, time_embed_dim=8)
    x = Tensor(rng.normal((2, 1, 8, 8), dtype=np.float32))
    cond = Tensor(rng.normal((2, 1, 8, 8), dtype=np.float32))
    a = den.forward(x, cond, 1).data
    b = den.forward(x, cond, 100).data
    diff = float(np.abs(a - b).max())
    return _result("time-embedding-live", diff, 0.0, ">", t0)


ALL_CHECKS = (
    check_schedule_endpoints,
    check_schedule_linearity,
    check_alpha_bar_recurrence,
    check_first_step_variance_zero,
    check_noising_moments,
    check_posterior_mean_identity,
    check_residual_ensemble_identity,
    check_residual_antisymmetry,
    check_combine_symmetry,
    check_restoration_target,
    check_ensemble_error_halving,
    check_oracle_chain_recovery,
    check_dice_iou_identity,
    check_final_step_inversion,
    check_time_embedding_live,
)


def run_all() -> list:
    return [fn() for fn in ALL_CHECKS]
