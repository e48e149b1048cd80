"""Optimizers over the flat weight vector: BayesBiNN, STE-Adam, Bop, Adam.

All steps consume gradients through a `grad_at(weights, batch) -> grad`
callable supplied by the training loop, so the network stays a black box.
A step mutates its state object in place. `batch` is an index array into the
training set; the training-set size N used by the BayesBiNN scale factor is
stored on the state.

BayesBiNN performs natural-parameter mirror descent on the Bernoulli
posterior: with S Monte Carlo relaxation samples per step,

    lambda <- (1 - alpha) * lambda - alpha * (mean_s s(lambda, w_b_s) * g_s - lambda_0),

where s is the floored reparametrization scale factor and lambda_0 the prior
natural parameter (zero, or the previous task's posterior in continual
learning). STE-Adam trains real weights through sign() with the
straight-through estimator and BinaryConnect-style clipping; Bop keeps a
gradient EMA per weight and flips signs on a hysteresis threshold; Adam is the
standard full-precision baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bernoulli import relax, sample_gumbel_noise, scale_factor, sign_pm1
from .exceptions import OptimizerError
from .linalg import Rng

__all__ = [
    "AdamState",
    "BayesBiNNState",
    "BopState",
    "Constant",
    "Cosine",
    "Geometric",
    "StepDecay",
    "SteAdamState",
    "adam_step",
    "bayesbinn_step",
    "bop_step",
    "hyst1",
    "hyst2",
    "init_lambda",
    "lr_at",
    "ste_adam_step",
]


# ---------------------------------------------------------------------------
# learning-rate schedules, evaluated at epoch granularity


@dataclass(frozen=True)
class Constant:
    alpha0: float


@dataclass(frozen=True)
class Cosine:
    """alpha(e) = alphaT + 0.5*(alpha0 - alphaT)*(1 + cos(pi * e / total))."""

    alpha0: float
    alphaT: float
    total: int


@dataclass(frozen=True)
class Geometric:
    """alpha(e) = alpha0 * (alphaT / alpha0) ** (e / total).

    Log-linear interpolation hitting alpha0 at epoch 0 and alphaT at `total`;
    the midpoint is the geometric mean sqrt(alpha0 * alphaT).
    """

    alpha0: float
    alphaT: float
    total: int


@dataclass(frozen=True)
class StepDecay:
    """alpha(e) = alpha0 * decay ** floor(e / interval)."""

    alpha0: float
    decay: float
    interval: int


Schedule = Constant | Cosine | Geometric | StepDecay


def lr_at(schedule: Schedule, epoch: int) -> float:
    """Learning rate at integer epoch `epoch` (0-based)."""
    e = int(epoch)
    if e < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if isinstance(schedule, Constant):
        _check_pos(schedule.alpha0)
        return schedule.alpha0
    if isinstance(schedule, Cosine):
        _check_pos(schedule.alpha0, schedule.alphaT)
        frac = min(e / schedule.total, 1.0)
        return schedule.alphaT + 0.5 * (schedule.alpha0 - schedule.alphaT) * (
            1.0 + math.cos(math.pi * frac)
        )
    if isinstance(schedule, Geometric):
        _check_pos(schedule.alpha0, schedule.alphaT)
        frac = min(e / schedule.total, 1.0)
        return schedule.alpha0 * (schedule.alphaT / schedule.alpha0) ** frac
    if isinstance(schedule, StepDecay):
        _check_pos(schedule.alpha0)
        return schedule.alpha0 * schedule.decay ** (e // schedule.interval)
    raise TypeError(f"unknown schedule {type(schedule).__name__}")


def _check_pos(*vals):
    for v in vals:
        if not v > 0.0:
            raise ValueError(f"learning rates must be > 0, got {v}")


# ---------------------------------------------------------------------------
# BayesBiNN


def init_lambda(n: int, scale: float, rng: Rng) -> np.ndarray:
    """Initial natural parameters: +-scale, sign drawn uniformly per weight."""
    if not scale > 0.0:
        raise ValueError(f"init scale must be > 0, got {scale}")
    return scale * rng.signs(n)


@dataclass
class BayesBiNNState:
    lam: np.ndarray
    prior_lam: np.ndarray
    tau: float
    n_train: int
    mc_samples: int
    schedule: Schedule
    rng: Rng
    step_count: int = 0
    momentum_beta: float = 0.0
    momentum: np.ndarray | None = None

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lam.shape != self.prior_lam.shape:
            raise ValueError("lam and prior_lam must have the same shape")
        if not 0.0 <= self.momentum_beta < 1.0:
            raise ValueError(
                f"momentum_beta must be in [0, 1), got {self.momentum_beta}"
            )
        if self.momentum_beta > 0.0 and self.momentum is None:
            self.momentum = np.zeros_like(self.lam)


def bayesbinn_step(state: BayesBiNNState, grad_at, batch, epoch: int) -> None:
    """One posterior update from one minibatch (S relaxation samples)."""
    alpha = lr_at(state.schedule, epoch)
    w = state.lam.shape[0]
    acc = np.zeros(w)
    for _ in range(state.mc_samples):
        delta = sample_gumbel_noise(state.rng, w)
        w_b = relax(state.lam, delta, state.tau)
        g = np.asarray(grad_at(w_b, batch), dtype=np.float64)
        if not np.isfinite(g).all():
            raise OptimizerError(
                f"non-finite gradient in bayesbinn step {state.step_count}"
            )
        acc += scale_factor(state.lam, w_b, state.tau, state.n_train) * g
    acc /= state.mc_samples
    if state.momentum_beta > 0.0:
        # Smoothed variant: the update direction (scaled gradient plus the
        # pull toward the prior) passes through a bias-corrected exponential
        # moving average before being applied.  With momentum_beta = 0 the
        # two branches coincide.
        b = state.momentum_beta
        t = state.step_count + 1
        state.momentum = b * state.momentum + (1.0 - b) * (
            acc + state.lam - state.prior_lam
        )
        state.lam = state.lam - alpha * state.momentum / (1.0 - b**t)
    else:
        state.lam = (1.0 - alpha) * state.lam - alpha * (acc - state.prior_lam)
    state.step_count += 1


# ---------------------------------------------------------------------------
# STE-Adam


@dataclass
class SteAdamState:
    w_r: np.ndarray
    schedule: Schedule
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: bool = True
    weight_clip: bool = True
    m: np.ndarray = None
    v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.w_r)
        if self.v is None:
            self.v = np.zeros_like(self.w_r)


def ste_adam_step(state: SteAdamState, grad_at, batch, epoch: int) -> None:
    """Straight-through step: gradient at sign(w_r), Adam update on w_r.

    With grad_clip, coordinates with |w_r| >= 1 receive zero gradient
    (identity straight-through inside the clip region only); with
    weight_clip, w_r is clamped back to [-1, 1] after the step.
    """
    alpha = lr_at(state.schedule, epoch)
    w_b = sign_pm1(state.w_r)
    g = np.asarray(grad_at(w_b, batch), dtype=np.float64)
    if not np.isfinite(g).all():
        raise OptimizerError(f"non-finite gradient in ste_adam step {state.step_count}")
    if state.grad_clip:
        g = np.where(np.abs(state.w_r) >= 1.0, 0.0, g)
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g**2
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    state.w_r = state.w_r - alpha * m_hat / (np.sqrt(v_hat) + state.adam_eps)
    if state.weight_clip:
        state.w_r = np.clip(state.w_r, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Bop


def hyst1(w_r, w_b, gamma: float) -> np.ndarray:
    """Flip w_b where |w_r| > gamma and sign(w_r) == sign(w_b)."""
    w_r = np.asarray(w_r, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    flip = (np.abs(w_r) > gamma) & (sign_pm1(w_r) == sign_pm1(w_b))
    return np.where(flip, -w_b, w_b)


def hyst2(w_r, w_b, gamma: float) -> np.ndarray:
    """Flip w_b where |w_r| > gamma and sign(w_r) == -sign(w_b).

    Mirror image of `hyst1`: hyst2(x, b, gamma) == hyst1(-x, b, gamma).
    """
    w_r = np.asarray(w_r, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    flip = (np.abs(w_r) > gamma) & (sign_pm1(w_r) == -sign_pm1(w_b))
    return np.where(flip, -w_b, w_b)


@dataclass
class BopState:
    w_b: np.ndarray
    w_r: np.ndarray  # gradient EMA ("momentum") per weight
    threshold: float
    momentum_rate: float
    threshold_schedule: Schedule | None = None
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.momentum_rate < 1.0:
            raise ValueError(
                f"momentum_rate must be in (0, 1), got {self.momentum_rate}"
            )
        if not self.threshold > 0.0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")


def bop_step(state: BopState, grad_at, batch) -> None:
    """EMA the gradient into w_r, then apply the hysteresis flip rule.

    w_r <- (1 - momentum_rate) * w_r - momentum_rate * g, followed by
    flipping w_b_j exactly when |w_r_j| > threshold and sign(w_r_j) ==
    -sign(w_b_j). If a threshold schedule is configured, the training loop
    refreshes `state.threshold` at each epoch boundary.
    """
    g = np.asarray(grad_at(state.w_b, batch), dtype=np.float64)
    if not np.isfinite(g).all():
        raise OptimizerError(f"non-finite gradient in bop step {state.step_count}")
    state.w_r = (1.0 - state.momentum_rate) * state.w_r - state.momentum_rate * g
    state.w_b = hyst2(state.w_r, state.w_b, state.threshold)
    state.step_count += 1


# ---------------------------------------------------------------------------
# full-precision Adam baseline


@dataclass
class AdamState:
    w: np.ndarray
    schedule: Schedule
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.w)
        if self.v is None:
            self.v = np.zeros_like(self.w)


def adam_step(state: AdamState, grad_at, batch, epoch: int) -> None:
    alpha = lr_at(state.schedule, epoch)
    g = np.asarray(grad_at(state.w, batch), dtype=np.float64)
    if not np.isfinite(g).all():
        raise OptimizerError(f"non-finite gradient in adam step {state.step_count}")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g**2
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    state.w = state.w - alpha * m_hat / (np.sqrt(v_hat) + state.adam_eps)
