"""Mean-field distribution over signed binary weights and its relaxation.

Each weight w_j in {-1, +1} carries an independent Bernoulli posterior with
success probability p_j = P(w_j = +1), held in natural-parameter form

    lambda_j = 0.5 * log(p_j / (1 - p_j)),   mu_j = E[w_j] = tanh(lambda_j).

Training never touches p_j directly; everything runs on lambda. Sampling uses
the Gumbel-softmax style relaxation

    w_b = tanh((lambda + delta) / tau),
    delta = 0.5 * log(eps / (1 - eps)),  eps ~ U(0, 1),

which maps a Concrete (relaxed Bernoulli) variable x in (0, 1) to (-1, 1) via
w_b = 2x - 1 and recovers exact sign sampling as tau -> 0. The reparametrized
gradient of w_b with respect to mu is the chain factor

    (1 - w_b^2) / (tau * (1 - tanh(lambda)^2)),

whose floored, N-scaled version (`scale_factor`) premultiplies minibatch
gradients in the optimizer update.
"""

from __future__ import annotations

import numpy as np

from .linalg import Rng, as_vector

__all__ = [
    "FLOOR_EPS",
    "chain_factor",
    "concrete_pdf",
    "entropy_bits",
    "lambda_from_p",
    "mu_from_lambda",
    "p_from_lambda",
    "relax",
    "sample_binary",
    "sample_gumbel_noise",
    "scale_factor",
    "sign_pm1",
]

# Additive floor applied to both numerator and denominator of scale_factor so
# the update stays finite when tanh saturates at float64 precision.
FLOOR_EPS = 1e-10


def sign_pm1(x) -> np.ndarray:
    """Elementwise sign into {-1.0, +1.0}, with sign(0) := +1."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, 1.0, -1.0)


def lambda_from_p(p) -> np.ndarray:
    """Natural parameters 0.5*log(p/(1-p)) for probabilities strictly in (0,1)."""
    p = as_vector(p, "p")
    if (p <= 0.0).any() or (p >= 1.0).any():
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return 0.5 * np.log(p / (1.0 - p))


def p_from_lambda(lam) -> np.ndarray:
    """P(w=+1) = sigmoid(2*lambda). Saturates to exactly 0.0/1.0 for |lambda|>~19."""
    lam = as_vector(lam, "lam")
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-2.0 * lam))


def mu_from_lambda(lam) -> np.ndarray:
    """Posterior mean E[w] = tanh(lambda)."""
    return np.tanh(as_vector(lam, "lam"))


def sample_gumbel_noise(rng: Rng, n: int) -> np.ndarray:
    """n draws of delta = 0.5*log(eps/(1-eps)), eps ~ U(0,1) open interval.

    This is half the difference of two standard Gumbels, i.e. half a standard
    logistic variable: symmetric about 0 with median 0.
    """
    eps = rng.uniform_open(n)
    return 0.5 * np.log(eps / (1.0 - eps))


def relax(lam, delta, tau: float) -> np.ndarray:
    """Relaxed binary weights w_b = tanh((lambda + delta) / tau), in (-1, 1).

    As tau -> 0 this saturates to sign(lambda + delta) exactly in float64.
    """
    lam = as_vector(lam, "lam")
    delta = as_vector(delta, "delta")
    if lam.shape != delta.shape:
        raise ValueError(f"lam and delta differ in shape: {lam.shape} vs {delta.shape}")
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    with np.errstate(over="ignore"):
        return np.tanh((lam + delta) / tau)


def chain_factor(lam, w_b, tau: float) -> np.ndarray:
    """Unfloored reparametrization derivative d w_b / d mu.

    Equals (1 - w_b^2) / (tau * (1 - tanh(lambda)^2)). Raises OverflowError
    when the denominator underflows to exactly 0 (|lambda| >= ~19.07 in
    float64), where the true value is infinite.
    """
    lam = as_vector(lam, "lam")
    w_b = np.asarray(w_b, dtype=np.float64)
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    denom = tau * (1.0 - np.tanh(lam) ** 2)
    if (denom == 0.0).any():
        raise OverflowError(
            "chain factor overflows to infinity: 1 - tanh(lambda)^2 underflowed "
            "to 0 (|lambda| too large for an unfloored evaluation)"
        )
    return (1.0 - w_b**2) / denom


def scale_factor(lam, w_b, tau: float, n: int) -> np.ndarray:
    """Gradient premultiplier s = N * (1 - w_b^2 + eps) / (tau * (1 - tanh(lambda)^2 + eps)).

    The additive floor ``FLOOR_EPS`` on both numerator and denominator keeps s
    finite and positive even when tanh saturates (tau down to 1e-10); N is the
    training-set size that scales the minibatch-mean gradient up to a full-sum
    estimate.
    """
    lam = as_vector(lam, "lam")
    w_b = np.asarray(w_b, dtype=np.float64)
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    n = int(n)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    num = 1.0 - w_b**2 + FLOOR_EPS
    denom = tau * (1.0 - np.tanh(lam) ** 2 + FLOOR_EPS)
    return n * num / denom


def sample_binary(lam, rng: Rng) -> np.ndarray:
    """One exact sample w in {-1,+1}^W with P(w_j = +1) = sigmoid(2*lambda_j)."""
    lam = as_vector(lam, "lam")
    u = rng.uniform_open(lam.shape[0])
    return np.where(u < p_from_lambda(lam), 1.0, -1.0)


def concrete_pdf(x, lam: float, tau: float) -> np.ndarray:
    """Density of the relaxed Bernoulli variable x = (w_b + 1)/2 on (0, 1).

    p(x) = tau * e^{2 lambda} * x^{-tau-1} * (1-x)^{-tau-1}
           / (e^{2 lambda} * x^{-tau} + (1-x)^{-tau})^2,

    evaluated in log space for stability. Integrates to 1 over (0, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    lam = float(lam)
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if (x <= 0.0).any() or (x >= 1.0).any():
        raise ValueError("x must lie strictly inside (0, 1)")
    log_x = np.log(x)
    log_1mx = np.log1p(-x)
    log_num = np.log(tau) + 2.0 * lam - (tau + 1.0) * (log_x + log_1mx)
    log_den = 2.0 * np.logaddexp(2.0 * lam - tau * log_x, -tau * log_1mx)
    return np.exp(log_num - log_den)


def entropy_bits(lam) -> float:
    """Mean binary entropy of the posterior in bits, with 0*log(0) := 0.

    1.0 at lambda = 0 (uniform), -> 0 as |lambda| grows.
    """
    p = p_from_lambda(lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p))
    t = np.where(np.isfinite(t), t, 0.0)
    return float(t.mean())
