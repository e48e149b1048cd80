"""Posterior predictions: mode weights or Monte Carlo averaging over samples.

Mode prediction plugs in the most probable binary weights sign(tanh(lambda))
(sign(0) := +1). Mean prediction draws C exact binary weight samples from the
posterior and averages class probabilities after the softmax (for regression:
averages raw outputs and reports the across-sample variance). Per-sample RNG
substreams are derived deterministically from (seed, sample index), so the
result does not depend on evaluation order.
"""

from __future__ import annotations

import numpy as np

from .bernoulli import sample_binary, sign_pm1
from .linalg import Rng, as_matrix, softmax_rows
from .network import BnState, NetworkSpec, forward

__all__ = [
    "evaluate_accuracy",
    "evaluate_mse",
    "mode_weights",
    "predict_mean",
    "predict_mean_outputs",
    "predict_mode",
]


def mode_weights(lam) -> np.ndarray:
    """Most probable binary weights: sign(tanh(lambda)) with sign(0) := +1."""
    return sign_pm1(np.tanh(np.asarray(lam, dtype=np.float64)))


def _eval_outputs(spec: NetworkSpec, w, x, bn: BnState | None):
    out, _ = forward(spec, w, x, mode="eval", bn=bn)
    return out


def predict_mode(lam, spec: NetworkSpec, x, bn: BnState | None = None) -> np.ndarray:
    """Eval-mode forward at the mode weights.

    Returns class probabilities (softmax of the logits) for cross-entropy
    networks and raw outputs for regression networks.
    """
    out = _eval_outputs(spec, mode_weights(lam), as_matrix(x, "x"), bn)
    if spec.loss == "cross_entropy":
        return softmax_rows(out)
    return out


def predict_mean(
    lam,
    spec: NetworkSpec,
    x,
    n_samples: int,
    seed: int,
    bn: BnState | None = None,
) -> np.ndarray:
    """Average class probabilities over `n_samples` posterior weight draws.

    Averaging happens after the softmax, so the result is a proper
    probability table. n_samples must be >= 1; callers treat 0 as "use the
    mode" before getting here.
    """
    if spec.loss != "cross_entropy":
        raise ValueError("predict_mean is for classification networks; "
                         "use predict_mean_outputs for regression")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    lam = np.asarray(lam, dtype=np.float64)
    x = as_matrix(x, "x")
    acc = np.zeros((x.shape[0], spec.out_dim))
    for c in range(n_samples):
        w = sample_binary(lam, Rng.for_stream(seed, c))
        acc += softmax_rows(_eval_outputs(spec, w, x, bn))
    return acc / n_samples


def predict_mean_outputs(
    lam,
    spec: NetworkSpec,
    x,
    n_samples: int,
    seed: int,
    bn: BnState | None = None,
):
    """Regression analogue of `predict_mean`: (mean, variance) over samples.

    Variance is the population variance across the sampled networks'
    outputs — the spread of the predictive band, zero when n_samples == 1.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    lam = np.asarray(lam, dtype=np.float64)
    x = as_matrix(x, "x")
    outs = np.empty((n_samples, x.shape[0], spec.out_dim))
    for c in range(n_samples):
        w = sample_binary(lam, Rng.for_stream(seed, c))
        outs[c] = _eval_outputs(spec, w, x, bn)
    return outs.mean(axis=0), outs.var(axis=0)


def evaluate_accuracy(probs, labels) -> float:
    """Fraction of rows whose argmax matches the label (ties -> lowest index)."""
    p = as_matrix(probs, "probs")
    labels = np.asarray(labels)
    if labels.shape != (p.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {p.shape[0]} rows")
    return float((p.argmax(axis=1) == labels).mean())


def evaluate_mse(outputs, targets) -> float:
    """Mean squared error over all entries (same contract as the loss)."""
    o = as_matrix(outputs, "outputs")
    t = as_matrix(targets, "targets")
    if o.shape != t.shape:
        raise ValueError(f"outputs {o.shape} and targets {t.shape} differ")
    return float(((o - t) ** 2).mean())
