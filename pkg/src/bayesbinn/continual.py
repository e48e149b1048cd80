"""Permuted-pixel task sequences and variational continual learning.

Each task applies a fixed pixel permutation to the features of the same base
corpus (task 0 is the identity). Training runs sequentially; the posterior's
natural parameters carry over from task to task (warm start) in both modes,
and the chaining flag only controls the prior inside the update:

    chained:   lambda <- (1 - alpha) lambda - alpha (s * g - lambda_prev_task)
    unchained: lambda <- (1 - alpha) lambda - alpha (s * g - 0)

so one run per flag isolates exactly the effect of carrying the previous
posterior as the prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bernoulli import entropy_bits, p_from_lambda
from .datasets import Dataset
from .linalg import Rng
from .network import NetworkSpec, init_bn_state
from .optimizers import BayesBiNNState, Cosine, init_lambda
from .predictor import evaluate_accuracy, predict_mean, predict_mode

__all__ = [
    "ContinualSettings",
    "PermutationSpec",
    "Task",
    "TaskMetrics",
    "entropy_histogram",
    "make_permuted_tasks",
    "run_vcl",
]


@dataclass(frozen=True)
class PermutationSpec:
    """A task's fixed feature permutation; task 0 is the identity."""

    task_index: int
    perm: np.ndarray
    seed: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x[:, self.perm]


@dataclass
class Task:
    spec: PermutationSpec
    train: Dataset
    test: Dataset


def make_permuted_tasks(train: Dataset, test: Dataset, n_tasks: int, seed: int):
    """n_tasks copies of (train, test) under per-task pixel permutations.

    The permutation for task t > 0 is drawn from a substream of `seed`;
    task 0 keeps the original pixel order. Labels are untouched and the same
    permutation is applied to train and test features.
    """
    if n_tasks < 1:
        raise ValueError(f"n_tasks must be >= 1, got {n_tasks}")
    if train.x.shape[1] != test.x.shape[1]:
        raise ValueError("train and test feature widths differ")
    d = train.x.shape[1]
    tasks = []
    for t in range(n_tasks):
        if t == 0:
            perm = np.arange(d)
        else:
            perm = Rng.for_stream(seed, 505, t).permutation(d)
        pspec = PermutationSpec(t, perm, seed)
        tasks.append(
            Task(pspec, Dataset(pspec.apply(train.x), train.y),
                 Dataset(pspec.apply(test.x), test.y))
        )
    return tasks


def entropy_histogram(lam, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of per-weight probabilities p = sigmoid(2 lambda) over [0, 1].

    Returns (counts, bin_edges); counts sum to the weight count.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    return np.histogram(p_from_lambda(lam), bins=bins, range=(0.0, 1.0))


@dataclass
class ContinualSettings:
    """Optimizer and evaluation settings for one sequential run."""

    epochs_per_task: int
    batch_size: int
    lr_start: float
    lr_end: float
    tau: float
    mc_train: int
    init_scale: float
    mc_eval: int
    use_prior_chaining: bool
    seed: int
    entropy_bins: int = 20


@dataclass
class TaskMetrics:
    """Accuracy matrix and posterior summaries after each task.

    accuracy[t, s] is the accuracy on task s's test set after finishing task
    t (NaN for s > t). entropy[t] is the posterior's mean entropy in bits
    after task t; histograms[t] the per-weight probability histogram.
    """

    accuracy: np.ndarray
    entropy: np.ndarray
    histograms: list = field(default_factory=list)


def run_vcl(tasks, spec: NetworkSpec, cfg: ContinualSettings,
            on_epoch=None) -> TaskMetrics:
    """Train the posterior sequentially over `tasks` and score all seen tasks."""
    from .train import fit_network  # local import to avoid a module cycle

    n_tasks = len(tasks)
    w = spec.weight_count
    lam = init_lambda(w, cfg.init_scale, Rng.for_stream(cfg.seed, 1))
    bn = init_bn_state(spec)

    acc = np.full((n_tasks, n_tasks), np.nan)
    ent = np.zeros(n_tasks)
    hists = []

    for t, task in enumerate(tasks):
        prior = lam.copy() if (cfg.use_prior_chaining and t > 0) else np.zeros(w)
        state = BayesBiNNState(
            lam=lam,
            prior_lam=prior,
            tau=cfg.tau,
            n_train=task.train.n,
            mc_samples=cfg.mc_train,
            schedule=Cosine(cfg.lr_start, cfg.lr_end, cfg.epochs_per_task),
            rng=Rng.for_stream(cfg.seed, 2, t),
        )
        cb = (lambda e, loss, _t=t: on_epoch(_t, e, loss)) if on_epoch else None
        fit_network(spec, state, task.train, cfg.epochs_per_task, cfg.batch_size,
                    cfg.seed + t, bn, cb)
        lam = state.lam

        ent[t] = entropy_bits(lam)
        hists.append(entropy_histogram(lam, cfg.entropy_bins))
        for s in range(t + 1):
            if cfg.mc_eval > 0:
                probs = predict_mean(lam, spec, tasks[s].test.x, cfg.mc_eval,
                                     cfg.seed + 6007 * (s + 1), bn)
            else:
                probs = predict_mode(lam, spec, tasks[s].test.x, bn)
            acc[t, s] = evaluate_accuracy(probs, tasks[s].test.y)
    return TaskMetrics(acc, ent, hists)
