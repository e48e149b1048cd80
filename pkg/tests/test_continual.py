"""Permuted-task construction and the sequential posterior-chaining driver."""

import numpy as np
import pytest

from bayesbinn.bernoulli import p_from_lambda
from bayesbinn.continual import (
    ContinualSettings,
    entropy_histogram,
    make_permuted_tasks,
    run_vcl,
)
from bayesbinn.datasets import Dataset
from bayesbinn.network import Activation, FullyConnected, NetworkSpec


def toy_corpus(n_train=40, n_test=16, d=12, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    xt = rng.normal(size=(n_train, d))
    xv = rng.normal(size=(n_test, d))
    return (Dataset(xt, rng.integers(0, classes, n_train)),
            Dataset(xv, rng.integers(0, classes, n_test)))


class TestMakePermutedTasks:
    def test_task_zero_is_identity(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 3, seed=7)
        np.testing.assert_array_equal(tasks[0].spec.perm, np.arange(12))
        np.testing.assert_array_equal(tasks[0].train.x, train.x)
        np.testing.assert_array_equal(tasks[0].test.x, test.x)

    def test_later_tasks_permute_columns(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 3, seed=7)
        for t in (1, 2):
            perm = tasks[t].spec.perm
            assert sorted(perm) == list(range(12))
            np.testing.assert_array_equal(tasks[t].train.x, train.x[:, perm])
            np.testing.assert_array_equal(tasks[t].test.x, test.x[:, perm])
        assert not np.array_equal(tasks[1].spec.perm, tasks[2].spec.perm)

    def test_labels_untouched(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 3, seed=7)
        for task in tasks:
            np.testing.assert_array_equal(task.train.y, train.y)
            np.testing.assert_array_equal(task.test.y, test.y)

    def test_deterministic_in_seed(self):
        train, test = toy_corpus()
        a = make_permuted_tasks(train, test, 3, seed=7)
        b = make_permuted_tasks(train, test, 3, seed=7)
        c = make_permuted_tasks(train, test, 3, seed=8)
        np.testing.assert_array_equal(a[2].spec.perm, b[2].spec.perm)
        assert not np.array_equal(a[1].spec.perm, c[1].spec.perm)

    def test_validation(self):
        train, test = toy_corpus()
        with pytest.raises(ValueError, match="n_tasks"):
            make_permuted_tasks(train, test, 0, seed=7)
        narrow = Dataset(test.x[:, :5], test.y)
        with pytest.raises(ValueError, match="feature widths"):
            make_permuted_tasks(train, narrow, 2, seed=7)


class TestEntropyHistogram:
    def test_uniform_posterior_lands_in_central_bin(self):
        counts, edges = entropy_histogram(np.zeros(100), bins=20)
        # p = sigmoid(0) = 0.5 for every weight
        assert counts.sum() == 100
        assert counts[10] == 100  # bin [0.5, 0.55)
        np.testing.assert_allclose(edges, np.linspace(0.0, 1.0, 21))

    def test_saturated_posterior_fills_extreme_bins(self):
        lam = np.array([-50.0] * 30 + [50.0] * 70)
        counts, _ = entropy_histogram(lam, bins=10)
        assert counts[0] == 30 and counts[-1] == 70
        assert counts[1:-1].sum() == 0

    def test_counts_sum_to_weight_count(self):
        lam = np.linspace(-4, 4, 333)
        counts, _ = entropy_histogram(lam, bins=7)
        assert counts.sum() == 333
        # histogram is over p, which must stay within [0, 1]
        assert np.all((p_from_lambda(lam) >= 0) & (p_from_lambda(lam) <= 1))

    def test_bins_validation(self):
        with pytest.raises(ValueError, match="bins"):
            entropy_histogram(np.zeros(3), bins=0)


def settings(chained, **overrides):
    base = dict(epochs_per_task=2, batch_size=10, lr_start=1e-3, lr_end=1e-5,
                tau=1e-2, mc_train=1, init_scale=0.01, mc_eval=0,
                use_prior_chaining=chained, seed=5, entropy_bins=8)
    base.update(overrides)
    return ContinualSettings(**base)


SPEC = NetworkSpec(
    (FullyConnected(12, 16), Activation("tanh"), FullyConnected(16, 3)),
    "cross_entropy",
)


class TestRunVcl:
    def test_metric_shapes_and_nan_structure(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 3, seed=7)
        metrics = run_vcl(tasks, SPEC, settings(chained=True))
        assert metrics.accuracy.shape == (3, 3)
        assert metrics.entropy.shape == (3,)
        assert len(metrics.histograms) == 3
        for t in range(3):
            assert np.all(np.isfinite(metrics.accuracy[t, :t + 1]))
            assert np.all(np.isnan(metrics.accuracy[t, t + 1:]))
            counts, _ = metrics.histograms[t]
            assert counts.size == 8 and counts.sum() == SPEC.weight_count

    def test_single_task_chained_equals_unchained(self):
        # with one task there is no previous posterior, so the chaining flag
        # cannot change anything
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 1, seed=7)
        a = run_vcl(tasks, SPEC, settings(chained=True))
        b = run_vcl(tasks, SPEC, settings(chained=False))
        np.testing.assert_array_equal(a.accuracy, b.accuracy)
        np.testing.assert_array_equal(a.entropy, b.entropy)

    def test_deterministic(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 2, seed=7)
        a = run_vcl(tasks, SPEC, settings(chained=True))
        b = run_vcl(tasks, SPEC, settings(chained=True))
        np.testing.assert_array_equal(a.accuracy, b.accuracy)
        np.testing.assert_array_equal(a.entropy, b.entropy)

    def test_chaining_flag_changes_later_tasks_only(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 2, seed=7)
        a = run_vcl(tasks, SPEC, settings(chained=True))
        b = run_vcl(tasks, SPEC, settings(chained=False))
        # task 0 training is identical (prior is zero either way)
        assert a.accuracy[0, 0] == b.accuracy[0, 0]
        assert a.entropy[0] == b.entropy[0]
        # after task 1 the runs have diverged
        assert a.entropy[1] != b.entropy[1]

    def test_on_epoch_callback(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 2, seed=7)
        seen = []
        run_vcl(tasks, SPEC, settings(chained=True),
                on_epoch=lambda t, e, loss: seen.append((t, e)))
        assert seen == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_mc_eval_changes_scores_only_through_sampling(self):
        train, test = toy_corpus()
        tasks = make_permuted_tasks(train, test, 1, seed=7)
        mode = run_vcl(tasks, SPEC, settings(chained=True, mc_eval=0))
        mean = run_vcl(tasks, SPEC, settings(chained=True, mc_eval=5))
        # training is unaffected by the evaluation mode
        assert mode.entropy[0] == mean.entropy[0]
        assert 0.0 <= mean.accuracy[0, 0] <= 1.0
