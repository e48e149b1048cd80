"""Training pipeline: data resolution, state plumbing, run artifacts."""

import json
import math

import numpy as np
import pytest

from bayesbinn.checkpoint import load_checkpoint
from bayesbinn.config import parse_config
from bayesbinn.exceptions import ConfigError
from bayesbinn.network import init_bn_state
from bayesbinn.optimizers import (
    AdamState,
    BayesBiNNState,
    BopState,
    StepDecay,
    SteAdamState,
)
from bayesbinn.train import (
    CSV_COLUMNS,
    MetricsRecord,
    eval_weights,
    fit_network,
    init_state,
    resolve_data,
    run_eval,
    run_training,
    state_arrays,
    state_from_arrays,
    write_metrics_csv,
)

MOONS = """
[experiment]
name = tiny_moons
seed = 4
[data]
kind = two_moons
n_per_class = 40
noise_sd = 0.1
data_seed = 11
val_fraction = 0.1
bias_input = true
[network]
layers = fc(3,8), tanh, fc(8,2)
loss = cross_entropy
[training]
epochs = 2
batch_size = 18
[optimizer]
kind = bayesbinn
lr_start = 1e-3
tau = 1.0
mc_train = 1
init_scale = 10.0
[prediction]
mc_test = 0
"""


def opt_cfg(kind, extra=""):
    return parse_config(f"""
[experiment]
name = t
[data]
kind = two_moons
n_per_class = 10
val_fraction = 0
[network]
layers = fc(2,4), tanh, fc(4,2)
loss = cross_entropy
[training]
epochs = 1
batch_size = 5
[optimizer]
kind = {kind}
{extra}
""")


class TestMetricsRecord:
    def test_row_formatting(self):
        r = MetricsRecord(3, 1e-3, 0.5, 0.25, None, None, 1.0)
        assert r.row() == "3,0.001,0.5,0.25,,,1.0"

    def test_row_uses_repr_precision(self):
        r = MetricsRecord(0, 0.1 + 0.2, float("nan"), None, None, None, None)
        assert r.row() == "0,0.30000000000000004,nan,,,,"

    def test_csv_writer(self, tmp_path):
        p = tmp_path / "m.csv"
        write_metrics_csv(p, [MetricsRecord(0, 1.0, 2.0, None, None, None, None)],
                          ["a = 1", "b = two"])
        lines = p.read_text().splitlines()
        assert lines[0] == "# a = 1" and lines[1] == "# b = two"
        assert lines[2] == ",".join(CSV_COLUMNS)
        assert lines[3] == "0,1.0,2.0,,,,"


class TestResolveData:
    def test_two_moons_split_and_bias(self):
        data = resolve_data(parse_config(MOONS))
        assert data.train.n == 72 and data.val.n == 8 and data.test is None
        np.testing.assert_array_equal(data.train.x[:, -1], 1.0)
        assert data.train.x.shape[1] == 3

    def test_digits_with_subset(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BAYESBINN_CACHE", str(tmp_path))
        cfg = parse_config("""
[experiment]
name = d
[data]
kind = digits
n_train = 60
n_test = 20
data_seed = 5
train_subset = 30
val_fraction = 0.2
[network]
layers = fc(784,16), tanh, fc(16,10)
loss = cross_entropy
[training]
epochs = 1
batch_size = 8
[optimizer]
kind = bayesbinn
lr_start = 1e-3
""")
        data = resolve_data(cfg)
        # subset of 30 is drawn first, then the validation split peels 20%
        assert data.train.n == 24 and data.val.n == 6
        assert data.test.n == 20
        again = resolve_data(cfg)
        np.testing.assert_array_equal(data.train.x, again.train.x)
        np.testing.assert_array_equal(data.train.y, again.train.y)

    def test_subset_larger_than_corpus(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BAYESBINN_CACHE", str(tmp_path))
        cfg = parse_config("""
[experiment]
name = d
[data]
kind = digits
n_train = 60
n_test = 20
data_seed = 5
train_subset = 500
[network]
layers = fc(784,16), tanh, fc(16,10)
loss = cross_entropy
[training]
epochs = 1
batch_size = 8
[optimizer]
kind = bayesbinn
lr_start = 1e-3
""")
        with pytest.raises(ConfigError, match="train_subset 500 exceeds"):
            resolve_data(cfg)


class TestInitState:
    def test_bayesbinn(self):
        cfg = parse_config(MOONS)
        spec = cfg.network_spec()
        st = init_state(cfg, spec, n_train=72, epochs=2)
        assert isinstance(st, BayesBiNNState)
        assert st.lam.shape == (spec.weight_count,)
        assert set(np.unique(np.abs(st.lam))) == {10.0}
        np.testing.assert_array_equal(st.prior_lam, 0.0)
        assert st.tau == 1.0 and st.mc_samples == 1 and st.n_train == 72

    def test_ste_adam(self):
        cfg = opt_cfg("ste_adam", "lr_start = 1e-2")
        st = init_state(cfg, cfg.network_spec(), 20, 1)
        assert isinstance(st, SteAdamState)
        assert np.all(np.abs(st.w_r) < 1.0)
        assert st.beta1 == 0.9 and st.beta2 == 0.999 and st.adam_eps == 1e-8

    def test_bop_without_and_with_threshold_decay(self):
        cfg = opt_cfg("bop", "threshold = 1e-6")
        st = init_state(cfg, cfg.network_spec(), 20, 1)
        assert isinstance(st, BopState)
        assert set(np.unique(st.w_b)) <= {-1.0, 1.0}
        assert st.threshold_schedule is None
        cfg2 = opt_cfg(
            "bop", "threshold = 1e-6\nthreshold_decay = 0.5\nthreshold_interval = 3"
        )
        st2 = init_state(cfg2, cfg2.network_spec(), 20, 1)
        assert st2.threshold_schedule == StepDecay(1e-6, 0.5, 3)

    def test_adam_glorot_limits(self):
        cfg = opt_cfg("adam", "lr_start = 1e-3")
        spec = cfg.network_spec()
        st = init_state(cfg, spec, 20, 1)
        assert isinstance(st, AdamState)
        assert st.w.shape == (spec.weight_count,)
        # first layer is fc(2,4): Glorot-uniform limit sqrt(6/(2+4))
        assert np.max(np.abs(st.w[:8])) <= math.sqrt(6.0 / 6.0)


class TestStateArrays:
    def test_eval_weights_per_kind(self):
        bb = init_state(parse_config(MOONS), parse_config(MOONS).network_spec(), 10, 1)
        np.testing.assert_array_equal(eval_weights(bb), np.sign(bb.lam))
        cfg = opt_cfg("ste_adam", "lr_start = 1e-2")
        ste = init_state(cfg, cfg.network_spec(), 10, 1)
        np.testing.assert_array_equal(eval_weights(ste), np.sign(ste.w_r))
        cfg = opt_cfg("bop", "threshold = 1e-6")
        bop = init_state(cfg, cfg.network_spec(), 10, 1)
        got = eval_weights(bop)
        np.testing.assert_array_equal(got, bop.w_b)
        got[0] = 99.0  # must be a copy
        assert bop.w_b[0] != 99.0

    def test_round_trip_with_momentum_and_bn(self):
        cfg = parse_config(MOONS
                           .replace("init_scale = 10.0",
                                    "init_scale = 10.0\nmomentum = 0.9")
                           .replace("layers = fc(3,8), tanh, fc(8,2)",
                                    "layers = fc(3,8), bn, tanh, fc(8,2)"))
        spec = cfg.network_spec()
        st = init_state(cfg, spec, 72, 2)
        st.momentum = np.linspace(-1, 1, spec.weight_count)
        bn = init_bn_state(spec)
        bn.mean[1][:] = 0.25
        bn.var[1][:] = 2.0
        arrays = state_arrays(st, bn)
        assert set(arrays) == {"lam", "prior_lam", "momentum", "bn1_mean", "bn1_var"}
        header = {"optimizer": "bayesbinn", "weight_count": spec.weight_count,
                  "layers": "", "loss": spec.loss, "seed": 0, "epoch": 0,
                  "step_count": 0}
        got_arrays, got_bn, kind = state_from_arrays(header, arrays, spec)
        assert kind == "bayesbinn"
        np.testing.assert_array_equal(got_arrays["momentum"], st.momentum)
        np.testing.assert_array_equal(got_bn.mean[1], 0.25)
        np.testing.assert_array_equal(got_bn.var[1], 2.0)

    def test_momentum_absent_when_unused(self):
        cfg = parse_config(MOONS)
        st = init_state(cfg, cfg.network_spec(), 72, 2)
        assert st.momentum is None
        assert "momentum" not in state_arrays(st, init_bn_state(cfg.network_spec()))


class TestFitNetwork:
    def test_on_epoch_called_per_epoch(self):
        cfg = parse_config(MOONS)
        spec = cfg.network_spec()
        data = resolve_data(cfg)
        st = init_state(cfg, spec, data.train.n, 2)
        seen = []
        fit_network(spec, st, data.train, 2, 18, cfg.seed,
                    on_epoch=lambda e, loss: seen.append((e, loss)))
        assert [e for e, _ in seen] == [0, 1]
        assert all(np.isfinite(loss) for _, loss in seen)

    def test_zero_epochs_is_noop(self):
        cfg = parse_config(MOONS)
        spec = cfg.network_spec()
        data = resolve_data(cfg)
        st = init_state(cfg, spec, data.train.n, 0)
        lam0 = st.lam.copy()
        fit_network(spec, st, data.train, 0, 18, cfg.seed)
        np.testing.assert_array_equal(st.lam, lam0)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = parse_config(MOONS)
    return run_training(cfg, out_dir=out, quiet=True), out


class TestRunTraining:
    def test_artifacts_exist(self, run):
        _, out = run
        for name in ("metrics.csv", "checkpoint_final.bbnn",
                     "checkpoint_best.bbnn", "summary.json"):
            assert (out / name).exists(), name

    def test_records_one_per_epoch(self, run):
        result, _ = run
        assert [r.epoch for r in result.records] == [0, 1]
        assert result.final_report["metric_name"] == "accuracy"
        assert 0.0 <= result.final_report["metric"] <= 1.0
        assert "wall_seconds" in result.final_report

    def test_metrics_csv_shape(self, run):
        _, out = run
        lines = (out / "metrics.csv").read_text().splitlines()
        config_lines = [l for l in lines if l.startswith("# ")]
        body = [l for l in lines if not l.startswith("# ")]
        assert "# experiment.name = tiny_moons" in config_lines
        assert body[0] == ",".join(CSV_COLUMNS)
        assert len(body) == 1 + 2
        first = body[1].split(",")
        assert first[0] == "0" and first[5] == ""  # no test split

    def test_best_checkpoint_header(self, run):
        result, out = run
        header, arrays = load_checkpoint(out / "checkpoint_best.bbnn")
        assert header["epoch"] == result.best_epoch + 1
        assert header["optimizer"] == "bayesbinn"
        assert "lam" in arrays and "prior_lam" in arrays

    def test_summary_json(self, run):
        result, out = run
        summary = json.loads((out / "summary.json").read_text())
        assert summary["best_epoch"] == result.best_epoch
        assert summary["final"]["metric"] == result.final_report["metric"]
        assert any(l.startswith("experiment.seed = 4") for l in summary["config"])

    def test_rerun_metrics_byte_identical(self, run, tmp_path):
        _, out = run
        run_training(parse_config(MOONS), out_dir=tmp_path, quiet=True)
        assert (tmp_path / "metrics.csv").read_bytes() == \
            (out / "metrics.csv").read_bytes()

    def test_zero_epoch_run(self, tmp_path):
        cfg = parse_config(MOONS.replace("epochs = 2", "epochs = 0"))
        result = run_training(cfg, out_dir=tmp_path, quiet=True)
        assert result.records == [] and result.best_epoch == 0
        header, arrays = load_checkpoint(tmp_path / "checkpoint_final.bbnn")
        assert header["epoch"] == 0
        assert set(np.unique(np.abs(arrays["lam"]))) == {10.0}
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[-1] == ",".join(CSV_COLUMNS)  # header only, no rows

    def test_seed_and_mc_overrides(self, tmp_path):
        cfg = parse_config(MOONS)
        r1 = run_training(cfg, seed_override=8, quiet=True)
        cfg2 = parse_config(MOONS.replace("seed = 4", "seed = 8"))
        r2 = run_training(cfg2, quiet=True)
        assert [rec.row() for rec in r1.records] == [rec.row() for rec in r2.records]
        r3 = run_training(parse_config(MOONS), mc_override=3, quiet=True)
        assert r3.final_report["mc_test"] == 3

    def test_output_head_too_narrow(self):
        cfg = parse_config(MOONS.replace("fc(8,2)", "fc(8,1)"))
        with pytest.raises(ConfigError, match="emits 1 classes"):
            run_training(cfg, quiet=True)


class TestRunEval:
    def test_eval_matches_training_report(self, tmp_path):
        cfg = parse_config(MOONS)
        result = run_training(cfg, out_dir=tmp_path, quiet=True)
        report = run_eval(parse_config(MOONS),
                          tmp_path / "checkpoint_best.bbnn",
                          out_dir=tmp_path / "eval")
        assert report["metric"] == result.final_report["metric"]
        assert report["eval_split"] == "train"
        assert report["epoch"] == result.best_epoch + 1
        lines = (tmp_path / "eval" / "eval_metrics.csv").read_text().splitlines()
        body = [l for l in lines if not l.startswith("# ")]
        assert body[0] == ",".join(CSV_COLUMNS)
        cells = body[1].split(",")
        assert cells[3] != "" and cells[5] == ""  # train metric, no test split
        summary = json.loads(
            (tmp_path / "eval" / "eval_summary.json").read_text()
        )
        assert summary["metric"] == report["metric"]

    def test_mode_and_mean_agree_when_saturated(self, tmp_path):
        # one epoch from a +/-10 initialization leaves |lambda| large, so the
        # averaged predictor and the mode predictor see the same network
        cfg = parse_config(MOONS.replace("epochs = 2", "epochs = 1"))
        run_training(cfg, out_dir=tmp_path, quiet=True)
        mode = run_eval(parse_config(MOONS), tmp_path / "checkpoint_final.bbnn",
                        mc_override=0)
        mean = run_eval(parse_config(MOONS), tmp_path / "checkpoint_final.bbnn",
                        mc_override=100)
        assert abs(mode["metric"] - mean["metric"]) <= 0.01
