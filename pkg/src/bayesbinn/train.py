"""Training loop, per-epoch metrics, and run artifacts.

`fit_network` is the single loop shared by the CLI, the sklearn-style
estimators, and the continual-learning driver: it cuts seeded minibatches,
builds the gradient closure over the network, and dispatches to the optimizer
that matches the state object.

A CLI run directory contains:

* ``metrics.csv`` — per-epoch metrics. Deterministic: the same config and
  seed reproduce it byte for byte. Lines starting with ``#`` carry the fully
  resolved config; then a fixed header row
  ``epoch,lr,train_loss,train_metric,val_metric,test_metric,entropy_bits``
  (classification metrics are accuracies, regression metrics are MSEs;
  non-applicable cells are empty).
* ``checkpoint_final.bbnn`` / ``checkpoint_best.bbnn`` — last state and the
  state at the best validation epoch.
* ``summary.json`` — final report (best-validation weights), resolved config,
  and wall-clock time (kept out of the CSV so reruns stay byte-identical).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .datasets import (
    Dataset,
    load_mnist_idx,
    load_snelson,
    gen_two_moons,
    make_digits_corpus,
    make_snelson_like,
    minibatches,
    save_snelson,
    split,
    take,
    with_bias_column,
    write_idx_images,
    write_idx_labels,
)
from .exceptions import ConfigError, OptimizerError
from .linalg import Rng
from .network import (
    BnState,
    FullyConnected,
    NetworkSpec,
    backward,
    forward,
    init_bn_state,
    pack_weights,
)
from .optimizers import (
    AdamState,
    BayesBiNNState,
    BopState,
    StepDecay,
    SteAdamState,
    adam_step,
    bayesbinn_step,
    bop_step,
    init_lambda,
    lr_at,
    ste_adam_step,
)
from .predictor import (
    evaluate_accuracy,
    evaluate_mse,
    mode_weights,
    predict_mean,
    predict_mean_outputs,
    predict_mode,
)
from .bernoulli import entropy_bits

__all__ = [
    "CSV_COLUMNS",
    "DataBundle",
    "MetricsRecord",
    "RunResult",
    "eval_weights",
    "fit_network",
    "init_state",
    "resolve_data",
    "run_eval",
    "run_training",
    "state_arrays",
    "state_from_arrays",
    "write_metrics_csv",
]

CSV_COLUMNS = [
    "epoch", "lr", "train_loss", "train_metric", "val_metric", "test_metric",
    "entropy_bits",
]


@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    train_loss: float
    train_metric: float | None
    val_metric: float | None
    test_metric: float | None
    entropy: float | None

    def row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return ",".join([
            str(self.epoch), fmt(self.lr), fmt(self.train_loss),
            fmt(self.train_metric), fmt(self.val_metric), fmt(self.test_metric),
            fmt(self.entropy),
        ])


def write_metrics_csv(path, records, preamble_lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in preamble_lines:
            f.write(f"# {line}\n")
        f.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            f.write(r.row() + "\n")


# ---------------------------------------------------------------------------
# data resolution


@dataclass
class DataBundle:
    train: Dataset
    val: Dataset | None
    test: Dataset | None
    note: str


def _cache_dir() -> Path:
    import os

    d = Path(os.environ.get("BAYESBINN_CACHE", Path.home() / ".cache" / "bayesbinn"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def digits_idx_files(n_train: int, n_test: int, seed: int) -> dict:
    """IDX files for the stand-in digit corpus, generated into the cache once."""
    d = _cache_dir()
    tag = f"{n_train}_{n_test}_{seed}"
    paths = {
        "train_images": d / f"digits_train_images_{tag}.idx",
        "train_labels": d / f"digits_train_labels_{tag}.idx",
        "test_images": d / f"digits_test_images_{tag}.idx",
        "test_labels": d / f"digits_test_labels_{tag}.idx",
    }
    if not all(p.exists() for p in paths.values()):
        tr_x, tr_y, te_x, te_y = make_digits_corpus(n_train, n_test, seed)
        write_idx_images(paths["train_images"], tr_x)
        write_idx_labels(paths["train_labels"], tr_y)
        write_idx_images(paths["test_images"], te_x)
        write_idx_labels(paths["test_labels"], te_y)
    return paths


def resolve_data(cfg: ExperimentConfig) -> DataBundle:
    kind = cfg["data.kind"]
    test = None
    if kind == "two_moons":
        train = gen_two_moons(
            cfg["data.n_per_class"], cfg["data.noise_sd"], cfg["data.data_seed"]
        )
        note = f"two moons (n_per_class={cfg['data.n_per_class']})"
    elif kind == "snelson":
        train = load_snelson(cfg["data.inputs"], cfg["data.targets"])
        note = f"1-D regression from {cfg['data.inputs']}"
    elif kind == "snelson_synth":
        train = make_snelson_like(cfg["data.n"], cfg["data.data_seed"])
        note = f"synthetic 1-D regression (n={cfg['data.n']})"
    elif kind in ("mnist_idx", "digits"):
        if kind == "digits":
            paths = digits_idx_files(
                cfg["data.n_train"], cfg["data.n_test"], cfg["data.data_seed"]
            )
            note = "stand-in digit corpus (upscaled 8x8 handwritten digits)"
        else:
            paths = {k: cfg[f"data.{k}"] for k in
                     ("train_images", "train_labels", "test_images", "test_labels")}
            note = f"IDX corpus from {paths['train_images']}"
        train = load_mnist_idx(paths["train_images"], paths["train_labels"])
        test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    else:  # pragma: no cover - schema forbids
        raise ConfigError(f"unknown data kind {kind!r}")

    if cfg.get("data.bias_input", False):
        train = with_bias_column(train)
        if test is not None:
            test = with_bias_column(test)

    subset = cfg.get("data.train_subset", 0)
    if subset:
        if subset > train.n:
            raise ConfigError(f"train_subset {subset} exceeds corpus size {train.n}")
        order = Rng.for_stream(cfg["data.data_seed"], 404).permutation(train.n)
        train = take(train, order[:subset])

    val = None
    if cfg["data.val_fraction"] > 0.0:
        train, val = split(train, cfg["data.val_fraction"], cfg["data.data_seed"])
    return DataBundle(train, val, test, note)


# ---------------------------------------------------------------------------
# optimizer state plumbing


def init_state(cfg: ExperimentConfig, spec: NetworkSpec, n_train: int, epochs: int):
    kind = cfg["optimizer.kind"]
    w = spec.weight_count
    seed = cfg.seed
    init_rng = Rng.for_stream(seed, 1)
    if kind == "bayesbinn":
        return BayesBiNNState(
            lam=init_lambda(w, cfg["optimizer.init_scale"], init_rng),
            prior_lam=np.zeros(w),
            tau=cfg["optimizer.tau"],
            n_train=n_train,
            mc_samples=cfg["optimizer.mc_train"],
            schedule=cfg.schedule(epochs),
            rng=Rng.for_stream(seed, 2),
            momentum_beta=cfg["optimizer.momentum"],
        )
    if kind == "ste_adam":
        return SteAdamState(
            w_r=2.0 * init_rng.uniform_open(w) - 1.0,
            schedule=cfg.schedule(epochs),
            beta1=cfg["optimizer.beta1"],
            beta2=cfg["optimizer.beta2"],
            adam_eps=cfg["optimizer.adam_eps"],
            grad_clip=cfg["optimizer.grad_clip"],
            weight_clip=cfg["optimizer.weight_clip"],
        )
    if kind == "bop":
        decay = cfg["optimizer.threshold_decay"]
        sched = (
            StepDecay(cfg["optimizer.threshold"], decay, cfg["optimizer.threshold_interval"])
            if decay != 1.0
            else None
        )
        return BopState(
            w_b=init_rng.signs(w),
            w_r=np.zeros(w),
            threshold=cfg["optimizer.threshold"],
            momentum_rate=cfg["optimizer.momentum_rate"],
            threshold_schedule=sched,
        )
    if kind == "adam":
        mats = []
        for l in spec.layers:
            if isinstance(l, FullyConnected):
                limit = np.sqrt(6.0 / (l.n_in + l.n_out))
                mats.append(
                    limit * (2.0 * init_rng.uniform_open(l.n_in * l.n_out) - 1.0)
                )
        return AdamState(
            w=pack_weights(mats),
            schedule=cfg.schedule(epochs),
            beta1=cfg["optimizer.beta1"],
            beta2=cfg["optimizer.beta2"],
            adam_eps=cfg["optimizer.adam_eps"],
        )
    raise ConfigError(f"unknown optimizer kind {kind!r}")


def eval_weights(state) -> np.ndarray:
    """The binary (or real, for Adam) weights this state would deploy."""
    if isinstance(state, BayesBiNNState):
        return mode_weights(state.lam)
    if isinstance(state, SteAdamState):
        from .bernoulli import sign_pm1

        return sign_pm1(state.w_r)
    if isinstance(state, BopState):
        return state.w_b.copy()
    if isinstance(state, AdamState):
        return state.w.copy()
    raise TypeError(f"unknown state type {type(state).__name__}")


def _optimizer_kind(state) -> str:
    return {
        BayesBiNNState: "bayesbinn", SteAdamState: "ste_adam",
        BopState: "bop", AdamState: "adam",
    }[type(state)]


def state_arrays(state, bn: BnState) -> dict:
    """Checkpoint payload arrays for a state plus BN running statistics."""
    if isinstance(state, BayesBiNNState):
        arrays = {"lam": state.lam, "prior_lam": state.prior_lam}
        if state.momentum is not None:
            arrays["momentum"] = state.momentum
    elif isinstance(state, SteAdamState):
        arrays = {"w_r": state.w_r, "m": state.m, "v": state.v}
    elif isinstance(state, BopState):
        arrays = {"w_b": state.w_b, "w_r": state.w_r}
    elif isinstance(state, AdamState):
        arrays = {"w": state.w, "m": state.m, "v": state.v}
    else:
        raise TypeError(f"unknown state type {type(state).__name__}")
    arrays = {k: np.asarray(v, dtype=np.float64).copy() for k, v in arrays.items()}
    for i in sorted(bn.mean):
        arrays[f"bn{i}_mean"] = bn.mean[i].copy()
        arrays[f"bn{i}_var"] = bn.var[i].copy()
    return arrays


def state_from_arrays(header: dict, arrays: dict, spec: NetworkSpec):
    """Rebuild (eval-ready weights, BnState, kind) from checkpoint contents."""
    bn = init_bn_state(spec)
    for i in list(bn.mean):
        if f"bn{i}_mean" in arrays:
            bn.mean[i] = arrays[f"bn{i}_mean"]
            bn.var[i] = arrays[f"bn{i}_var"]
    return arrays, bn, header["optimizer"]


# ---------------------------------------------------------------------------
# the loop


def fit_network(
    spec: NetworkSpec,
    state,
    train: Dataset,
    epochs: int,
    batch_size: int,
    seed: int,
    bn: BnState | None = None,
    on_epoch=None,
):
    """Train `state` in place for `epochs` passes over `train`.

    Returns the BnState used. `on_epoch(epoch, mean_step_loss)` runs after
    each epoch. All randomness (batch order, dropout, relaxation noise) is
    derived from `seed` and the state's own rng.
    """
    if bn is None:
        bn = init_bn_state(spec)
    drop_rng = Rng.for_stream(seed, 303)
    x, y = train.x, train.y

    losses = []

    def grad_at(w, batch):
        out, cache = forward(spec, w, x[batch], mode="train", rng=drop_rng, bn=bn)
        loss, grad = backward(spec, cache, y[batch])
        losses.append(loss)
        return grad

    for epoch in range(epochs):
        if isinstance(state, BopState) and state.threshold_schedule is not None:
            state.threshold = lr_at(state.threshold_schedule, epoch)
        losses.clear()
        for batch in minibatches(train.n, batch_size, seed, epoch):
            if isinstance(state, BayesBiNNState):
                bayesbinn_step(state, grad_at, batch, epoch)
            elif isinstance(state, SteAdamState):
                ste_adam_step(state, grad_at, batch, epoch)
            elif isinstance(state, BopState):
                bop_step(state, grad_at, batch)
            elif isinstance(state, AdamState):
                adam_step(state, grad_at, batch, epoch)
            else:
                raise TypeError(f"unknown state type {type(state).__name__}")
        if losses and not np.isfinite(np.mean(losses)):
            raise OptimizerError(f"non-finite training loss in epoch {epoch}")
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)) if losses else float("nan"))
    return bn


def _eval_metric(spec: NetworkSpec, w, ds: Dataset, bn: BnState) -> float:
    """Accuracy (classification) or MSE (regression) of weights `w` on `ds`."""
    out, _ = forward(spec, w, ds.x, mode="eval", bn=bn)
    if spec.loss == "cross_entropy":
        from .linalg import softmax_rows

        return evaluate_accuracy(softmax_rows(out), ds.y)
    return evaluate_mse(out, ds.y)


def _better(metric: float, best: float, classification: bool) -> bool:
    return metric > best if classification else metric < best


@dataclass
class RunResult:
    records: list
    best_epoch: int
    final_report: dict
    out_dir: Path | None


def run_training(
    cfg: ExperimentConfig,
    out_dir=None,
    seed_override: int | None = None,
    mc_override: int | None = None,
    quiet: bool = False,
) -> RunResult:
    """Full training run with metrics, checkpoints, and summary on disk.

    `out_dir=None` keeps everything in memory (no files written).
    """
    if seed_override is not None:
        cfg.values["experiment.seed"] = int(seed_override)
    if mc_override is not None:
        cfg.values["prediction.mc_test"] = int(mc_override)
    t0 = time.monotonic()
    data = resolve_data(cfg)
    spec = cfg.network_spec()
    if spec.loss == "cross_entropy":
        n_cls = int(data.train.y.max()) + 1
        if spec.out_dim < n_cls:
            raise ConfigError(
                f"network emits {spec.out_dim} classes but data has {n_cls}"
            )
    epochs = cfg["training.epochs"]
    batch = cfg["training.batch_size"]
    state = init_state(cfg, spec, data.train.n, epochs)
    bn = init_bn_state(spec)
    classification = spec.loss == "cross_entropy"

    records: list[MetricsRecord] = []
    best = {"metric": -np.inf if classification else np.inf, "epoch": -1,
            "arrays": state_arrays(state, bn), "bn": bn.copy()}
    have_val = data.val is not None and data.val.n > 0

    def on_epoch(epoch, mean_loss):
        w_eval = eval_weights(state)
        train_metric = _eval_metric(spec, w_eval, data.train, bn)
        val_metric = _eval_metric(spec, w_eval, data.val, bn) if have_val else None
        test_metric = _eval_metric(spec, w_eval, data.test, bn) if data.test else None
        lr = (
            state.threshold
            if isinstance(state, BopState)
            else lr_at(state.schedule, epoch)
        )
        ent = entropy_bits(state.lam) if isinstance(state, BayesBiNNState) else None
        records.append(
            MetricsRecord(epoch, lr, mean_loss, train_metric, val_metric,
                          test_metric, ent)
        )
        track = val_metric if have_val else train_metric
        if _better(track, best["metric"], classification):
            best.update(metric=track, epoch=epoch,
                        arrays=state_arrays(state, bn), bn=bn.copy())
        if not quiet:
            parts = [f"epoch {epoch}", f"loss {mean_loss:.5f}",
                     f"train {train_metric:.5f}"]
            if val_metric is not None:
                parts.append(f"val {val_metric:.5f}")
            if test_metric is not None:
                parts.append(f"test {test_metric:.5f}")
            print("  ".join(parts), flush=True)

    bn = fit_network(spec, state, data.train, epochs, batch, cfg.seed, bn, on_epoch)

    if best["epoch"] < 0:  # zero-epoch run: keep the initial state
        best.update(metric=np.nan, epoch=0)

    # final report from the best-validation weights
    final = _final_report(cfg, spec, best, data, classification)
    final["wall_seconds"] = round(time.monotonic() - t0, 3)
    final["data_note"] = data.note

    result = RunResult(records, best["epoch"], final, None)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        preamble = cfg.resolved_lines()
        write_metrics_csv(out / "metrics.csv", records, preamble)
        header = {
            "optimizer": cfg["optimizer.kind"],
            "weight_count": spec.weight_count,
            "layers": cfg["network.layers"],
            "loss": spec.loss,
            "seed": cfg.seed,
            "epoch": epochs,
            "step_count": getattr(state, "step_count", 0),
        }
        save_checkpoint(out / "checkpoint_final.bbnn", header,
                        state_arrays(state, bn))
        best_header = dict(header, epoch=best["epoch"] + 1)
        save_checkpoint(out / "checkpoint_best.bbnn", best_header, best["arrays"])
        summary = {"config": preamble, "final": final,
                   "best_epoch": best["epoch"]}
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        result.out_dir = out
    return result


def _final_report(cfg, spec, best, data, classification) -> dict:
    arrays, bn_best = best["arrays"], best["bn"]
    kind = cfg["optimizer.kind"]
    mc = cfg["prediction.mc_test"]
    eval_ds = data.test if data.test is not None else data.train
    eval_split = "test" if data.test is not None else "train"
    report = {"best_epoch": best["epoch"], "eval_split": eval_split,
              "mc_test": mc, "optimizer": kind}
    if kind == "bayesbinn":
        lam = arrays["lam"]
        report["entropy_bits"] = entropy_bits(lam)
        if classification:
            if mc > 0:
                probs = predict_mean(lam, spec, eval_ds.x, mc, cfg.seed + 7919, bn_best)
            else:
                probs = predict_mode(lam, spec, eval_ds.x, bn_best)
            report["metric"] = evaluate_accuracy(probs, eval_ds.y)
        else:
            if mc > 0:
                mean, var = predict_mean_outputs(
                    lam, spec, eval_ds.x, mc, cfg.seed + 7919, bn_best
                )
                report["mean_band_var"] = float(var.mean())
            else:
                mean = predict_mode(lam, spec, eval_ds.x, bn_best)
            report["metric"] = evaluate_mse(mean, eval_ds.y)
    else:
        from .bernoulli import sign_pm1

        w = {"ste_adam": lambda: sign_pm1(arrays["w_r"]),
             "bop": lambda: arrays["w_b"],
             "adam": lambda: arrays["w"]}[kind]()
        report["metric"] = _eval_metric(spec, w, eval_ds, bn_best)
    report["metric_name"] = "accuracy" if classification else "mse"
    return report


def run_eval(cfg: ExperimentConfig, checkpoint_path, mc_override=None, out_dir=None):
    """Evaluate a checkpoint on the config's test set (train set if none)."""
    from .checkpoint import load_checkpoint

    header, arrays = load_checkpoint(checkpoint_path)
    from .config import build_layers

    spec = NetworkSpec(build_layers(header["layers"]), header["loss"])
    _, bn, kind = state_from_arrays(header, arrays, spec)
    mc = mc_override if mc_override is not None else cfg["prediction.mc_test"]
    data = resolve_data(cfg)
    eval_ds = data.test if data.test is not None else data.train
    eval_split = "test" if data.test is not None else "train"
    classification = spec.loss == "cross_entropy"

    report = {"checkpoint": str(checkpoint_path), "optimizer": kind,
              "eval_split": eval_split, "mc_test": mc,
              "epoch": header["epoch"], "seed": header["seed"]}
    if kind == "bayesbinn":
        lam = arrays["lam"]
        report["entropy_bits"] = entropy_bits(lam)
        if classification:
            if mc > 0:
                probs = predict_mean(lam, spec, eval_ds.x, mc, header["seed"] + 7919, bn)
            else:
                probs = predict_mode(lam, spec, eval_ds.x, bn)
            report["metric"] = evaluate_accuracy(probs, eval_ds.y)
        else:
            if mc > 0:
                mean, var = predict_mean_outputs(
                    lam, spec, eval_ds.x, mc, header["seed"] + 7919, bn
                )
                report["mean_band_var"] = float(var.mean())
            else:
                mean = predict_mode(lam, spec, eval_ds.x, bn)
            report["metric"] = evaluate_mse(mean, eval_ds.y)
    else:
        from .bernoulli import sign_pm1

        w = {"ste_adam": lambda: sign_pm1(arrays["w_r"]),
             "bop": lambda: arrays["w_b"],
             "adam": lambda: arrays["w"]}[kind]()
        report["metric"] = _eval_metric(spec, w, eval_ds, bn)
    report["metric_name"] = "accuracy" if classification else "mse"

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        record = MetricsRecord(header["epoch"], 0.0, float("nan"),
                               None, None, None, report.get("entropy_bits"))
        if eval_split == "test":
            record.test_metric = report["metric"]
        else:
            record.train_metric = report["metric"]
        record.lr = 0.0
        write_metrics_csv(out / "eval_metrics.csv", [record],
                          cfg.resolved_lines() + [f"checkpoint = {checkpoint_path}"])
        (out / "eval_summary.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report
