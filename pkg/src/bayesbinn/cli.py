"""Command-line front end: train / eval / continual / selftest.

    bayesbinn train    --config two_moons_desk --out runs/moons [--seed 1]
    bayesbinn eval     --config two_moons_desk --checkpoint runs/moons/checkpoint_best.bbnn
    bayesbinn continual --config continual_desk --out runs/cl
    bayesbinn selftest

--config takes a filesystem path or the name of a shipped preset (see
`bayesbinn.config.preset_names`). --seed and --mc-samples override the config;
the resolved values are what run artifacts embed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_config, preset_names, preset_path
from .exceptions import ConfigError, DataFormatError, OptimizerError

__all__ = ["main"]


def _load_config(arg: str, require_continual: bool = False) -> ExperimentConfig:
    p = Path(arg)
    if not p.exists():
        try:
            p = preset_path(arg)
        except ConfigError:
            raise ConfigError(
                f"config {arg!r} is neither a file nor a preset; presets: "
                f"{', '.join(preset_names())}"
            ) from None
    return parse_config(p, require_continual=require_continual)


def _add_common(p, with_mc: bool = True):
    p.add_argument("--config", required=True,
                   help="path to an INI config, or a preset name")
    p.add_argument("--seed", type=int, default=None,
                   help="override [experiment] seed")
    p.add_argument("--out", default=None, help="output directory")
    if with_mc:
        p.add_argument("--mc-samples", type=int, default=None,
                       help="override [prediction] mc_test")


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    configured = cfg.get("output.dir", "")
    return Path(configured) if configured else Path("runs") / cfg.name


def _cmd_train(args) -> int:
    from .train import run_training

    cfg = _load_config(args.config)
    result = run_training(cfg, out_dir=_out_dir(args, cfg),
                          seed_override=args.seed, mc_override=args.mc_samples)
    final = result.final_report
    print(f"run complete: best epoch {result.best_epoch}, "
          f"{final['metric_name']} ({final['eval_split']}) = {final['metric']:.5f}")
    print(f"artifacts in {result.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    from .train import run_eval

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.values["experiment.seed"] = args.seed
    report = run_eval(cfg, args.checkpoint, mc_override=args.mc_samples,
                      out_dir=args.out)
    print(f"{report['metric_name']} ({report['eval_split']}) = "
          f"{report['metric']:.5f}  [optimizer {report['optimizer']}, "
          f"mc_test {report['mc_test']}]")
    return 0


def _cmd_continual(args) -> int:
    from .continual import ContinualSettings, make_permuted_tasks, run_vcl
    from .train import resolve_data, write_metrics_csv

    cfg = _load_config(args.config, require_continual=True)
    if args.seed is not None:
        cfg.values["experiment.seed"] = args.seed
    if args.mc_samples is not None:
        cfg.values["continual.mc_eval"] = args.mc_samples
    t0 = time.monotonic()
    data = resolve_data(cfg)
    if data.test is None:
        raise ConfigError("continual runs need a data kind with a test split")
    spec = cfg.network_spec()
    train = data.train
    tasks = make_permuted_tasks(train, data.test, cfg["continual.tasks"],
                                cfg["data.data_seed"])
    modes = {"with": [True], "without": [False],
             "both": [True, False]}[cfg["continual.chaining"]]

    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    preamble = cfg.resolved_lines()
    acc_lines, ent_lines, hist_lines = [], [], []
    summary = {}
    for chained in modes:
        label = "chained" if chained else "unchained"
        settings = ContinualSettings(
            epochs_per_task=cfg["continual.epochs_per_task"],
            batch_size=cfg["training.batch_size"],
            lr_start=cfg["optimizer.lr_start"],
            lr_end=cfg["optimizer.lr_end"],
            tau=cfg["optimizer.tau"],
            mc_train=cfg["optimizer.mc_train"],
            init_scale=cfg["optimizer.init_scale"],
            mc_eval=cfg["continual.mc_eval"],
            use_prior_chaining=chained,
            seed=cfg.seed,
            entropy_bins=cfg["continual.entropy_bins"],
        )
        metrics = run_vcl(tasks, spec, settings)
        n_tasks = metrics.accuracy.shape[0]
        for t in range(n_tasks):
            ent_lines.append(f"{label},{t},{float(metrics.entropy[t])!r}")
            for s in range(t + 1):
                acc_lines.append(
                    f"{label},{t},{s},{float(metrics.accuracy[t, s])!r}"
                )
            counts, edges = metrics.histograms[t]
            for b in range(counts.size):
                hist_lines.append(
                    f"{label},{t},{b},{float(edges[b])!r},"
                    f"{float(edges[b + 1])!r},{int(counts[b])}"
                )
        summary[label] = {
            "accuracy": [[None if np.isnan(v) else v for v in row]
                         for row in metrics.accuracy.tolist()],
            "entropy_bits": metrics.entropy.tolist(),
        }
        print(f"{label}: task-0 accuracy after final task = "
              f"{metrics.accuracy[-1, 0]:.5f}, entropy trajectory "
              f"{[round(float(e), 6) for e in metrics.entropy]}")

    def write(name, header, lines):
        with open(out / name, "w", encoding="utf-8", newline="\n") as f:
            for line in preamble:
                f.write(f"# {line}\n")
            f.write(header + "\n")
            for line in lines:
                f.write(line + "\n")

    write("continual_accuracy.csv", "mode,after_task,eval_task,accuracy", acc_lines)
    write("continual_entropy.csv", "mode,after_task,entropy_bits", ent_lines)
    write("continual_histograms.csv",
          "mode,after_task,bin,p_lo,p_hi,count", hist_lines)
    summary["wall_seconds"] = round(time.monotonic() - t0, 3)
    summary["config"] = preamble
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"artifacts in {out}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(verbose=True)
    print("selftest: all invariants hold" if ok else "selftest: FAILURES above")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bayesbinn",
        description="Train and evaluate binary-weight neural networks "
                    "(Bayesian posterior, straight-through, or sign-flip updates).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network from a config")
    _add_common(p_train)
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file")
    p_eval.set_defaults(fn=_cmd_eval)

    p_cont = sub.add_parser("continual",
                            help="sequential permuted-task training")
    _add_common(p_cont)
    p_cont.set_defaults(fn=_cmd_continual)

    p_self = sub.add_parser("selftest", help="run built-in invariant checks")
    p_self.set_defaults(fn=_cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError, OptimizerError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
