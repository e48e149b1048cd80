"""INI experiment configs: strict schema, defaults, and the layer grammar.

A config is standard INI (sections of key = value). Unknown sections or keys
are hard errors, as are keys that do not apply to the selected data/optimizer
kind; after parsing, every applicable hyperparameter has an explicit value,
and `resolved_lines()` dumps them all for embedding into run artifacts.

Network layer grammar (comma separated, case insensitive):

    fc(IN,OUT)    bias-free fully connected layer
    tanh | relu   activation
    bn            batch norm (no learned gain/bias)
    dropout(P)    inverted dropout with drop rate P

Example: ``layers = dropout(0.2), fc(784,512), relu, bn, fc(512,10), bn``
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .exceptions import ConfigError
from .network import Activation, BatchNorm, Dropout, FullyConnected, NetworkSpec
from .optimizers import Constant, Cosine, Geometric, StepDecay

__all__ = [
    "ExperimentConfig",
    "build_layers",
    "layers_to_text",
    "parse_config",
    "preset_names",
    "preset_path",
]

_LAYER_RE = re.compile(
    r"^(?:(fc)\(\s*(\d+)\s*,\s*(\d+)\s*\)|(dropout)\(\s*([0-9.eE+-]+)\s*\)|(tanh|relu|bn))$"
)


def build_layers(text: str) -> tuple:
    """Parse the layer grammar into a tuple of layer objects."""
    layers = []
    items = [t.strip().lower() for t in text.split(",")]
    # re-join fc(784,512) style items that the comma split broke apart
    merged, pending = [], ""
    for item in items:
        cand = f"{pending},{item}" if pending else item
        if cand.count("(") > cand.count(")"):
            pending = cand
            continue
        merged.append(cand)
        pending = ""
    if pending:
        raise ConfigError(f"unbalanced parentheses in layers: {text!r}")
    for item in merged:
        if not item:
            raise ConfigError(f"empty layer item in {text!r}")
        m = _LAYER_RE.match(item.replace(" ", ""))
        if m is None:
            raise ConfigError(f"cannot parse layer item {item!r}")
        if m.group(1):
            layers.append(FullyConnected(int(m.group(2)), int(m.group(3))))
        elif m.group(4):
            layers.append(Dropout(float(m.group(5))))
        elif m.group(6) == "bn":
            layers.append(BatchNorm())
        else:
            layers.append(Activation(m.group(6)))
    return tuple(layers)


def layers_to_text(layers) -> str:
    parts = []
    for l in layers:
        if isinstance(l, FullyConnected):
            parts.append(f"fc({l.n_in},{l.n_out})")
        elif isinstance(l, Activation):
            parts.append(l.fn)
        elif isinstance(l, BatchNorm):
            parts.append("bn")
        elif isinstance(l, Dropout):
            parts.append(f"dropout({l.p:g})")
        else:
            raise TypeError(f"unknown layer type {type(l).__name__}")
    return ", ".join(parts)


# ---------------------------------------------------------------------------
# schema

_REQUIRED = object()


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _choice(*opts):
    def parse(s: str) -> str:
        t = s.strip().lower()
        if t not in opts:
            raise ValueError(f"expected one of {opts}, got {s!r}")
        return t

    return parse


# section -> key -> (parser, default); _REQUIRED means the key must appear.
_SCHEMA = {
    "experiment": {"name": (str.strip, _REQUIRED), "seed": (int, 0)},
    "data": {
        "kind": (_choice("two_moons", "snelson", "snelson_synth", "mnist_idx", "digits"), _REQUIRED),
        "n_per_class": (int, 100),
        "noise_sd": (float, 0.1),
        "data_seed": (int, 99),
        "inputs": (str.strip, _REQUIRED),
        "targets": (str.strip, _REQUIRED),
        "n": (int, 200),
        "train_images": (str.strip, _REQUIRED),
        "train_labels": (str.strip, _REQUIRED),
        "test_images": (str.strip, _REQUIRED),
        "test_labels": (str.strip, _REQUIRED),
        "n_train": (int, 10000),
        "n_test": (int, 2000),
        "train_subset": (int, 0),
        "val_fraction": (float, 0.1),
        "bias_input": (_bool, False),
    },
    "network": {
        "layers": (str.strip, _REQUIRED),
        "loss": (_choice("cross_entropy", "mse"), _REQUIRED),
    },
    "training": {"epochs": (int, _REQUIRED), "batch_size": (int, _REQUIRED)},
    "optimizer": {
        "kind": (_choice("bayesbinn", "ste_adam", "bop", "adam"), _REQUIRED),
        "lr_schedule": (_choice("constant", "cosine", "geometric", "step"), "constant"),
        "lr_start": (float, _REQUIRED),
        "lr_end": (float, _REQUIRED),
        "lr_decay": (float, 0.1),
        "lr_interval": (int, _REQUIRED),
        "tau": (float, 1.0),
        "mc_train": (int, 1),
        "init_scale": (float, 10.0),
        "momentum": (float, 0.0),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "grad_clip": (_bool, True),
        "weight_clip": (_bool, True),
        "threshold": (float, 1e-8),
        "momentum_rate": (float, 1e-5),
        "threshold_decay": (float, 1.0),
        "threshold_interval": (int, 1),
    },
    "prediction": {"mc_test": (int, 0)},
    "output": {"dir": (str.strip, "")},
    "continual": {
        "tasks": (int, 3),
        "epochs_per_task": (int, _REQUIRED),
        "chaining": (_choice("with", "without", "both"), "both"),
        "entropy_bins": (int, 20),
        "mc_eval": (int, 100),
    },
}

# keys meaningful only for particular kinds
_DATA_KIND_KEYS = {
    "two_moons": {"n_per_class", "noise_sd", "data_seed", "val_fraction",
                  "bias_input"},
    "snelson": {"inputs", "targets", "val_fraction", "bias_input"},
    "snelson_synth": {"n", "data_seed", "val_fraction", "bias_input"},
    "mnist_idx": {
        "train_images", "train_labels", "test_images", "test_labels",
        "train_subset", "data_seed", "val_fraction",
    },
    "digits": {"n_train", "n_test", "data_seed", "train_subset", "val_fraction"},
}

_OPT_KIND_KEYS = {
    "bayesbinn": {"lr_schedule", "lr_start", "lr_end", "lr_decay", "lr_interval",
                  "tau", "mc_train", "init_scale", "momentum"},
    "ste_adam": {"lr_schedule", "lr_start", "lr_end", "lr_decay", "lr_interval",
                 "beta1", "beta2", "adam_eps", "grad_clip", "weight_clip"},
    "adam": {"lr_schedule", "lr_start", "lr_end", "lr_decay", "lr_interval",
             "beta1", "beta2", "adam_eps"},
    "bop": {"threshold", "momentum_rate", "threshold_decay", "threshold_interval"},
}

# keys whose _REQUIRED status is waived unless the schedule kind needs them
_SCHEDULE_KEYS = {
    "constant": set(),
    "cosine": {"lr_end"},
    "geometric": {"lr_end"},
    "step": {"lr_decay", "lr_interval"},
}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment configuration (flat section.key -> value)."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def name(self) -> str:
        return self.values["experiment.name"]

    @property
    def seed(self) -> int:
        return self.values["experiment.seed"]

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(
            build_layers(self.values["network.layers"]), self.values["network.loss"]
        )

    def schedule(self, total_epochs: int):
        kind = self.values["optimizer.lr_schedule"]
        a0 = self.values["optimizer.lr_start"]
        if kind == "constant":
            return Constant(a0)
        if kind == "cosine":
            return Cosine(a0, self.values["optimizer.lr_end"], total_epochs)
        if kind == "geometric":
            return Geometric(a0, self.values["optimizer.lr_end"], total_epochs)
        return StepDecay(a0, self.values["optimizer.lr_decay"],
                         self.values["optimizer.lr_interval"])

    def resolved_lines(self) -> list[str]:
        """Every applicable key with its final value, one 'section.key = v' per line."""
        out = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        return out


def _applicable(section: str, key: str, chosen: dict) -> bool:
    if section == "data" and key != "kind":
        return key in _DATA_KIND_KEYS[chosen["data.kind"]]
    if section == "optimizer" and key != "kind":
        if key not in _OPT_KIND_KEYS[chosen["optimizer.kind"]]:
            return False
        if key in ("lr_end", "lr_decay", "lr_interval"):
            sched = chosen.get("optimizer.lr_schedule", "constant")
            return key in _SCHEDULE_KEYS[sched]
        return True
    return True


def parse_config(source, require_continual: bool = False) -> ExperimentConfig:
    """Parse and validate an INI config from a path or a text string."""
    parser = configparser.ConfigParser(interpolation=None)
    text = source
    if isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source and "=" not in source
    ):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config is not valid INI: {e}") from None

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    # first pass: pick the kind selectors so applicability can be decided
    chosen = {}
    for sel_section, sel_key in (("data", "kind"), ("optimizer", "kind"),
                                 ("optimizer", "lr_schedule")):
        if parser.has_option(sel_section, sel_key):
            parse_fn, default = _SCHEMA[sel_section][sel_key]
            try:
                chosen[f"{sel_section}.{sel_key}"] = parse_fn(parser[sel_section][sel_key])
            except ValueError as e:
                raise ConfigError(f"[{sel_section}] {sel_key}: {e}") from None
        else:
            _, default = _SCHEMA[sel_section][sel_key]
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {sel_key!r} in [{sel_section}]")
            chosen[f"{sel_section}.{sel_key}"] = default
    if chosen["optimizer.kind"] == "bop":
        chosen["optimizer.lr_schedule"] = "step"

    values = {}
    sections = list(_SCHEMA)
    if not require_continual:
        sections.remove("continual")
        if parser.has_section("continual"):
            sections.append("continual")
    for section in sections:
        for key, (parse_fn, default) in _SCHEMA[section].items():
            full = f"{section}.{key}"
            applicable = _applicable(section, key, chosen)
            present = parser.has_option(section, key)
            if not applicable:
                if present:
                    raise ConfigError(
                        f"key {key!r} in [{section}] does not apply to "
                        f"kind {chosen.get(section + '.kind', '')!r} with this schedule"
                    )
                continue
            if full in chosen:
                values[full] = chosen[full]
                continue
            if present:
                try:
                    values[full] = parse_fn(parser[section][key])
                except ValueError as e:
                    raise ConfigError(f"[{section}] {key}: {e}") from None
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r} in [{section}]")
            else:
                values[full] = default

    if chosen["optimizer.kind"] == "bop":
        values.pop("optimizer.lr_schedule", None)

    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if v["training.epochs"] < 0:
        raise ConfigError("epochs must be >= 0")
    if v["training.batch_size"] < 1:
        raise ConfigError("batch_size must be >= 1")
    if not 0.0 <= v["data.val_fraction"] < 1.0:
        raise ConfigError("val_fraction must be in [0, 1)")
    if v["prediction.mc_test"] < 0:
        raise ConfigError("mc_test must be >= 0")
    cfg.network_spec()  # validates the layer grammar and dimensions
    okind = v["optimizer.kind"]
    if okind == "bayesbinn":
        if not v["optimizer.tau"] > 0:
            raise ConfigError("tau must be > 0")
        if v["optimizer.mc_train"] < 1:
            raise ConfigError("mc_train must be >= 1")
        if not 0.0 <= v["optimizer.momentum"] < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
    if "continual.tasks" in v and v["continual.tasks"] < 1:
        raise ConfigError("continual tasks must be >= 1")


# ---------------------------------------------------------------------------
# presets


def preset_names() -> list[str]:
    files = resources.files("bayesbinn").joinpath("presets")
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".ini"))


def preset_path(name: str) -> Path:
    """Filesystem path of a shipped preset config (name without .ini)."""
    p = resources.files("bayesbinn").joinpath("presets", f"{name}.ini")
    if not p.is_file():
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    return Path(str(p))
