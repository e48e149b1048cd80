"""Config grammar: layer parsing, strict schema, defaults, and presets."""

import pytest

from bayesbinn.config import (
    build_layers,
    layers_to_text,
    parse_config,
    preset_names,
    preset_path,
)
from bayesbinn.exceptions import ConfigError, ShapeError
from bayesbinn.network import Activation, BatchNorm, Dropout, FullyConnected
from bayesbinn.optimizers import Constant, Cosine, Geometric, StepDecay

MINIMAL = """
[experiment]
name = t
[data]
kind = two_moons
[network]
layers = fc(2,4), tanh, fc(4,2)
loss = cross_entropy
[training]
epochs = 1
batch_size = 10
[optimizer]
kind = bayesbinn
lr_start = 1e-3
"""


def cfg_text(**overrides):
    """MINIMAL with `section.key = value` lines replaced or appended."""
    import configparser

    p = configparser.ConfigParser(interpolation=None)
    p.read_string(MINIMAL)
    for full, value in overrides.items():
        section, key = full.split(".", 1)
        if not p.has_section(section):
            p.add_section(section)
        if value is None:
            p.remove_option(section, key)
        else:
            p.set(section, key, str(value))
    out = []
    for section in p.sections():
        out.append(f"[{section}]")
        for key, value in p[section].items():
            out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


class TestLayerGrammar:
    def test_full_grammar(self):
        layers = build_layers("dropout(0.2), fc(784,512), relu, bn, fc(512,10), bn")
        assert layers == (Dropout(0.2), FullyConnected(784, 512),
                          Activation("relu"), BatchNorm(),
                          FullyConnected(512, 10), BatchNorm())

    def test_case_and_spacing_tolerance(self):
        layers = build_layers("FC( 3 , 4 ),  TANH ")
        assert layers == (FullyConnected(3, 4), Activation("tanh"))

    def test_unknown_item(self):
        with pytest.raises(ConfigError, match="sigmoid"):
            build_layers("fc(2,2), sigmoid")

    def test_unbalanced_parentheses(self):
        with pytest.raises(ConfigError):
            build_layers("fc(2,2")

    def test_empty_item(self):
        with pytest.raises(ConfigError):
            build_layers("fc(2,2),, tanh")

    def test_round_trip_through_text(self):
        text = "dropout(0.2), fc(7,5), tanh, bn, fc(5,3)"
        assert layers_to_text(build_layers(text)) == text


class TestParseConfig:
    def test_minimal_parses_with_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.name == "t" and cfg.seed == 0
        assert cfg["data.n_per_class"] == 100
        assert cfg["data.noise_sd"] == 0.1
        assert cfg["data.val_fraction"] == 0.1
        assert cfg["data.bias_input"] is False
        assert cfg["optimizer.tau"] == 1.0
        assert cfg["optimizer.mc_train"] == 1
        assert cfg["optimizer.init_scale"] == 10.0
        assert cfg["optimizer.momentum"] == 0.0
        assert cfg["prediction.mc_test"] == 0

    def test_path_loading(self, tmp_path):
        p = tmp_path / "exp.ini"
        p.write_text(MINIMAL)
        assert parse_config(p).name == "t"
        assert parse_config(str(p)).name == "t"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "absent.ini")

    def test_invalid_ini(self):
        with pytest.raises(ConfigError, match="not valid INI"):
            parse_config("[experiment\nname = broken\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown config section"):
            parse_config(MINIMAL + "\n[plotting]\nstyle = fancy\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(cfg_text(**{"optimizer.lr_startt": "1e-3"}))

    def test_missing_required_key(self):
        with pytest.raises(ConfigError, match="lr_start"):
            parse_config(cfg_text(**{"optimizer.lr_start": None}))
        with pytest.raises(ConfigError, match="'name'"):
            parse_config(cfg_text(**{"experiment.name": None}))

    def test_inapplicable_data_key(self):
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(cfg_text(**{"data.kind": "snelson_synth",
                                     "data.noise_sd": "0.2"}))

    def test_bias_input_only_for_synthetic_kinds(self):
        ok = parse_config(cfg_text(**{"data.bias_input": "true"}))
        assert ok["data.bias_input"] is True
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(cfg_text(**{"data.kind": "digits",
                                     "data.bias_input": "true"}))

    def test_inapplicable_optimizer_key(self):
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(cfg_text(**{"optimizer.kind": "ste_adam",
                                     "optimizer.tau": "0.5"}))
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(cfg_text(**{"optimizer.kind": "ste_adam",
                                     "optimizer.momentum": "0.9"}))
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(cfg_text(**{"optimizer.grad_clip": "false"}))

    def test_schedule_keys_gated_by_schedule_kind(self):
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(cfg_text(**{"optimizer.lr_end": "1e-5"}))  # constant
        cos = parse_config(cfg_text(**{"optimizer.lr_schedule": "cosine",
                                       "optimizer.lr_end": "1e-5"}))
        assert cos["optimizer.lr_end"] == 1e-5
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(cfg_text(**{"optimizer.lr_schedule": "cosine",
                                     "optimizer.lr_end": "1e-5",
                                     "optimizer.lr_decay": "0.5"}))

    def test_bad_value_reports_section_and_key(self):
        with pytest.raises(ConfigError, match=r"\[training\] epochs"):
            parse_config(cfg_text(**{"training.epochs": "three"}))
        with pytest.raises(ConfigError, match="boolean"):
            parse_config(cfg_text(**{"data.bias_input": "maybe"}))

    def test_validation_bounds(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config(cfg_text(**{"training.epochs": "-1"}))
        with pytest.raises(ConfigError, match="batch_size"):
            parse_config(cfg_text(**{"training.batch_size": "0"}))
        with pytest.raises(ConfigError, match="val_fraction"):
            parse_config(cfg_text(**{"data.val_fraction": "1.0"}))
        with pytest.raises(ConfigError, match="tau"):
            parse_config(cfg_text(**{"optimizer.tau": "0"}))
        with pytest.raises(ConfigError, match="mc_train"):
            parse_config(cfg_text(**{"optimizer.mc_train": "0"}))
        with pytest.raises(ConfigError, match="momentum"):
            parse_config(cfg_text(**{"optimizer.momentum": "1.0"}))

    def test_incompatible_layer_widths_rejected(self):
        with pytest.raises(ShapeError):
            parse_config(cfg_text(**{"network.layers": "fc(2,4), fc(3,2)"}))

    def test_bop_forces_step_threshold_schedule(self):
        cfg = parse_config(cfg_text(**{
            "optimizer.kind": "bop", "optimizer.lr_start": None,
            "optimizer.threshold": "1e-6", "optimizer.momentum_rate": "1e-4",
        }))
        assert "optimizer.lr_schedule" not in cfg.values
        assert cfg["optimizer.threshold"] == 1e-6

    def test_schedule_objects(self):
        base = {"optimizer.lr_end": "1e-6"}
        assert parse_config(MINIMAL).schedule(10) == Constant(1e-3)
        cos = parse_config(cfg_text(**{"optimizer.lr_schedule": "cosine", **base}))
        assert cos.schedule(10) == Cosine(1e-3, 1e-6, 10)
        geo = parse_config(cfg_text(**{"optimizer.lr_schedule": "geometric", **base}))
        assert geo.schedule(10) == Geometric(1e-3, 1e-6, 10)
        stp = parse_config(cfg_text(**{"optimizer.lr_schedule": "step",
                                       "optimizer.lr_decay": "0.5",
                                       "optimizer.lr_interval": "5"}))
        assert stp.schedule(10) == StepDecay(1e-3, 0.5, 5)

    def test_continual_section_requirements(self):
        with pytest.raises(ConfigError, match="epochs_per_task"):
            parse_config(MINIMAL, require_continual=True)
        cfg = parse_config(MINIMAL + "\n[continual]\nepochs_per_task = 2\n",
                           require_continual=True)
        assert cfg["continual.tasks"] == 3
        assert cfg["continual.chaining"] == "both"
        assert cfg["continual.mc_eval"] == 100
        # section present without require_continual: still parsed
        assert parse_config(
            MINIMAL + "\n[continual]\nepochs_per_task = 2\n"
        )["continual.epochs_per_task"] == 2

    def test_resolved_lines_are_sorted_and_typed(self):
        lines = parse_config(MINIMAL).resolved_lines()
        assert lines == sorted(lines)
        assert "optimizer.lr_start = 0.001" in lines
        assert "data.bias_input = false" in lines
        assert "experiment.seed = 0" in lines


class TestPresets:
    def test_expected_presets_ship(self):
        names = preset_names()
        for expected in ("two_moons", "two_moons_ste", "snelson", "snelson_ste",
                         "mnist_reduced", "mnist_reduced_ste",
                         "continual_reduced", "continual_full",
                         "mnist_full", "mnist_full_ste"):
            assert expected in names, f"missing preset {expected}"

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            preset_path("no_such_preset")

    def test_every_preset_parses(self):
        for name in preset_names():
            cfg = parse_config(preset_path(name),
                               require_continual=name.startswith("continual"))
            assert cfg.name
            cfg.network_spec()
