import pytest

from maskpoint import config
from maskpoint.errors import InputError, ParseError
from maskpoint.pipeline import TrainConfig


class TestParse:
    def test_basic(self):
        text = "# desk run\nepochs = 3\n\nmodel.dim=32   # narrower\nmask.mode = block\n"
        assert config.parse_config(text) == {"epochs": "3", "model.dim": "32", "mask.mode": "block"}

    def test_missing_equals(self):
        with pytest.raises(ParseError) as info:
            config.parse_config("epochs = 3\nbatch_size 4\n")
        assert info.value.line == 2

    def test_duplicate(self):
        with pytest.raises(ParseError) as info:
            config.parse_config("seed = 1\nseed = 2\n")
        assert info.value.line == 2

    def test_empty_value(self):
        with pytest.raises(ParseError):
            config.parse_config("seed =\n")


class TestApply:
    def test_types(self):
        cfg = config.apply_config({"epochs": "3", "base_lr": "2e-3", "augment": "false",
                                   "model.dim": "32", "mask.mode": "block", "loss.focal_gamma": "1"})
        assert cfg.epochs == 3 and cfg.base_lr == 2e-3 and cfg.augment is False
        assert cfg.model.dim == 32 and cfg.mask.mode == "block" and cfg.loss.focal_gamma == 1.0
        assert cfg.model.n_heads == TrainConfig().model.n_heads

    def test_unknown_key(self):
        with pytest.raises(InputError, match="unknown"):
            config.apply_config({"model.width": "3"})

    def test_bad_value(self):
        with pytest.raises(InputError):
            config.apply_config({"epochs": "three"})
        with pytest.raises(InputError):
            config.apply_config({"augment": "maybe"})

    def test_validation_runs(self):
        with pytest.raises(InputError):
            config.apply_config({"mask.ratio": "1.5"})

    def test_format_round_trip(self):
        cfg = config.apply_config({"seed": "9", "model.dim": "48", "base_lr": "0.1", "augment": "true"})
        text = config.format_config(cfg)
        assert config.apply_config(config.parse_config(text)) == cfg
        assert "model.dim = 48" in text and "augment = true" in text

    def test_every_key_documented_in_output(self):
        text = config.format_config(TrainConfig())
        assert len(text.splitlines()) == len(config.config_keys())
