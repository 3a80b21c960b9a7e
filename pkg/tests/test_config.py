"""Config parsing, overrides, unknown-key rejection, resolved round trip."""

import pytest

from iclseg.attention import ConfigError
from iclseg.config import default_config, parse_config, resolved_text, write_resolved


class TestParsing:
    def test_defaults(self):
        cfg = default_config()
        assert cfg["model"]["height"] == 64
        assert cfg["train"]["beta"] == 50.0
        assert cfg["data"]["unlabeled"] == 60

    def test_file_values_override_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[model]\nheight = 32\nwidth = 32\n\n[train]\nmax_iters = 10\n")
        cfg = parse_config(path)
        assert cfg["model"]["height"] == 32
        assert cfg["train"]["max_iters"] == 10
        assert cfg["train"]["lr0"] == 0.01  # untouched default

    def test_unknown_keys_listed(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[train]\nlearning_rate = 3\n\n[banana]\nripeness = 7\n")
        with pytest.raises(ConfigError) as exc:
            parse_config(path)
        msg = str(exc.value)
        assert "train.learning_rate" in msg and "banana.ripeness" in msg

    def test_flag_overrides(self):
        cfg = parse_config(None, ["train.mode=supervised", "model.base_width=4"])
        assert cfg["train"]["mode"] == "supervised"
        assert cfg["model"]["base_width"] == 4

    def test_bad_override_shapes(self):
        with pytest.raises(ConfigError):
            parse_config(None, ["nonsense"])
        with pytest.raises(ConfigError):
            parse_config(None, ["train.max_iters=abc"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.cfg")


class TestResolved:
    def test_round_trip_reproduces_config(self, tmp_path):
        cfg = parse_config(None, ["train.master_seed=5", "model.height=32",
                                  "model.width=32", "data.val=3"])
        path = write_resolved(cfg, tmp_path)
        again = parse_config(path)
        assert again.values == cfg.values

    def test_derived_objects(self):
        cfg = parse_config(None, ["model.height=32", "model.width=32",
                                  "model.base_width=4", "model.heads=2"])
        mc = cfg.model_config()
        assert mc.scale_grids == [(2, 2), (4, 4), (8, 8)]
        sc = cfg.split_config()
        assert sc.phantom.height == 32
        tc = cfg.train_config()
        assert tc.mode == "icl"

    def test_resolved_text_is_stable(self):
        a = resolved_text(default_config())
        b = resolved_text(default_config())
        assert a == b and a.startswith("[model]")
