"""End-to-end command-line flows on miniature configurations."""

import numpy as np
import pytest

import iclseg.autodiff as ad
from iclseg.cli import main
from iclseg.phantoms import read_sample

MINI_ARGS = [
    "--set", "model.height=32", "--set", "model.width=32",
    "--set", "model.classes=3", "--set", "model.base_width=4",
    "--set", "model.heads=2", "--set", "data.labeled=2",
    "--set", "data.unlabeled=4", "--set", "data.val=2",
    "--set", "train.max_iters=6", "--set", "train.val_every=3",
]


def gen_args(out, seed=0):
    return ["gen-data", "--seed", str(seed), "--n-labeled", "2",
            "--n-unlabeled", "4", "--n-val", "2", "--out", str(out)]


class TestGenData:
    def test_writes_expected_pools(self, tmp_path, capsys):
        assert main(gen_args(tmp_path)) == 0
        assert len(list(tmp_path.glob("labeled_*.icls"))) == 2
        assert len(list(tmp_path.glob("unlabeled_*.icls"))) == 4
        assert len(list(tmp_path.glob("val_*.icls"))) == 2
        assert "labeled=2" in capsys.readouterr().out

    def test_same_seed_identical_bytes(self, tmp_path):
        main(gen_args(tmp_path / "a"))
        main(gen_args(tmp_path / "b"))
        for pa in sorted((tmp_path / "a").glob("*.icls")):
            pb = tmp_path / "b" / pa.name
            assert pa.read_bytes() == pb.read_bytes()

    def test_mask_round_trip(self, tmp_path):
        main(gen_args(tmp_path))
        from iclseg.phantoms import SplitConfig, make_split
        split = make_split(SplitConfig(n_labeled=2, n_unlabeled=4, n_val=2,
                                       master_seed=0))
        for i, sample in enumerate(split.val):
            loaded, _ = read_sample(tmp_path / f"val_{i:03d}.icls")
            np.testing.assert_array_equal(loaded.mask, sample.mask)
            np.testing.assert_array_equal(loaded.image, sample.image)


class TestTrain:
    def test_artifacts_and_exit_code(self, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--out", str(out)] + MINI_ARGS) == 0
        for name in ("config.resolved", "metrics.csv", "best.ckpt", "final.ckpt"):
            assert (out / name).exists(), name

    def test_identical_runs_identical_csv(self, tmp_path):
        main(["train", "--out", str(tmp_path / "r1")] + MINI_ARGS)
        main(["train", "--out", str(tmp_path / "r2")] + MINI_ARGS)
        assert ((tmp_path / "r1" / "metrics.csv").read_bytes()
                == (tmp_path / "r2" / "metrics.csv").read_bytes())

    def test_supervised_only_resolves_weights_to_zero(self, tmp_path):
        out = tmp_path / "sup"
        main(["train", "--out", str(out), "--supervised-only"] + MINI_ARGS)
        resolved = (out / "config.resolved").read_text()
        assert "mode = supervised" in resolved
        assert "alpha = 0.0" in resolved and "beta = 0.0" in resolved

    def test_rerun_from_resolved_config_reproduces(self, tmp_path):
        out1 = tmp_path / "orig"
        main(["train", "--out", str(out1)] + MINI_ARGS)
        out2 = tmp_path / "replay"
        assert main(["train", "--config", str(out1 / "config.resolved"),
                     "--out", str(out2)]) == 0
        assert ((out1 / "metrics.csv").read_bytes()
                == (out2 / "metrics.csv").read_bytes())

    def test_unknown_key_fails(self, tmp_path):
        code = main(["train", "--out", str(tmp_path), "--set", "train.warmup=5"])
        assert code == 1


class TestEval:
    @pytest.fixture()
    def trained(self, tmp_path):
        run = tmp_path / "run"
        main(["train", "--out", str(run)] + MINI_ARGS)
        data = tmp_path / "data"
        # export only the validation pool for evaluation
        main(["gen-data", "--seed", "0", "--n-labeled", "2", "--n-unlabeled", "4",
              "--n-val", "2", "--out", str(data)] + MINI_ARGS[:10])
        for p in list(data.glob("labeled_*.icls")) + list(data.glob("unlabeled_*.icls")):
            p.unlink()
        return run, data

    def test_reproduces_last_validation_rows(self, trained, tmp_path):
        run, data = trained
        out = tmp_path / "eval"
        assert main(["eval", "--checkpoint", str(run / "final.ckpt"),
                     "--data", str(data), "--out", str(out)]) == 0
        eval_lines = (out / "eval_metrics.csv").read_text().strip().split("\n")[1:]
        train_lines = (run / "metrics.csv").read_text().strip().split("\n")
        last_iter = train_lines[-1].split(",")[0]
        tail = [l.split(",", 1)[1] for l in train_lines if l.startswith(f"{last_iter},")]
        assert eval_lines == tail

    def test_oracle_mode_is_perfect(self, trained, tmp_path, capsys):
        _, data = trained
        out = tmp_path / "oracle"
        assert main(["eval", "--oracle", "--data", str(data), "--out", str(out)]) == 0
        lines = (out / "eval_metrics.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 3  # 2 classes + mean
        for line in lines[1:]:
            _, d, h = line.split(",")
            assert float(d) == 1.0 and float(h) == 0.0

    def test_plot_data_long_form(self, trained, tmp_path):
        run, data = trained
        out = tmp_path / "plots"
        main(["eval", "--checkpoint", str(run / "final.ckpt"),
              "--data", str(data), "--out", str(out)])
        lines = (out / "plot_data.csv").read_text().strip().split("\n")
        assert lines[0] == "sample,class,metric,value"
        assert len(lines) == 1 + 2 * 2 * 2  # samples x classes x metrics

    def test_checkpoint_required_without_oracle(self, trained, tmp_path, capsys):
        _, data = trained
        assert main(["eval", "--data", str(data), "--out", str(tmp_path)]) == 2


class TestEvalPurity:
    def test_eval_ignores_head_parameters(self, tmp_path):
        # strip every non-backbone tensor from the checkpoint: eval must
        # still load, and its output must not change
        run = tmp_path / "run"
        main(["train", "--out", str(run)] + MINI_ARGS)
        data = tmp_path / "data"
        main(["gen-data", "--seed", "0", "--n-labeled", "2", "--n-unlabeled", "4",
              "--n-val", "2", "--out", str(data)] + MINI_ARGS[:10])
        for p in list(data.glob("labeled_*.icls")) + list(data.glob("unlabeled_*.icls")):
            p.unlink()

        from iclseg.trainer import load_checkpoint, save_checkpoint
        state = load_checkpoint(run / "final.ckpt")
        stripped = {k: v for k, v in state.items() if k.startswith("param/backbone")}
        assert len(stripped) < len(state)
        save_checkpoint(stripped, run / "backbone_only.ckpt")

        main(["eval", "--checkpoint", str(run / "final.ckpt"),
              "--data", str(data), "--out", str(tmp_path / "full")])
        main(["eval", "--checkpoint", str(run / "backbone_only.ckpt"),
              "--data", str(data), "--out", str(tmp_path / "stripped")])
        assert ((tmp_path / "full" / "eval_metrics.csv").read_bytes()
                == (tmp_path / "stripped" / "eval_metrics.csv").read_bytes())


class TestVerifyCommand:
    def test_fast_suite_passes(self, capsys):
        assert main(["verify", "--fast"]) == 0
        out = capsys.readouterr().out
        assert "PASS op-gradients" in out and "FAIL" not in out

    def test_injected_softmax_bug_fails_gradient_group(self, monkeypatch, capsys):
        import iclseg.autodiff as autodiff

        original = autodiff._softmax_backward
        monkeypatch.setattr(autodiff, "_softmax_backward",
                            lambda y, g, axis: -original(y, g, axis))
        assert main(["verify", "--fast"]) == 1
        assert "FAIL op-gradients" in capsys.readouterr().out
