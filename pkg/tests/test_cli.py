import io

import numpy as np
import pytest

from ctrelm import cli
from ctrelm.cli import main, resolve_config
from ctrelm.data import FileBatches, HashEncoder, SplitSpec, load_schema, split_dataset
from ctrelm.errors import ConfigError
from ctrelm.metrics import evaluate
from ctrelm.multilayer import MlElmModel, load_any_model
from ctrelm.synthetic import planted_ctr


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = planted_ctr(600, n_fields=5, vocab=8, weight_scale=1.0, seed=3)
    data.write_tsv(root / "data.tsv")
    data.write_schema(root / "schema.txt")
    return root


def _base(root, *extra):
    return ["--data", str(root / "data.tsv"), "--schema", str(root / "schema.txt"),
            "--hidden", "30", "--hash-dims", "256", "--batch-size", "128", *extra]


def _echo(text):
    return dict(line[2:].split("=", 1) for line in text.splitlines() if line.startswith("# "))


class TestConfig:
    def test_defaults_match_reference_settings(self, dataset):
        cfg = resolve_config(["--train", "--data", "x", "--schema", str(dataset / "schema.txt"),
                              "--model-out", "m"])
        echo = cfg.echo()
        assert echo["batch_size"] == 10000 and echo["hidden"] == 1000
        assert echo["activation"] == "relu" and echo["emb_dim"] == 8
        assert echo["split"] == "0.8/0.1/0.1" and echo["model"] == "elm"

    @pytest.mark.parametrize("argv", [
        [],
        ["--train"],
        ["--train", "--eval", "--data", "d", "--schema", "s"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--activation", "tanh"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--hidden", "0"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--lambda", "-1"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--threshold", "best"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--layers", "500;x"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--split", "8/1"],
        ["--train", "--data", "d", "--schema", "SCHEMA"],
        ["--eval", "--data", "d", "--schema", "SCHEMA"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--mode", "embedded"],
        ["--pretrain-emb", "--data", "d", "--schema", "SCHEMA"],
        ["--train", "--data", "d", "--schema", "SCHEMA", "--model-out", "m", "--layers", "4",
         "--activation", "rbf"],
    ])
    def test_config_errors_exit_1(self, argv, dataset, capsys):
        argv = [str(dataset / "schema.txt") if a == "SCHEMA" else a for a in argv]
        assert main(argv) == 1
        assert "config error" in capsys.readouterr().err

    def test_config_checked_before_data_is_read(self, dataset, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("data was read")
        monkeypatch.setattr(cli, "count_records", boom)
        monkeypatch.setattr(cli, "iter_records", boom)
        argv = _base(dataset, "--train", "--model-out", "m", "--mode", "embedded")
        with pytest.raises(ConfigError, match="emb-table"):
            resolve_config(argv)
        assert main(argv) == 1

    def test_config_file_and_flag_precedence(self, dataset):
        conf = dataset / "run.conf"
        conf.write_text("# experiment\nhidden = 77\nactivation = sigmoid\nseed = 5\n")
        cfg = resolve_config(_base(dataset, "--train", "--model-out", "m", "--config", str(conf)))
        assert cfg.hidden == 30 and cfg.activation == "sigmoid" and cfg.seed == 5

    def test_unknown_config_key(self, dataset):
        conf = dataset / "bad.conf"
        conf.write_text("hiden = 3\n")
        with pytest.raises(ConfigError, match="hiden"):
            resolve_config(_base(dataset, "--train", "--model-out", "m", "--config", str(conf)))

    def test_layers_select_ml_elm(self, dataset):
        cfg = resolve_config(_base(dataset, "--train", "--model-out", "m", "--layers", "500;500"))
        assert cfg.model_kind == "ml-elm" and cfg.layers == [500, 500]


class TestTrain:
    def test_train_prints_tables_and_is_deterministic(self, dataset, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            assert main(_base(dataset, "--train", "--model-out", str(tmp_path / name),
                              "--metrics-out", str(tmp_path / f"{name}.kv"))) == 0
            outs.append(capsys.readouterr().out)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
        assert (tmp_path / "a.kv").read_text().split("timing")[0] == (tmp_path / "b.kv").read_text().split("timing")[0]
        text = outs[0]
        assert "split\tlogloss\tauc" in text and "batches\tmean_batch_seconds" in text
        echo = _echo(text)
        assert echo["hidden"] == "30" and echo["batch_size"] == "128"
        kv = dict(line.split("=", 1) for line in (tmp_path / "a.kv").read_text().splitlines())
        assert {"valid.auc", "valid.f1", "timing.total_seconds", "config.seed"} <= set(kv)

    def test_train_ml_elm_500_500(self, dataset, tmp_path, capsys):
        path = tmp_path / "ml"
        assert main(_base(dataset, "--train", "--model-out", str(path), "--layers", "500;500",
                          "--hash-dims", "64")) == 0
        model = load_any_model(path)
        assert isinstance(model, MlElmModel) and model.layer_dims == [500, 500]
        assert _echo(capsys.readouterr().out)["layers"] == "500;500"

    def test_timing_throughput_consistent(self, dataset, tmp_path):
        cfg = resolve_config(_base(dataset, "--train", "--model-out", str(tmp_path / "m")))
        model, _ = cli.run_train(cfg, out=io.StringIO())
        t = model.timing
        assert t.instances_per_second == pytest.approx(t.n_instances / t.total_seconds, rel=0.01)
        assert t.total_seconds >= t.mean_batch_seconds * t.n_batches * (1 - 1e-9)
        assert t.n_instances == 480

    def test_missing_data_file_exit_2(self, dataset, tmp_path, capsys):
        argv = _base(dataset, "--train", "--model-out", str(tmp_path / "m"))
        argv[1] = str(tmp_path / "nope.tsv")
        assert main(argv) == 2
        assert "nope.tsv" in capsys.readouterr().err

    def test_bad_record_exit_2(self, dataset, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("1\ta\tb\tc\td\te\n3\ta\tb\tc\td\te\n" * 5)
        argv = _base(dataset, "--train", "--model-out", str(tmp_path / "m"))
        argv[1] = str(bad)
        assert main(argv) == 2
        assert "line 2" in capsys.readouterr().err

    def test_singular_solve_exit_3(self, dataset, tmp_path, capsys):
        argv = _base(dataset, "--train", "--model-out", str(tmp_path / "m"), "--lambda", "0",
                     "--hidden", "400", "--hash-dims", "4")
        assert main(argv) == 3
        assert "numeric error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def model_path(dataset):
    path = dataset / "model.elmk"
    assert main(_base(dataset, "--train", "--model-out", str(path), "--seed", "4")) == 0
    return path


class TestEvalPredict:
    def test_eval_matches_in_memory(self, dataset, model_path, capsys):
        capsys.readouterr()
        report = cli.run_eval(resolve_config(_base(dataset, "--eval", "--model-in", str(model_path),
                                                   "--seed", "4")))
        model = load_any_model(model_path)
        enc = HashEncoder(load_schema(dataset / "schema.txt"), 256, 4)
        rows = split_dataset(600, SplitSpec())[2]
        scores, labels = cli.score_batches(model, FileBatches(dataset / "data.tsv", enc.schema, enc, 50, rows))
        ref = evaluate(scores, labels)
        assert report.auc == pytest.approx(ref.auc, abs=1e-12)
        assert report.logloss == pytest.approx(ref.logloss, abs=1e-12)
        assert "test\t" in capsys.readouterr().out

    def test_eval_deterministic(self, dataset, model_path, capsys):
        argv = _base(dataset, "--eval", "--model-in", str(model_path), "--eval-split", "all")
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first

    def test_memorized_training_split_tuned_f1(self, tmp_path):
        data = planted_ctr(40, n_fields=3, vocab=1000, seed=1)
        data.write_tsv(tmp_path / "d.tsv")
        data.write_schema(tmp_path / "s.txt")
        common = ["--data", str(tmp_path / "d.tsv"), "--schema", str(tmp_path / "s.txt"),
                  "--hash-dims", "4096", "--hidden", "60", "--lambda", "1e-10", "--activation", "sigmoid"]
        assert main(common + ["--train", "--model-out", str(tmp_path / "m")]) == 0
        report = cli.run_eval(resolve_config(common + ["--eval", "--model-in", str(tmp_path / "m"),
                                                       "--eval-split", "train", "--threshold", "tuned"]))
        assert report.f1 == 1.0

    def test_predict_lines_match_eval_scores(self, dataset, model_path, tmp_path):
        out = tmp_path / "scores.txt"
        assert main(_base(dataset, "--predict", "--model-in", str(model_path), "--out", str(out))) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 600
        model = load_any_model(model_path)
        enc = HashEncoder(load_schema(dataset / "schema.txt"), 256, 4)
        scores, _ = cli.score_batches(model, FileBatches(dataset / "data.tsv", enc.schema, enc, 600))
        np.testing.assert_array_equal(np.array([float(s) for s in lines]), scores)

    def test_predict_empty_input(self, dataset, model_path, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        argv = _base(dataset, "--predict", "--model-in", str(model_path), "--out", str(tmp_path / "o"))
        argv[1] = str(empty)
        assert main(argv) == 0
        assert (tmp_path / "o").read_text() == ""

    def test_missing_model_exit_2(self, dataset, tmp_path):
        assert main(_base(dataset, "--eval", "--model-in", str(tmp_path / "none"))) == 2


class TestEmbeddedMode:
    def test_pretrain_then_train_embedded(self, dataset, tmp_path, capsys):
        table = tmp_path / "t.elme"
        assert main(_base(dataset, "--pretrain-emb", "--emb-table", str(table), "--emb-buckets", "64")) == 0
        assert "pretrained 5 fields x d=8 on 480 instances" in capsys.readouterr().out
        model = tmp_path / "m"
        assert main(_base(dataset, "--train", "--mode", "embedded", "--emb-table", str(table),
                          "--model-out", str(model))) == 0
        assert load_any_model(model).input_dim == 40
        capsys.readouterr()
        assert main(_base(dataset, "--eval", "--mode", "embedded", "--emb-table", str(table),
                          "--model-in", str(model))) == 0
        assert "test\t" in capsys.readouterr().out

    def test_embedded_table_field_mismatch(self, dataset, tmp_path):
        from ctrelm.data import FeatureSchema
        from ctrelm.embeddings import init_table, save_table
        save_table(init_table(FeatureSchema((("x", "categorical"),)), d=2, bucket_counts=4), tmp_path / "t")
        assert main(_base(dataset, "--train", "--mode", "embedded", "--emb-table", str(tmp_path / "t"),
                          "--model-out", str(tmp_path / "m"))) == 2
