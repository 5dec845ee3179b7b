import json

import numpy as np
import pytest

from vlcloc.cli import main
from vlcloc.data import load_csv


@pytest.fixture()
def tiny_config(tmp_path):
    """Config small enough for second-scale CLI runs."""
    doc = {
        "model": {"hidden_sizes": [16], "activation": "tanh"},
        "train": {"epochs": 4, "learning_rate": 1e-3},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def dataset_csv(tmp_path, tiny_config):
    out = tmp_path / "dataset.csv"
    assert run_cli("--config", tiny_config, "--out", out, "synth") == 0
    return out


class TestSynth:
    def test_writes_schema_with_thirteen_columns(self, dataset_csv):
        header = dataset_csv.read_text().splitlines()[0].split(",")
        assert len(header) == 13
        assert len(load_csv(dataset_csv)) == 1440

    def test_same_seed_byte_identical(self, tmp_path, tiny_config):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run_cli("--config", tiny_config, "--out", a, "synth") == 0
        assert run_cli("--config", tiny_config, "--out", b, "synth") == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_flag_changes_output(self, tmp_path, tiny_config):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run_cli("--config", tiny_config, "--out", a, "synth") == 0
        assert run_cli("--config", tiny_config, "--seed", 123, "--out", b, "synth") == 0
        assert a.read_bytes() != b.read_bytes()

    def test_missing_layout_file_is_config_error(self, tmp_path, tiny_config):
        code = run_cli("--config", tiny_config, "--out", tmp_path / "x.csv",
                       "synth", "--layout", tmp_path / "nope.json")
        assert code == 1


class TestTrain:
    def test_writes_artifacts(self, tmp_path, tiny_config, dataset_csv):
        out = tmp_path / "base-run"
        assert run_cli("--config", tiny_config, "--out", out, "train",
                       "--data", dataset_csv) == 0
        assert (out / "checkpoint.ckpt.json").exists()
        assert (out / "report.csv").exists()
        assert (out / "summary.json").exists()
        report_lines = (out / "report.csv").read_text().strip().splitlines()
        assert len(report_lines) == 1 + 4  # header + epochs

    def test_missing_dataset_is_config_error(self, tmp_path, tiny_config):
        assert run_cli("--config", tiny_config, "--out", tmp_path / "r", "train",
                       "--data", tmp_path / "nope.csv") == 1


class TestPerturb:
    def test_nf_zero_preserves_values(self, tmp_path, tiny_config, dataset_csv):
        out = tmp_path / "noisy.csv"
        assert run_cli("--config", tiny_config, "--out", out, "perturb",
                       "--data", dataset_csv, "--nf", 0) == 0
        a, b = load_csv(dataset_csv), load_csv(out)
        assert np.array_equal(a.rssi, b.rssi)

    def test_noise_scale_applied(self, tmp_path, tiny_config, dataset_csv):
        out = tmp_path / "noisy.csv"
        assert run_cli("--config", tiny_config, "--out", out, "perturb",
                       "--data", dataset_csv, "--nf", 4, "--sigma-base", 0.25) == 0
        diff = load_csv(out).rssi - load_csv(dataset_csv).rssi
        assert 0.95 <= diff.std() <= 1.05


class TestTransferEvaluateCdf:
    @pytest.fixture()
    def base_run(self, tmp_path, tiny_config, dataset_csv):
        out = tmp_path / "base-run"
        assert run_cli("--config", tiny_config, "--out", out, "train",
                       "--data", dataset_csv) == 0
        return out

    def test_transfer_writes_artifacts(self, tmp_path, tiny_config, base_run):
        out = tmp_path / "tl-run"
        assert run_cli("--config", tiny_config, "--out", out, "transfer",
                       "--base", base_run / "checkpoint.ckpt.json",
                       "--train-data", base_run / "train_split.csv",
                       "--val-data", base_run / "val_split.csv") == 0
        assert (out / "checkpoint.ckpt.json").exists()
        assert (out / "report.csv").exists()

    def test_transfer_missing_base_fails(self, tmp_path, tiny_config, base_run):
        code = run_cli("--config", tiny_config, "--out", tmp_path / "t", "transfer",
                       "--base", tmp_path / "nope.ckpt.json",
                       "--train-data", base_run / "train_split.csv",
                       "--val-data", base_run / "val_split.csv")
        assert code != 0

    def test_evaluate_matches_final_training_error(self, tmp_path, tiny_config,
                                                   base_run):
        out = tmp_path / "metrics.json"
        assert run_cli("--config", tiny_config, "--out", out, "evaluate",
                       "--checkpoint", base_run / "checkpoint.ckpt.json",
                       "--data", base_run / "train_split.csv") == 0
        doc = json.loads(out.read_text())
        summary = json.loads((base_run / "summary.json").read_text())
        assert doc["mean_err_m"] == pytest.approx(
            summary["final"]["train_err_m"], abs=1e-9)

    def test_cdf_export(self, tmp_path, tiny_config, base_run):
        out = tmp_path / "cdf.csv"
        assert run_cli("--config", tiny_config, "--out", out, "cdf",
                       "--checkpoint", base_run / "checkpoint.ckpt.json",
                       "--data", base_run / "val_split.csv") == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "error_m,cum_fraction"
        assert float(lines[-1].split(",")[1]) == pytest.approx(1.0)

    def test_corrupt_checkpoint_is_runtime_error(self, tmp_path, tiny_config,
                                                 base_run):
        bad = tmp_path / "bad.ckpt.json"
        bad.write_text("{not json")
        code = run_cli("--config", tiny_config, "--out", tmp_path / "m.json",
                       "evaluate", "--checkpoint", bad,
                       "--data", base_run / "val_split.csv")
        assert code == 2


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_required_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 1

    def test_invalid_config_json_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["--config", str(bad), "synth"]) == 1

    def test_schema_violation_reports_json_pointer(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"batch_size": 0}}))
        assert main(["--config", str(bad), "synth"]) == 1
        assert "/train/batch_size" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"trian": {}}))
        assert main(["--config", str(bad), "synth"]) == 1
