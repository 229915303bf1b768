"""
Pruebas de la linea de comandos (codigos de salida y archivos escritos)
"""

import json

import pytest
from typer.testing import CliRunner

from app.api.commands.common import parse_size
from app.core.errors import ConfigError
from app.db.manifest_store import save_config
from app.services.evaluation_service import write_labels, write_predictions
from main import app

runner = CliRunner()


@pytest.fixture
def config_path(tiny_experiment, tmp_path):
    path = tmp_path / "tiny.yaml"
    save_config(tiny_experiment, path)
    return path


@pytest.fixture
def trained(config_path, synth_dir, tmp_path):
    """Corrida corta de entrenamiento via CLI"""
    out = tmp_path / "run"
    result = runner.invoke(app, ["train", "--config", str(config_path), "--manifest",
                                 str(synth_dir / "manifest.yaml"), "--out", str(out), "--epochs", "1", "--seed", "7"])
    assert result.exit_code == 0, result.output
    return out


def test_train_writes_outputs(trained):
    assert (trained / "checkpoints" / "last.ckpt").is_file()
    assert (trained / "training_log.ndjson").is_file()
    metrics = json.loads((trained / "metrics.json").read_text())
    assert metrics["seed"] == 7 and metrics["epochs"] == 1
    manifest = json.loads((trained / "run_manifest.json").read_text())
    assert manifest["seed"] == 7
    assert len(manifest["config_hash"]) == 64
    assert "git_describe" in manifest and "command_line" in manifest


def test_train_missing_manifest_exits_2(config_path, tmp_path):
    missing = tmp_path / "no" / "manifest.yaml"
    result = runner.invoke(app, ["train", "--config", str(config_path), "--manifest", str(missing),
                                 "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert str(missing) in result.output
    assert not (tmp_path / "out").exists()


def test_train_refuses_non_empty_output(config_path, synth_dir, tmp_path):
    out = tmp_path / "busy"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    result = runner.invoke(app, ["train", "--config", str(config_path), "--manifest",
                                 str(synth_dir / "manifest.yaml"), "--out", str(out)])
    assert result.exit_code == 2
    assert (out / "keep.txt").read_text() == "x"


def test_eval_with_reconstruction_grid(trained, synth_dir, tmp_path):
    out = tmp_path / "eval"
    result = runner.invoke(app, ["eval", "--checkpoint", str(trained / "checkpoints" / "last.ckpt"),
                                 "--manifest", str(synth_dir / "manifest.yaml"), "--out", str(out),
                                 "--emit-recon", "--recon-count", "4"])
    assert result.exit_code == 0, result.output
    for name in ("scores.csv", "predictions.csv", "labels.csv", "metrics.json", "recon_grid.png", "run_manifest.json"):
        assert (out / name).is_file(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["samples"] == 6
    assert 0 <= metrics["top1"] <= metrics["top5"] <= 100
    assert "top-1" in result.output


def test_eval_accepts_rectangular_vlr_size(trained, synth_dir, tmp_path):
    out = tmp_path / "eval"
    result = runner.invoke(app, ["eval", "--checkpoint", str(trained / "checkpoints" / "last.ckpt"),
                                 "--manifest", str(synth_dir / "manifest.yaml"), "--out", str(out),
                                 "--vlr-size", "3x2"])
    assert result.exit_code == 0, result.output
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["vlr_size"] == [3, 2]
    assert "VLR 3x2" in result.output


def test_eval_bad_vlr_size_exits_2(trained, synth_dir, tmp_path):
    result = runner.invoke(app, ["eval", "--checkpoint", str(trained / "checkpoints" / "last.ckpt"),
                                 "--manifest", str(synth_dir / "manifest.yaml"), "--out", str(tmp_path / "eval"),
                                 "--vlr-size", "3x"])
    assert result.exit_code == 2


@pytest.mark.parametrize("text, expected", [(None, None), ("8", (8, 8)), ("15x12", (15, 12)), ("4X3", (4, 3))])
def test_parse_size(text, expected):
    assert parse_size(text) == expected


@pytest.mark.parametrize("text", ["abc", "0x3", "3x", "2x2x2", "-4"])
def test_parse_size_rejects_invalid(text):
    with pytest.raises(ConfigError):
        parse_size(text)


def test_eval_corrupt_checkpoint_exits_3(trained, synth_dir, tmp_path):
    ckpt = tmp_path / "broken.ckpt"
    data = bytearray((trained / "checkpoints" / "last.ckpt").read_bytes())
    data[100] ^= 0xFF
    ckpt.write_bytes(bytes(data))
    out = tmp_path / "eval"
    result = runner.invoke(app, ["eval", "--checkpoint", str(ckpt), "--manifest",
                                 str(synth_dir / "manifest.yaml"), "--out", str(out)])
    assert result.exit_code == 3
    assert not out.exists()
    assert not any(p.name.startswith(".eval") for p in tmp_path.iterdir())


def test_recon_command(trained, synth_dir, tmp_path):
    out = tmp_path / "grid.png"
    result = runner.invoke(app, ["recon", "--checkpoint", str(trained / "checkpoints" / "last.ckpt"),
                                 "--manifest", str(synth_dir / "manifest.yaml"), "--out", str(out), "--count", "3"])
    assert result.exit_code == 0, result.output
    assert out.is_file()


def test_synth_command(tmp_path):
    out = tmp_path / "data"
    result = runner.invoke(app, ["synth", "--out", str(out), "--classes", "2", "--per-class", "2",
                                 "--hr-size", "16", "--vlr-size", "4", "--seed", "1"])
    assert result.exit_code == 0, result.output
    assert (out / "manifest.yaml").is_file()
    assert len(list((out / "images").glob("*.png"))) == 2 * 2 + 2 * 1


def _prediction_files(tmp_path, pred_a, pred_b, labels):
    ids = [f"s{i}" for i in range(len(labels))]
    write_predictions(tmp_path / "a.csv", ids, pred_a)
    write_predictions(tmp_path / "b.csv", ids[:len(pred_b)], pred_b)
    write_labels(tmp_path / "y.csv", ids, labels)
    return [str(tmp_path / n) for n in ("a.csv", "b.csv", "y.csv")]


def test_mcnemar_identical_predictions(tmp_path):
    files = _prediction_files(tmp_path, [0, 1, 1, 0], [0, 1, 1, 0], [0, 1, 0, 0])
    result = runner.invoke(app, ["mcnemar", files[0], files[0], files[2]])
    assert result.exit_code == 0
    assert "no discordant pairs" in result.output


def test_mcnemar_significant(tmp_path):
    labels = [0] * 40
    files = _prediction_files(tmp_path, [0] * 32 + [1] * 8, [1] * 30 + [0] * 2 + [0] * 2 + [1] * 6, labels)
    result = runner.invoke(app, ["mcnemar", *files])
    assert result.exit_code == 0, result.output
    assert "significant at 99% C.I." in result.output
    assert "not significant" not in result.output


def test_mcnemar_misaligned_exits_2(tmp_path):
    files = _prediction_files(tmp_path, [0, 1, 1], [0, 1], [0, 1, 1])
    result = runner.invoke(app, ["mcnemar", *files])
    assert result.exit_code == 2


def test_gradcheck_command(tmp_path):
    report = tmp_path / "grad.json"
    ok = runner.invoke(app, ["gradcheck", "--only", "sigmoid", "--trials", "2", "--report", str(report)])
    assert ok.exit_code == 0, ok.output
    assert json.loads(report.read_text())["passed"] is True

    bad = runner.invoke(app, ["gradcheck", "--only", "sigmoid", "--trials", "2", "--inject-bug", "sigmoid"])
    assert bad.exit_code == 1
    assert "sigmoid" in bad.output

    loose = runner.invoke(app, ["gradcheck", "--only", "sigmoid", "--trials", "2", "--inject-bug", "sigmoid",
                                "--tol", "1e-2"])
    assert loose.exit_code == 1
    looser = runner.invoke(app, ["gradcheck", "--only", "sigmoid", "--trials", "2", "--inject-bug", "sigmoid",
                                 "--tol", "0.5"])
    assert looser.exit_code == 0
