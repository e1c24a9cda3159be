"""Test cases for the command-line entry point."""

# Import built-in modules
import json
from pathlib import Path

# Import third-party modules
import pytest

# Import local modules
from authguard.__version__ import __version__
from authguard.cli import CAPTIONS_FILE
from authguard.cli import CONFIG_FILE
from authguard.cli import INSTRUCTIONS_FILE
from authguard.cli import MANIFEST_FILE
from authguard.cli import main
from authguard.config import load_run_config
from authguard.metrics import read_predictions
from authguard.reasoning import REASONER_CHECKPOINT
from authguard.synthface import load_corpus
from authguard.train import ABLATION_FILE
from authguard.train import FINAL_CHECKPOINT
from authguard.train import UNTRAINED_CHECKPOINT


def _stdout_json(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


def _manifest(directory: Path) -> dict:
    return json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))


@pytest.fixture
def config_file(tiny_payload, tmp_path) -> Path:
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_payload), encoding="utf-8")
    return path


def test_help_exits_zero(capsys):
    """Test that --help prints usage and exits cleanly."""
    assert main(["--help"]) == 0
    assert "train-encoder" in capsys.readouterr().out


def test_version(capsys):
    """Test the --version flag."""
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["synth", "--seed", "1"],
        ["synth", "--seed", "1", "--n", "4", "--out", "x", "--bogus"],
        ["synth", "--seed", "1", "--n", "4", "--out", "x", "--train.epochs=2"],
        ["eval", "--split", "holdout"],
        ["train-reasoner", "--corpus", "c", "--instructions", "i", "--out", "o"],
        ["train-reasoner", "--corpus", "c", "--instructions", "i", "--out", "o", "--encoder=e", "--untrained-encoder"],
    ],
)
def test_usage_errors_exit_two(argv):
    """Test that missing, unknown and misplaced arguments are usage errors."""
    assert main(argv) == 2


def test_eval_without_source_exits_one():
    """Test that eval with nothing to score is a runtime failure."""
    assert main(["eval"]) == 1


def test_eval_checkpoint_needs_corpus(tmp_path):
    """Test that scoring a checkpoint without a corpus fails."""
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.pt")]) == 1


def test_missing_corpus_exits_one(tmp_path):
    """Test that a missing corpus directory is reported, not raised."""
    assert main(["datagen", "--stub", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "out")]) == 1


def test_synth_writes_corpus_and_manifest(tmp_path):
    """Test the synth command output directory."""
    out = tmp_path / "corpus"
    assert main(["synth", "--seed", "5", "--n", "8", "--side", "16", "--out", str(out)]) == 0
    corpus = load_corpus(out)
    assert len(corpus.samples) == 8
    manifest = _manifest(out)
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 5
    assert manifest["finished"] is not None


def test_datagen_stub(tiny_corpus, corpus_dir, tmp_path):
    """Test offline caption and instruction generation."""
    out = tmp_path / "data"
    assert main(["datagen", "--stub", "--corpus", str(corpus_dir), "--out", str(out)]) == 0
    assert (out / CAPTIONS_FILE).is_file()
    assert (out / INSTRUCTIONS_FILE).is_file()
    assert _manifest(out)["seed"] == tiny_corpus.seed


def test_train_encoder_dot_overrides(corpus_dir, config_file, tmp_path):
    """Test that --section.field=value overrides reach the saved config."""
    out = tmp_path / "runs"
    argv = [
        "train-encoder",
        "--corpus",
        str(corpus_dir),
        "--out",
        str(out),
        "--ablation",
        "none",
        "--config",
        str(config_file),
        "--train.lr_base=5e-4",
        "--set",
        "train.batch_size=8",
    ]
    assert main(argv) == 0
    saved = load_run_config(out / "none" / CONFIG_FILE)
    assert saved.train.lr_base == 5e-4
    assert saved.train.batch_size == 8
    assert saved.train.preset_name == "none"
    assert (out / "none" / FINAL_CHECKPOINT).is_file()
    assert (out / ABLATION_FILE).is_file()


def test_train_encoder_contrastive_needs_captions(corpus_dir, config_file, tmp_path):
    """Test that the full preset without captions fails with exit code 1."""
    argv = ["train-encoder", "--corpus", str(corpus_dir), "--out", str(tmp_path / "runs"), "--config", str(config_file)]
    assert main(argv) == 1


def test_full_pipeline(tmp_path, config_file, capsys):
    """Test synth, datagen, both training stages, eval, generate and report end to end."""
    corpus = tmp_path / "corpus"
    data = tmp_path / "data"
    runs = tmp_path / "runs"
    stage2 = tmp_path / "stage2"
    report = tmp_path / "report"

    synth = ["synth", "--seed", "3", "--n", "40", "--side", "16", "--out", str(corpus)]
    assert main(synth) == 0
    assert main(["datagen", "--stub", "--corpus", str(corpus), "--out", str(data)]) == 0
    capsys.readouterr()

    encoder_argv = [
        "train-encoder",
        "--corpus",
        str(corpus),
        "--captions",
        str(data / CAPTIONS_FILE),
        "--out",
        str(runs),
        "--config",
        str(config_file),
    ]
    assert main(encoder_argv) == 0
    rows = _stdout_json(capsys)["rows"]
    assert [row["preset"] for row in rows] == ["full"]
    encoder = runs / "full" / FINAL_CHECKPOINT
    assert _manifest(runs / "full")["config_hash"] == load_run_config(runs / "full" / CONFIG_FILE).hash()

    reasoner_argv = [
        "train-reasoner",
        "--corpus",
        str(corpus),
        "--instructions",
        str(data / INSTRUCTIONS_FILE),
        "--encoder",
        str(encoder),
        "--out",
        str(stage2),
    ]
    assert main(reasoner_argv) == 0
    tuned = _stdout_json(capsys)
    assert tuned["final_loss"] < tuned["initial_loss"]
    assert (stage2 / REASONER_CHECKPOINT).is_file()

    predictions = tmp_path / "eval" / "predictions.jsonl"
    eval_argv = ["eval", "--checkpoint", str(encoder), "--corpus", str(corpus), "--pred-out", str(predictions)]
    assert main(eval_argv) == 0
    detection = _stdout_json(capsys)
    assert 0.0 <= detection["auc"] <= 1.0
    assert detection["bleu4"] is None
    assert len(read_predictions(predictions)) == detection["n"]

    reasoner_eval = [
        "eval",
        "--reasoner",
        str(stage2 / REASONER_CHECKPOINT),
        "--corpus",
        str(corpus),
        "--instructions",
        str(data / INSTRUCTIONS_FILE),
    ]
    assert main(reasoner_eval) == 0
    captioned = _stdout_json(capsys)
    assert captioned["vqa_average"] is not None
    assert captioned["verdict_agreement"] is not None

    assert main(["eval", "--pred", str(predictions)]) == 0
    assert _stdout_json(capsys)["auc"] == detection["auc"]

    image_ids = [sample.id for sample in load_corpus(corpus).samples[:2]]
    generate_argv = ["generate", "--reasoner", str(stage2 / REASONER_CHECKPOINT), "--corpus", str(corpus)]
    assert main([*generate_argv, "--image-id", *image_ids]) == 0
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [line["image_id"] for line in lines] == image_ids
    assert all(line["verdict"] in {"real", "fake", "unknown"} for line in lines)

    assert main(["report", "--run", str(tmp_path), "--out", str(report)]) == 0
    rendered = {path.name for path in report.iterdir()}
    assert {"ablation_runs.md", "ablation_runs.png", "stage1_runs_full.png", "stage2_stage2.png"} <= rendered


def test_train_encoder_rejects_zero_epochs(corpus_dir, config_file, tmp_path):
    """Test that an invalid --epochs is a config error with exit code 1."""
    out = tmp_path / "runs"
    argv = ["train-encoder", "--corpus", str(corpus_dir), "--out", str(out), "--config", str(config_file)]
    assert main([*argv, "--epochs", "0"]) == 1
    assert not (out / "full").exists()


def test_train_encoder_seed_and_epochs_flags(corpus_dir, config_file, tmp_path):
    """Test that --seed and --epochs win over the config file and --set."""
    out = tmp_path / "runs"
    argv = [
        "train-encoder",
        "--corpus",
        str(corpus_dir),
        "--out",
        str(out),
        "--ablation",
        "none",
        "--config",
        str(config_file),
        "--set",
        "train.seed=1",
        "--seed",
        "7",
        "--epochs",
        "1",
    ]
    assert main(argv) == 0
    saved = load_run_config(out / "none" / CONFIG_FILE)
    assert saved.train.seed == 7
    assert saved.train.epochs == 1
    assert _manifest(out / "none")["seed"] == 7


def test_train_reasoner_on_untrained_encoder(corpus_dir, config_file, tmp_path, capsys):
    """Test the fixed untrained encoder baseline from the command line."""
    data = tmp_path / "data"
    out = tmp_path / "stage2"
    assert main(["datagen", "--stub", "--corpus", str(corpus_dir), "--out", str(data)]) == 0
    capsys.readouterr()
    argv = [
        "train-reasoner",
        "--corpus",
        str(corpus_dir),
        "--instructions",
        str(data / INSTRUCTIONS_FILE),
        "--untrained-encoder",
        "--config",
        str(config_file),
        "--out",
        str(out),
    ]
    assert main(argv) == 0
    assert _stdout_json(capsys)["checkpoint"] == str(out / REASONER_CHECKPOINT)
    assert (out / UNTRAINED_CHECKPOINT).is_file()
    assert str(out / UNTRAINED_CHECKPOINT) in _manifest(out)["artifacts"]
