"""End-to-end tests of the command-line entry point and its exit codes."""

import dataclasses

import pytest

from textvideo_grounding import __version__
from textvideo_grounding.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, build_parser, main
from textvideo_grounding.config import save_config

from .conftest import small_run_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Config file plus a synthesized dataset and a one-iteration run."""
    root = tmp_path_factory.mktemp("cli")
    cfg = dataclasses.replace(
        small_run_config(), data_dir=str(root / "data"), out_dir=str(root / "run")
    )
    config = root / "config.yaml"
    save_config(cfg, config)
    synth = main(
        ["synth", "--config", str(config), "--num-train", "4", "--num-val", "2",
         "--num-test", "2", "--quiet"]
    )
    train = main(["train", "--config", str(config), "--max-iterations", "1", "--quiet"])
    return root, config, (synth, train)


def test_synth_and_train_succeed(workspace):
    root, _, codes = workspace
    assert codes == (EXIT_OK, EXIT_OK)
    assert (root / "data" / "train" / "manifest.json").exists()
    assert (root / "run" / "best.pt").exists()
    assert (root / "run" / "last.pt").exists()


def test_eval_writes_outputs(workspace):
    root, config, _ = workspace
    assert main(["eval", "--config", str(config), "--quiet"]) == EXIT_OK
    assert (root / "run" / "predictions_test.json").exists()
    assert (root / "run" / "report_test.json").exists()


def test_eval_single_regime(workspace, tmp_path):
    _, config, _ = workspace
    code = main(
        ["eval", "--config", str(config), "--regime", "5x5", "--split", "val",
         "--out", str(tmp_path), "--quiet"]
    )
    assert code == EXIT_OK
    assert (tmp_path / "report_val.json").exists()


def test_predict_known_episode(workspace, capsys):
    _, config, _ = workspace
    assert main(["predict", "--config", str(config), "--episode", "test-00000"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "question:" in out and "answer:" in out


def test_predict_unknown_episode(workspace):
    _, config, _ = workspace
    assert main(["predict", "--config", str(config), "--episode", "nope"]) == EXIT_VALIDATION


def test_seed_override_is_validated(workspace):
    _, config, _ = workspace
    assert main(["eval", "--config", str(config), "--seed", "-1", "--quiet"]) == EXIT_VALIDATION


def test_unknown_config_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("grounding:\n  k3: 1\n")
    assert main(["synth", "--config", str(path), "--out", str(tmp_path / "d")]) == EXIT_VALIDATION


def test_missing_dataset_is_runtime_failure(tmp_path):
    code = main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "run")])
    assert code == EXIT_RUNTIME


def test_missing_checkpoint_is_runtime_failure(tmp_path):
    code = main(["eval", "--checkpoint", str(tmp_path / "absent.pt"), "--data", str(tmp_path)])
    assert code == EXIT_RUNTIME


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["eval", "--regime", "3x3"],
        ["predict"],
        ["synth", "--num-train", "many"],
        ["serve"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_VALIDATION


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_parser_lists_every_command():
    parser = build_parser()
    for command in ("synth", "train", "eval", "predict"):
        args = parser.parse_args([command, "--episode", "x"] if command == "predict" else [command])
        assert args.command == command
