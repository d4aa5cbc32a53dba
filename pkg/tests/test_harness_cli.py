#  SPDX-License-Identifier: Apache-2.0
import os

import pandas as pd
import pytest

import constants
import harness_cli

FAST = ["--set", "protocol.key_bits=1088"]


def _csv(tmp_path, b_values):
    path = tmp_path / "data.csv"
    pd.DataFrame({"id": range(10), "a": [0.1 * i for i in range(10)], "b": b_values,
                  "label": [i % 2 for i in range(10)]}).to_csv(path, index=False)
    return str(path)


def _csv_args(path):
    return FAST + ["--set", "dataset.source=csv", "--set", f"dataset.csv_path={path}", "--set", "dataset.features_A=1",
                   "--set", "dataset.features_B=1", "--set", "protocol.epochs=1", "--set", "protocol.batch_size=4"]


def test_gen_writes_dataset(tmp_path):
    code = harness_cli.run_command(["gen", "--out", str(tmp_path), "--set", "dataset.samples=20"])
    assert code == constants.EXIT_OK
    assert len(pd.read_csv(os.path.join(str(tmp_path), "dataset.csv"))) == 20


def test_configuration_errors_exit_2(tmp_path):
    assert harness_cli.run_command(["gen", "--out", str(tmp_path), "--set", "protocol.epochs=x"]) == \
        constants.EXIT_CONFIG_ERROR
    assert harness_cli.run_command(["gen", "--config", str(tmp_path / "missing.cfg")]) == constants.EXIT_CONFIG_ERROR
    assert harness_cli.run_command(["sweep", "--out", str(tmp_path)]) == constants.EXIT_CONFIG_ERROR
    assert harness_cli.run_command(["attack-revmul", "--out", str(tmp_path), "--transcript", "t.jsonl"]) == \
        constants.EXIT_CONFIG_ERROR


def test_bad_dataset_exits_2(tmp_path):
    path = _csv(tmp_path, [1.0] * 9 + [None])
    assert harness_cli.run_command(["train-logreg", "--out", str(tmp_path)] + _csv_args(path)) == \
        constants.EXIT_CONFIG_ERROR


def test_protocol_abort_exits_3(tmp_path):
    path = _csv(tmp_path, [1e20] * 10)
    assert harness_cli.run_command(["train-logreg", "--out", str(tmp_path)] + _csv_args(path)) == \
        constants.EXIT_PROTOCOL_ABORT


def test_subcommand_sets_protocol_and_attack():
    config = harness_cli.load_config(overrides=[])
    assert harness_cli._command_config("attack-revsum", config, []).attack == "revsum"
    assert harness_cli._command_config("train-sboost", config, []).protocol == "secureboost"
    kept = harness_cli._command_config("train-logreg", config.replace(attack="revmul"), ["experiment.attack=revmul"])
    assert kept.attack == "revmul"
    assert harness_cli._command_config("gen", config, []) is config


def test_unknown_command_is_rejected_by_the_parser():
    with pytest.raises(SystemExit):
        harness_cli.build_parser().parse_args(["train-svm"])


def test_malformed_flag_exits_2(monkeypatch):
    assert harness_cli.run_command(["gen", "--seed", "abc"]) == constants.EXIT_CONFIG_ERROR
    monkeypatch.setattr(harness_cli.logging, "setup_logging", lambda *args, **kwargs: None)
    monkeypatch.setattr(harness_cli.logging, "rotate", lambda *args, **kwargs: None)
    with pytest.raises(SystemExit) as info:
        harness_cli.main(["gen", "--seed", "abc"])
    assert info.value.code == constants.EXIT_CONFIG_ERROR


def test_help_exits_0():
    assert harness_cli.run_command(["gen", "--help"]) == constants.EXIT_OK
