#  SPDX-License-Identifier: Apache-2.0
import os

import pytest

import constants
import experiment_config
from errors import ConfigError
from experiment_config import ExperimentConfig

REPO_CONFIG = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "experiment.cfg")


def _write(tmp_path, text):
    path = tmp_path / "experiment.cfg"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults():
    config = experiment_config.load_config()
    assert config == ExperimentConfig()
    assert config.logreg.key_bits == constants.DEFAULT_KEY_BITS
    assert config.boost_config().bins == constants.DEFAULT_BINS


def test_shipped_config_loads():
    config = experiment_config.load_config(REPO_CONFIG)
    assert (config.protocol, config.attack, config.seed) == ("logreg", "revmul", 7)
    assert config.dataset.samples == 200
    assert config.logreg_config().batch_size == 50


def test_ini_sections_and_case_sensitive_keys(tmp_path):
    path = _write(tmp_path, "[experiment]\nprotocol = secureboost\nattack = revsum\n\n"
                            "[dataset]\nfeatures_A = 3\nfeatures_B = 5\n\n"
                            "[protocol]\nbins = 16\ntrees = 2\n\n[attack]\nbase = 4\ngroup_capacity = b-1\n")
    config = experiment_config.load_config(path)
    assert (config.dataset.features_A, config.dataset.features_B) == (3, 5)
    assert config.boost.bins == 16
    revsum = config.revsum_config()
    assert (revsum.base, revsum.group_capacity) == (4, "b-1")


def test_protocol_keys_reach_both_protocols():
    config = experiment_config.load_config(overrides=["protocol.key_bits=1088"])
    assert config.logreg.key_bits == 1088
    assert config.boost.key_bits == 1088


def test_overrides_win_over_file_and_flags_win_over_overrides(tmp_path):
    path = _write(tmp_path, "[experiment]\nseed = 3\n\n[protocol]\nepochs = 10\n")
    config = experiment_config.load_config(path, ["protocol.epochs=5", "experiment.seed=4"], seed=9, out="elsewhere")
    assert config.logreg.epochs == 5
    assert config.seed == 9
    assert config.out == "elsewhere"
    assert config.logreg_config(seed=1).seed == 1


def test_value_conversion():
    config = experiment_config.load_config(overrides=["protocol.coordinator_updates=yes",
                                                      "protocol.learning_rate=0.5",
                                                      "sweep.values=25, 50,100",
                                                      "sweep.family=batch_size"])
    assert config.logreg.coordinator_updates is True
    assert config.logreg.learning_rate == 0.5
    assert config.sweep.values == ("25", "50", "100")


@pytest.mark.parametrize("overrides", [
    ["protocol.epochs=many"],
    ["protocol.coordinator_updates=maybe"],
    ["protocol.unknown_key=1"],
    ["nosection=1"],
    ["experiment.protocol=svm"],
    ["experiment.attack=revsum"],
    ["experiment.protocol=secureboost", "experiment.attack=revmul"],
    ["dataset.source=csv"],
    ["attack.group_capacity=2b"],
    ["sweep.family=bins"],
    ["sweep.family=depth"],
    ["sweep.family=batch_size", "sweep.seeds=0"],
])
def test_rejected_configurations(overrides):
    with pytest.raises(ConfigError):
        experiment_config.load_config(overrides=overrides)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        experiment_config.load_config(str(tmp_path / "missing.cfg"))
    with pytest.raises(ConfigError):
        experiment_config.load_config(_write(tmp_path, "epochs = 5\n"))


def test_replace_validates():
    config = ExperimentConfig()
    assert config.replace(seed=5).seed == 5
    with pytest.raises(ConfigError):
        config.replace(attack="revsum")
