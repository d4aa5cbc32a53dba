#  SPDX-License-Identifier: Apache-2.0
import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "app"))

import constants  # noqa: E402
import he_core  # noqa: E402
import logreg_protocol  # noqa: E402
import vertical_data  # noqa: E402
from logreg_protocol import LogregConfig  # noqa: E402
from vertical_data import PartitionSpec  # noqa: E402

# smallest modulus that still holds the 1024-bit layout; keeps protocol tests fast
TEST_KEY_BITS = constants.MIN_KEY_BITS


@pytest.fixture(scope="session")
def keypair():
    return he_core.keygen(TEST_KEY_BITS, seed=11)


@pytest.fixture(scope="session")
def other_keypair():
    return he_core.keygen(TEST_KEY_BITS, seed=12)


@pytest.fixture(scope="session")
def keypair_2048():
    return he_core.keygen(2048, seed=2048)


def make_dataset(n, d_A, d_B, seed=0, noise="logistic", weights=None):
    columns = vertical_data.gaussian_columns(d_A + d_B, n, seed)
    dataset = vertical_data.gen_synthetic(columns, seed, weights=weights, noise=noise)
    return vertical_data.partition(dataset, PartitionSpec.from_counts(d_A, d_B))


@pytest.fixture(scope="session")
def dataset_factory():
    return make_dataset


@pytest.fixture(scope="session")
def logreg_full_run(keypair):
    # 200 x (4 + 4) samples, 100 epochs of batch 50 at learning rate 0.05
    data = make_dataset(200, 4, 4, seed=21)
    config = LogregConfig(epochs=100, batch_size=50, learning_rate=0.05, seed=21)
    _, _, transcript = logreg_protocol.train(data, config, keypair)
    return data, config, transcript
