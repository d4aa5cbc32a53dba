#  SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

import logreg_protocol
from errors import ConfigError
from errors import ProtocolAbortError
from logreg_protocol import LogregConfig
from logreg_protocol import Transcript

SMALL = LogregConfig(epochs=3, batch_size=10, learning_rate=0.05, seed=4)


def _max_deviation(transcript, trajectory):
    assert len(transcript.oracle) == len(trajectory)
    deviation = 0.0
    for snapshot, (theta_A, theta_B) in zip(transcript.oracle, trajectory):
        deviation = max(deviation, np.max(np.abs(snapshot.theta_A_after - theta_A)),
                        np.max(np.abs(snapshot.theta_B_after - theta_B)))
    return deviation


def test_plaintext_gradient_at_zero():
    X_A = np.array([[1.0, 2.0], [3.0, 4.0]])
    X_B = np.array([[1.0], [-1.0]])
    Y = np.array([1.0, -1.0])
    grad_A, grad_B = logreg_protocol.plaintext_gradient(np.zeros(2), np.zeros(1), X_A, X_B, Y, [0, 1])
    assert np.allclose(grad_A, [0.5, 0.5])
    assert np.allclose(grad_B, [-0.5])
    with pytest.raises(ValueError):
        logreg_protocol.plaintext_gradient(np.zeros(2), np.zeros(1), X_A, X_B, Y, [])


def test_batch_schedule_fixes_composition():
    visits = list(logreg_protocol.batch_schedule(23, 5, 3, seed=1))
    assert len(visits) == 15
    for epoch in range(3):
        covered = np.concatenate([S for e, _, S in visits if e == epoch])
        assert sorted(covered) == list(range(23))
    by_id = {}
    for _, batch_id, S in visits:
        by_id.setdefault(batch_id, []).append(tuple(S))
    assert all(len(set(batches)) == 1 and len(batches) == 3 for batches in by_id.values())


def test_batch_schedule_reshuffle_gives_fresh_batches():
    visits = list(logreg_protocol.batch_schedule(20, 5, 2, seed=1, reshuffle_batches=True))
    assert len({batch_id for _, batch_id, _ in visits}) == 8


def test_config_validation():
    with pytest.raises(ConfigError):
        LogregConfig(batch_size=11).validate(10)
    with pytest.raises(ConfigError):
        LogregConfig(epochs=0).validate(10)
    with pytest.raises(ConfigError):
        LogregConfig(init="ones").validate(10)


def test_encrypted_training_matches_plaintext(keypair, dataset_factory):
    data = dataset_factory(40, 2, 2, seed=3)
    theta_A, theta_B, transcript = logreg_protocol.train(data, SMALL, keypair)
    trajectory = logreg_protocol.plaintext_sgd(data, SMALL)
    assert len(transcript) == 12
    assert _max_deviation(transcript, trajectory) <= 1e-6
    assert np.allclose(theta_A, trajectory[-1][0], atol=1e-6)
    assert np.allclose(theta_B, trajectory[-1][1], atol=1e-6)


def test_single_sample_gradient():
    # residual = 1/4 * 4 + 1/4 * 4 - 1/2 = 1.5
    grad_A, grad_B = logreg_protocol.plaintext_gradient(np.array([4.0]), np.array([4.0]), np.array([[1.0]]),
                                                        np.array([[1.0]]), np.array([1.0]), [0])
    assert grad_A.tolist() == [1.5]
    assert grad_B.tolist() == [1.5]


def _taylor_loss(theta, X, Y):
    z = X @ theta
    return np.mean(0.125 * z ** 2 - 0.5 * Y * z)


def test_taylor_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    X_A = rng.normal(size=(20, 3))
    X_B = rng.normal(size=(20, 3))
    Y = rng.choice([-1.0, 1.0], size=20)
    theta = rng.normal(size=6)
    grad_A, grad_B = logreg_protocol.plaintext_gradient(theta[:3], theta[3:], X_A, X_B, Y, range(20))
    X = np.hstack([X_A, X_B])
    step = 1e-5
    numeric = np.empty(6)
    for j in range(6):
        shift = np.zeros(6)
        shift[j] = step
        numeric[j] = (_taylor_loss(theta + shift, X, Y) - _taylor_loss(theta - shift, X, Y)) / (2 * step)
    assert np.max(np.abs(np.concatenate([grad_A, grad_B]) - numeric)) <= 1e-6


def test_zero_learning_rate_keeps_theta(keypair, dataset_factory):
    data = dataset_factory(20, 2, 2, seed=10)
    config = LogregConfig(epochs=2, batch_size=10, learning_rate=0.0, init="random", seed=10)
    theta_A, theta_B, transcript = logreg_protocol.train(data, config, keypair)
    assert np.array_equal(theta_A, logreg_protocol.initial_theta(2, config, logreg_protocol.ROLE_ACTIVE))
    assert np.array_equal(theta_B, logreg_protocol.initial_theta(2, config, logreg_protocol.ROLE_PASSIVE))
    for snapshot in transcript.oracle:
        assert np.array_equal(snapshot.theta_B_before, snapshot.theta_B_after)


def test_same_seed_gives_identical_transcripts(tmp_path, keypair, dataset_factory):
    data = dataset_factory(20, 2, 1, seed=11)
    config = LogregConfig(epochs=2, batch_size=10, seed=11)
    paths = [tmp_path / "first.jsonl", tmp_path / "second.jsonl"]
    for path in paths:
        _, _, transcript = logreg_protocol.train(data, config, keypair)
        transcript.save_jsonl(str(path), include_oracle=True)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_plaintext_training_separates_separable_data(dataset_factory):
    data = dataset_factory(200, 4, 4, seed=12, noise="none")
    config = LogregConfig(epochs=100, batch_size=50, learning_rate=0.05, seed=12)
    theta_A, theta_B = logreg_protocol.plaintext_sgd(data, config)[-1]
    assert logreg_protocol.accuracy(theta_A, theta_B, data) >= 0.9


@pytest.mark.slow
def test_encrypted_training_separates_separable_data(keypair, dataset_factory):
    data = dataset_factory(200, 4, 4, seed=12, noise="none")
    config = LogregConfig(epochs=100, batch_size=50, learning_rate=0.05, seed=12)
    theta_A, theta_B, _ = logreg_protocol.train(data, config, keypair)
    assert logreg_protocol.accuracy(theta_A, theta_B, data) >= 0.9


def test_random_init_and_coordinator_updates(keypair, dataset_factory):
    data = dataset_factory(30, 2, 2, seed=5)
    config = LogregConfig(epochs=2, batch_size=10, seed=2, init="random", coordinator_updates=True)
    _, theta_B, transcript = logreg_protocol.train(data, config, keypair)
    trajectory = logreg_protocol.plaintext_sgd(data, config)
    assert _max_deviation(transcript, trajectory) <= 1e-6
    assert transcript.coordinator_updates
    assert np.array_equal(transcript.rounds[-1].theta_B_sent, theta_B)


def test_transcript_jsonl(tmp_path, keypair, dataset_factory):
    data = dataset_factory(20, 1, 2, seed=6)
    _, _, transcript = logreg_protocol.train(data, LogregConfig(epochs=2, batch_size=10, seed=1), keypair)
    path = str(tmp_path / "transcript.jsonl")
    transcript.save_jsonl(path, include_oracle=True)
    restored = Transcript.load_jsonl(path)
    assert len(restored) == len(transcript)
    assert restored.public_key.n == keypair.public_key.n
    assert restored.rounds[1].enc_v == transcript.rounds[1].enc_v
    assert np.array_equal(restored.rounds[1].grad_B, transcript.rounds[1].grad_B)
    assert np.array_equal(restored.oracle[-1].theta_B_after, transcript.oracle[-1].theta_B_after)


def test_codec_overflow_aborts_the_round(keypair, dataset_factory):
    data = dataset_factory(20, 2, 2, seed=7)
    data.X_B[:, 1] = 1e20
    with pytest.raises(ProtocolAbortError) as info:
        logreg_protocol.train(data, LogregConfig(epochs=1, batch_size=10), keypair)
    assert info.value.step.startswith("B")


def test_prediction():
    theta_A = np.array([1.0])
    theta_B = np.array([-1.0])
    scores = logreg_protocol.predict(theta_A, theta_B, np.array([[2.0], [0.0]]), np.array([[1.0], [1.0]]))
    assert np.allclose(scores, [1.0, -1.0])
    assert np.array_equal(logreg_protocol.predict_label(scores), [1.0, 0.0])
    with pytest.raises(ValueError):
        logreg_protocol.predict(theta_A, theta_B, np.zeros((1, 2)), np.zeros((1, 1)))


@pytest.mark.slow
def test_protocol_parity_over_full_training(logreg_full_run):
    data, config, transcript = logreg_full_run
    assert len(transcript) == 400
    assert _max_deviation(transcript, logreg_protocol.plaintext_sgd(data, config)) <= 1e-6
