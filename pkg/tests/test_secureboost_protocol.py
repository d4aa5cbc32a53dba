#  SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

import constants
import he_core
import secureboost_protocol
from errors import CodecOverflowError
from errors import ConfigError
from errors import ProtocolAbortError
from secureboost_protocol import BoostConfig
from secureboost_protocol import FeatureHistogram
from secureboost_protocol import GradientPair
from vertical_data import VerticalDataset

SCALE = 1 << he_core.LAYOUT_CODEC.frac_bits


def test_build_bins_small_column():
    partition = secureboost_protocol.build_bins([1.0, 2.0, 3.0, 4.0], 2)
    assert partition.bin_count == 2
    assert np.array_equal(partition.cuts, [2.0])
    assert np.array_equal(partition.assignment, [0, 0, 1, 1])
    assert np.array_equal(partition.bin_of([2.0, 2.5]), [0, 1])


def test_build_bins_equal_frequency():
    partition = secureboost_protocol.build_bins(np.arange(100.0)[::-1], 10)
    assert partition.bin_count == 10
    assert np.array_equal(np.bincount(partition.assignment), [10] * 10)
    assert np.array_equal(partition.members(0), np.arange(90, 100))


def test_build_bins_ties_and_constants():
    partition = secureboost_protocol.build_bins([0.0, 0.0, 0.0, 1.0], 4)
    assert partition.bin_count == 2
    assert np.array_equal(partition.assignment, [0, 0, 0, 1])
    constant = secureboost_protocol.build_bins([5.0] * 6, 4)
    assert constant.bin_count == 1
    assert np.array_equal(constant.assignment, [0] * 6)
    with pytest.raises(ConfigError):
        secureboost_protocol.build_bins([1.0, 2.0], 1)


def test_partitions_from_cuts():
    X = np.array([[0.5, 3.0], [1.5, 1.0], [2.5, 2.0]])
    partitions = secureboost_protocol.partitions_from_cuts([[1.0, 2.0], [1.5]], X)
    assert np.array_equal(partitions[0].assignment, [0, 1, 2])
    assert np.array_equal(partitions[1].assignment, [1, 0, 1])
    with pytest.raises(ConfigError):
        secureboost_protocol.partitions_from_cuts([[1.0]], X)


def test_compute_gradients():
    y = np.array([1.0, 0.0])
    logistic = secureboost_protocol.compute_gradients(y, np.zeros(2))
    assert np.allclose(logistic.g, [-0.5, 0.5])
    assert np.allclose(logistic.h, [0.25, 0.25])
    squared = secureboost_protocol.compute_gradients(np.array([1.0, 3.0]), np.array([2.0, 2.0]), "squared")
    assert np.allclose(squared.g, [1.0, -1.0])
    assert np.allclose(squared.h, [1.0, 1.0])
    with pytest.raises(ValueError):
        secureboost_protocol.compute_gradients(y, np.zeros(3))


def test_quantize_gradients():
    quantized = secureboost_protocol.quantize_gradients(GradientPair(g=np.array([-0.5, 0.25]),
                                                                     h=np.array([0.25, 0.1875])))
    assert np.array_equal(quantized.g_int, [-SCALE // 2, SCALE // 4])
    assert np.array_equal(quantized.h, [0.25, 0.1875])


def test_split_gain_example():
    assert secureboost_protocol.split_gain(1.0, 1.0, 0.0, 2.0, reg_lambda=1.0, gamma=0.0) == 0.5
    assert secureboost_protocol.split_gain(1.0, 1.0, 0.0, 2.0, reg_lambda=1.0, gamma=0.5) == 0.0


def _histogram(owner, feature, g, h, counts):
    return FeatureHistogram(owner=owner, feature=feature, g_sum=np.array(g, dtype=np.int64) * SCALE,
                            h_sum=np.array(h, dtype=np.int64) * SCALE, counts=np.array(counts, dtype=np.int64))


def test_best_split_prefers_active_party_on_ties():
    config = BoostConfig()
    passive = _histogram(constants.OWNER_PASSIVE, 0, [1, -1], [1, 1], [1, 1])
    active = _histogram(constants.OWNER_ACTIVE, 1, [1, -1], [1, 1], [1, 1])
    decision = secureboost_protocol.find_best_split([passive, active], 0, 2 * SCALE, config)
    assert decision.owner == constants.OWNER_ACTIVE
    assert decision.feature == 1
    assert decision.bin_id == 0
    assert decision.gain == 0.5


def test_best_split_skips_empty_children_and_gainless_nodes():
    config = BoostConfig()
    # the first boundary leaves the left child empty
    hist = _histogram(constants.OWNER_PASSIVE, 0, [0, 1, -1], [0, 1, 1], [0, 1, 1])
    decision = secureboost_protocol.find_best_split([hist], 0, 2 * SCALE, config)
    assert decision.bin_id == 1
    flat = _histogram(constants.OWNER_PASSIVE, 0, [1, 1], [1, 1], [1, 1])
    assert secureboost_protocol.find_best_split([flat], 2 * SCALE, 2 * SCALE, BoostConfig(gamma=1.0)) is None


def test_active_split_threshold_comes_from_cuts():
    partitions = [secureboost_protocol.build_bins([1.0, 2.0, 3.0, 4.0], 2)]
    hist = _histogram(constants.OWNER_ACTIVE, 0, [1, -1], [1, 1], [2, 2])
    decision = secureboost_protocol.find_best_split([hist], 0, 2 * SCALE, BoostConfig(), partitions)
    assert decision.threshold == 2.0


def test_config_validation():
    with pytest.raises(ConfigError):
        BoostConfig(bins=1).validate(10)
    with pytest.raises(ConfigError):
        BoostConfig(reg_lambda=0.0).validate(10)
    with pytest.raises(ConfigError):
        BoostConfig(objective="hinge").validate(10)
    with pytest.raises(ConfigError):
        BoostConfig().validate(he_core.LAYOUT_CODEC.max_count + 1)


def test_encrypted_histograms_match_plaintext(keypair, dataset_factory):
    data = dataset_factory(30, 1, 2, seed=1)
    quantized = secureboost_protocol.quantize_gradients(
        secureboost_protocol.compute_gradients(data.Y, np.zeros(data.n)))
    g_words, h_words = secureboost_protocol.plain_words(quantized)
    enc_g = [he_core.encrypt(keypair.public_key, w, i) for i, w in enumerate(g_words)]
    enc_h = [he_core.encrypt(keypair.public_key, w, 100 + i) for i, w in enumerate(h_words)]
    passive = secureboost_protocol.PassiveParty(data.X_B, 4)
    samples = np.arange(3, 27)
    for encrypted, partition in zip(passive.encrypted_histograms(keypair.public_key, enc_g, enc_h, samples),
                                    passive.partitions):
        decrypted = secureboost_protocol.decrypt_histogram(keypair, encrypted)
        plain = secureboost_protocol.plain_histogram(partition, quantized, samples, constants.OWNER_PASSIVE)
        assert np.array_equal(decrypted.g_sum, plain.g_sum)
        assert np.array_equal(decrypted.h_sum, plain.h_sum)
        assert np.array_equal(decrypted.counts, plain.counts)
        assert decrypted.g_low == [0] * partition.bin_count


def test_aggregation_respects_max_count(keypair):
    partition = secureboost_protocol.build_bins(np.arange(5.0), 2)
    ciphers = [he_core.zero_cipher(keypair.public_key)] * 5
    with pytest.raises(CodecOverflowError):
        secureboost_protocol.aggregate_encrypted(keypair.public_key, ciphers, ciphers, partition, np.arange(5),
                                                 max_count=4)


def _leaf_scores(model, n):
    scores = np.zeros(n)
    for nodes in model.trees:
        for node in nodes:
            if node.is_leaf:
                scores[node.samples] += node.weight
    return scores


def test_reference_model_prediction_follows_training_partition(dataset_factory):
    data = dataset_factory(120, 2, 2, seed=4)
    config = BoostConfig(trees=2, max_depth=3, bins=8, seed=4)
    model = secureboost_protocol.train_reference(data, config)
    scores = secureboost_protocol.predict(model, data.X_A, data.X_B)
    assert np.allclose(scores, _leaf_scores(model, data.n))
    assert secureboost_protocol.accuracy(model, data) > 0.5
    assert len(model.trees) == 2


def test_model_json_hides_passive_thresholds(tmp_path, dataset_factory):
    data = dataset_factory(80, 1, 1, seed=2)
    data.X_B[:, 0] = np.where(data.Y > 0, 1.0, -1.0) + 0.01 * np.arange(data.n)
    model = secureboost_protocol.train_reference(data, BoostConfig(max_depth=1, bins=80))
    root = model.structure()[0][0]
    assert root["owner"] == constants.OWNER_PASSIVE
    assert "bin_id" in root and "threshold" not in root
    path = tmp_path / "model.json"
    model.save(str(path))
    assert '"schema_version"' in path.read_text(encoding="utf-8")


def test_squared_objective_predicts_scores(dataset_factory):
    data = dataset_factory(60, 1, 1, seed=3)
    model = secureboost_protocol.train_reference(data, BoostConfig(objective="squared", max_depth=2, bins=4))
    scores = secureboost_protocol.predict(model, data.X_A, data.X_B)
    assert np.array_equal(secureboost_protocol.predict_label(model, scores), scores)


def test_encoder_overflow_aborts(keypair, dataset_factory):
    data = dataset_factory(20, 1, 1, seed=5)

    def encoder(tree, quantized):
        raise CodecOverflowError("magic too wide")

    with pytest.raises(ProtocolAbortError) as info:
        secureboost_protocol.train_ensemble(data, BoostConfig(bins=4), keypair=keypair, gradient_encoder=encoder)
    assert info.value.step == "A encodes gradients"


def test_transcript_records_every_split_attempt(tmp_path, keypair, dataset_factory):
    data = dataset_factory(40, 1, 2, seed=6)
    model, transcript = secureboost_protocol.train_ensemble(data, BoostConfig(max_depth=2, bins=4), keypair=keypair)
    views = transcript.nodes(0)
    assert views[0].node_id == 0 and len(views[0].samples) == data.n
    assert {h.feature for h in views[0].histograms} == {0, 1}
    assert transcript.nodes(5) == []
    path = tmp_path / "histograms.jsonl"
    transcript.save(str(path))
    assert len(path.read_text(encoding="utf-8").splitlines()) == len(views)


@pytest.mark.slow
def test_encrypted_training_matches_reference(keypair, dataset_factory):
    for seed in range(20):
        data = dataset_factory(60, 2, 2, seed=100 + seed)
        config = BoostConfig(trees=1 + seed % 3, max_depth=1 + seed % 3, bins=8, seed=seed)
        model, _ = secureboost_protocol.train_ensemble(data, config, keypair=keypair)
        reference = secureboost_protocol.train_reference(data, config)
        assert model.structure() == reference.structure()
        weights = [n.weight for tree in model.trees for n in tree if n.is_leaf]
        expected = [n.weight for tree in reference.trees for n in tree if n.is_leaf]
        assert np.allclose(weights, expected, rtol=0, atol=data.n * 2.0 ** -24 / config.reg_lambda)


def _logistic_loss(y, margins):
    return np.logaddexp(0.0, margins) - y * margins


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(14)
    margins = rng.normal(0.0, 2.0, size=100)
    y = rng.integers(0, 2, size=100).astype(float)
    step = 1e-5
    pair = secureboost_protocol.compute_gradients(y, margins)
    g_numeric = (_logistic_loss(y, margins + step) - _logistic_loss(y, margins - step)) / (2 * step)
    h_numeric = (secureboost_protocol.compute_gradients(y, margins + step).g
                 - secureboost_protocol.compute_gradients(y, margins - step).g) / (2 * step)
    assert np.max(np.abs(pair.g - g_numeric)) <= 1e-6
    assert np.max(np.abs(pair.h - h_numeric)) <= 1e-6


def test_uniform_column_fills_bins_evenly():
    column = np.random.default_rng(15).uniform(size=10_000)
    partition = secureboost_protocol.build_bins(column, 32)
    counts = np.bincount(partition.assignment, minlength=32)
    assert partition.bin_count == 32
    assert np.all(np.abs(counts - 10_000 / 32) <= 1)


def test_split_gain_is_symmetric():
    rng = np.random.default_rng(16)
    for _ in range(50):
        G_L, G = rng.normal(size=2) * 10
        H_L, H_R = rng.uniform(0.1, 5.0, size=2)
        H = H_L + H_R
        direct = secureboost_protocol.split_gain(G_L, H_L, G, H, reg_lambda=1.0, gamma=0.1)
        swapped = secureboost_protocol.split_gain(G - G_L, H - H_L, G, H, reg_lambda=1.0, gamma=0.1)
        assert direct == pytest.approx(swapped, rel=1e-12, abs=1e-12)


def test_child_histograms_add_up_to_parent(keypair, dataset_factory):
    public_key = keypair.public_key
    data = dataset_factory(24, 1, 2, seed=17)
    quantized = secureboost_protocol.quantize_gradients(
        secureboost_protocol.compute_gradients(data.Y, np.zeros(data.n)))
    g_words, h_words = secureboost_protocol.plain_words(quantized)
    enc_g = [he_core.encrypt(public_key, w, i) for i, w in enumerate(g_words)]
    enc_h = [he_core.encrypt(public_key, w, 100 + i) for i, w in enumerate(h_words)]
    passive = secureboost_protocol.PassiveParty(data.X_B, 4)
    parent = np.arange(data.n)
    left = passive.instance_space(1, 1, parent)
    right = np.setdiff1d(parent, left)
    assert 0 < len(left) < data.n
    histograms = [passive.encrypted_histograms(public_key, enc_g, enc_h, samples) for samples in (parent, left, right)]
    for whole, left_hist, right_hist in zip(*histograms):
        for k in range(len(whole.counts)):
            assert he_core.add_cipher(public_key, left_hist.g_cipher[k], right_hist.g_cipher[k]) == whole.g_cipher[k]
            assert he_core.add_cipher(public_key, left_hist.h_cipher[k], right_hist.h_cipher[k]) == whole.h_cipher[k]
        assert np.array_equal(left_hist.counts + right_hist.counts, whole.counts)


def test_zero_shrinkage_gives_constant_model(keypair, dataset_factory):
    data = dataset_factory(30, 1, 1, seed=18)
    model, _ = secureboost_protocol.train_ensemble(data, BoostConfig(trees=2, max_depth=2, bins=4, shrinkage=0.0),
                                                   keypair=keypair)
    scores = secureboost_protocol.predict(model, data.X_A, data.X_B)
    assert np.all(scores == scores[0])


def test_single_split_learns_separable_feature(keypair, dataset_factory):
    # labels depend on B's only feature
    data = dataset_factory(100, 1, 1, seed=19, noise="none", weights=[0.0, 1.0])
    model, _ = secureboost_protocol.train_ensemble(data, BoostConfig(trees=1, max_depth=1, bins=32), keypair=keypair)
    assert model.trees[0][0].owner == constants.OWNER_PASSIVE
    assert secureboost_protocol.accuracy(model, data) >= 0.9


def test_reference_trainer_splits_on_raw_thresholds():
    data = VerticalDataset(ids=np.arange(4), X_A=[[1.0], [2.0], [3.0], [4.0]], X_B=[[4.0], [1.0], [3.0], [2.0]],
                           Y=[0.0, 0.0, 1.0, 1.0])
    model = secureboost_protocol.train_reference(data, BoostConfig(max_depth=1, bins=2))
    root, left, right = model.trees[0]
    assert (root.owner, root.feature, root.bin_id, root.threshold) == (constants.OWNER_ACTIVE, 0, 0, 2.0)
    assert left.samples.tolist() == [0, 1]
    assert right.samples.tolist() == [2, 3]
    assert left.weight < 0 < right.weight


def test_reference_trainer_prefers_active_party_on_ties():
    column = [[1.0], [2.0], [3.0], [4.0]]
    data = VerticalDataset(ids=np.arange(4), X_A=column, X_B=column, Y=[0.0, 0.0, 1.0, 1.0])
    model = secureboost_protocol.train_reference(data, BoostConfig(max_depth=1, bins=2))
    assert model.trees[0][0].owner == constants.OWNER_ACTIVE


def test_reference_trainer_agrees_with_histogram_search(dataset_factory):
    data = dataset_factory(50, 2, 2, seed=20)
    config = BoostConfig(max_depth=1, bins=8)
    model = secureboost_protocol.train_reference(data, config)
    quantized = secureboost_protocol.quantize_gradients(
        secureboost_protocol.compute_gradients(data.Y, np.zeros(data.n)))
    samples = np.arange(data.n)
    partitions_A = secureboost_protocol.build_all_bins(data.X_A, config.bins)
    partitions_B = secureboost_protocol.build_all_bins(data.X_B, config.bins)
    histograms = [secureboost_protocol.plain_histogram(p, quantized, samples, constants.OWNER_ACTIVE)
                  for p in partitions_A]
    histograms += [secureboost_protocol.plain_histogram(p, quantized, samples, constants.OWNER_PASSIVE)
                   for p in partitions_B]
    decision = secureboost_protocol.find_best_split(histograms, int(quantized.g_int.sum()),
                                                    int(quantized.h_int.sum()), config, partitions_A)
    root = model.trees[0][0]
    assert (root.owner, root.feature, root.bin_id) == (decision.owner, decision.feature, decision.bin_id)


def test_encrypted_training_matches_reference_on_small_data(keypair, dataset_factory):
    for seed in range(2):
        data = dataset_factory(40, 1, 2, seed=200 + seed)
        config = BoostConfig(trees=2, max_depth=2, bins=4, seed=seed)
        model, _ = secureboost_protocol.train_ensemble(data, config, keypair=keypair)
        assert model.structure() == secureboost_protocol.train_reference(data, config).structure()
