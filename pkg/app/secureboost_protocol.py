#  SPDX-License-Identifier: Apache-2.0
import json
import logging
import random
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from aria.ops.timer import Timer

import constants
import he_core
from errors import CodecOverflowError
from errors import ConfigError
from errors import ProtocolAbortError
from he_core import Ciphertext
from he_core import Keypair
from he_core import LAYOUT_CODEC
from he_core import PlaintextWord
from seeding import derive_seed
from vertical_data import VerticalDataset

logger = logging.getLogger(__name__)

OBJECTIVES = ("logistic", "squared")


@dataclass(frozen=True)
class BoostConfig:
    trees: int = constants.DEFAULT_TREES
    max_depth: int = constants.DEFAULT_MAX_DEPTH
    bins: int = constants.DEFAULT_BINS
    reg_lambda: float = constants.DEFAULT_LAMBDA
    gamma: float = constants.DEFAULT_GAMMA
    shrinkage: float = constants.DEFAULT_SHRINKAGE
    objective: str = "logistic"
    min_samples: int = constants.MIN_SAMPLES_SPLIT
    seed: int = 0
    key_bits: int = constants.DEFAULT_KEY_BITS

    def validate(self, n: int) -> None:
        if self.trees < 1 or self.max_depth < 1:
            raise ConfigError(f"trees and max_depth must be >= 1, got {self.trees}/{self.max_depth}")
        if self.bins < 2:
            raise ConfigError(f"bins must be >= 2, got {self.bins}")
        if self.reg_lambda <= 0 or self.gamma < 0 or self.shrinkage < 0:
            raise ConfigError("lambda must be > 0, gamma and shrinkage >= 0")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got '{self.objective}'")
        if n > LAYOUT_CODEC.max_count:
            raise ConfigError(f"{n} samples exceed the layout codec's max_count {LAYOUT_CODEC.max_count}")


@dataclass
class BinPartition:
    """
    Equal-frequency bins of one feature. cuts[k] is the upper boundary (inclusive) of bin k.
    """
    feature: int
    cuts: np.ndarray
    assignment: np.ndarray

    @property
    def bin_count(self) -> int:
        return len(self.cuts) + 1

    @property
    def boundaries(self) -> np.ndarray:
        return self.cuts

    def bin_of(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.cuts, np.asarray(values, dtype=float), side="left")

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


def build_bins(column: Sequence[float], bin_count: int, feature: int = 0) -> BinPartition:
    if bin_count < 2:
        raise ConfigError(f"bin_count must be >= 2, got {bin_count}")
    values = np.asarray(column, dtype=float)
    ordered = np.sort(values)
    n = len(ordered)
    positions = [max((i * n) // bin_count - 1, 0) for i in range(1, bin_count)]
    cuts = np.unique(ordered[positions])
    # equal values share a bin; a cut at the maximum would leave the top bin empty
    cuts = cuts[cuts < ordered[-1]]
    if cuts.size == 0:
        logger.warning(f"Feature {feature} is constant; binned into a single bin")
    elif cuts.size + 1 < bin_count:
        logger.debug(f"Feature {feature}: ties reduced {bin_count} requested bins to {cuts.size + 1}")
    return BinPartition(feature=feature, cuts=cuts, assignment=np.searchsorted(cuts, values, side="left"))


def partition_from_cuts(feature: int, cuts: Sequence[float], column: Sequence[float]) -> BinPartition:
    cuts = np.asarray(cuts, dtype=float)
    return BinPartition(feature=feature, cuts=cuts,
                        assignment=np.searchsorted(cuts, np.asarray(column, dtype=float), side="left"))


def partitions_from_cuts(cuts: Sequence[Sequence[float]], X: np.ndarray) -> List[BinPartition]:
    if len(cuts) != X.shape[1]:
        raise ConfigError(f"{len(cuts)} cut lists for {X.shape[1]} features")
    return [partition_from_cuts(j, feature_cuts, X[:, j]) for j, feature_cuts in enumerate(cuts)]


def build_all_bins(X: np.ndarray, bin_count: int) -> List[BinPartition]:
    return [build_bins(X[:, j], bin_count, feature=j) for j in range(X.shape[1])]


@dataclass
class GradientPair:
    g: np.ndarray
    h: np.ndarray


@dataclass
class QuantizedGradients:
    # gradients on the layout codec grid: g = g_int / 2^F exactly
    g_int: np.ndarray
    h_int: np.ndarray
    frac_bits: int = LAYOUT_CODEC.frac_bits

    @property
    def g(self) -> np.ndarray:
        return self.g_int / float(1 << self.frac_bits)

    @property
    def h(self) -> np.ndarray:
        return self.h_int / float(1 << self.frac_bits)


def compute_gradients(y: np.ndarray, y_hat: np.ndarray, objective: str = "logistic") -> GradientPair:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"labels {y.shape} and margins {y_hat.shape} differ in shape")
    if objective == "squared":
        return GradientPair(g=y_hat - y, h=np.ones_like(y))
    p = 1.0 / (1.0 + np.exp(-y_hat))
    return GradientPair(g=p - y, h=p * (1.0 - p))


def quantize_gradients(gradients: GradientPair, params: he_core.CodecParams = LAYOUT_CODEC) -> QuantizedGradients:
    scale = float(params.scale)
    return QuantizedGradients(g_int=np.rint(gradients.g * scale).astype(np.int64),
                              h_int=np.rint(gradients.h * scale).astype(np.int64), frac_bits=params.frac_bits)


@dataclass
class EncryptedHistogram:
    feature: int
    g_cipher: List[Ciphertext]
    h_cipher: List[Ciphertext]
    counts: np.ndarray


@dataclass
class FeatureHistogram:
    """
    Per-bin gradient sums in fixed point (scaled by 2^F). Histograms decrypted from the passive
    party also keep the low (padding) regions of each sum.
    """
    owner: str
    feature: int
    g_sum: np.ndarray
    h_sum: np.ndarray
    counts: np.ndarray
    g_low: Optional[List[int]] = None
    h_low: Optional[List[int]] = None

    def to_json(self) -> Dict[str, Any]:
        record = {
            "owner": self.owner,
            "feature": self.feature,
            "g_sum": [int(v) for v in self.g_sum],
            "h_sum": [int(v) for v in self.h_sum],
            "counts": [int(c) for c in self.counts],
        }
        if self.g_low is not None:
            record["g_low"] = [format(v, "x") for v in self.g_low]
            record["h_low"] = [format(v, "x") for v in self.h_low]
        return record


def aggregate_encrypted(public_key, enc_g: Sequence[Ciphertext], enc_h: Sequence[Ciphertext],
                        partition: BinPartition, node_samples: np.ndarray,
                        max_count: int = LAYOUT_CODEC.max_count) -> EncryptedHistogram:
    """
    Passive-party aggregation: homomorphic per-bin sums over the node's samples, no decryption.
    """
    if len(node_samples) > max_count:
        raise CodecOverflowError(f"node of {len(node_samples)} samples exceeds max_count {max_count}")
    bin_count = partition.bin_count
    g_acc = [he_core.zero_cipher(public_key) for _ in range(bin_count)]
    h_acc = [he_core.zero_cipher(public_key) for _ in range(bin_count)]
    counts = np.zeros(bin_count, dtype=np.int64)
    for i in node_samples:
        k = partition.assignment[i]
        g_acc[k] = he_core.add_cipher(public_key, g_acc[k], enc_g[i])
        h_acc[k] = he_core.add_cipher(public_key, h_acc[k], enc_h[i])
        counts[k] += 1
    return EncryptedHistogram(feature=partition.feature, g_cipher=g_acc, h_cipher=h_acc, counts=counts)


def decrypt_histogram(keypair: Keypair, histogram: EncryptedHistogram,
                      params: he_core.CodecParams = LAYOUT_CODEC) -> FeatureHistogram:
    g_sum, h_sum, g_low, h_low = [], [], [], []
    for c_g, c_h, m in zip(histogram.g_cipher, histogram.h_cipher, histogram.counts):
        value, low = he_core.decode_layout_fixed(he_core.decrypt(keypair.secret_key, c_g), int(m), params)
        g_sum.append(value)
        g_low.append(low)
        value, low = he_core.decode_layout_fixed(he_core.decrypt(keypair.secret_key, c_h), int(m), params)
        h_sum.append(value)
        h_low.append(low)
    return FeatureHistogram(owner=constants.OWNER_PASSIVE, feature=histogram.feature,
                            g_sum=np.array(g_sum, dtype=np.int64), h_sum=np.array(h_sum, dtype=np.int64),
                            counts=np.asarray(histogram.counts, dtype=np.int64), g_low=g_low, h_low=h_low)


def plain_histogram(partition: BinPartition, quantized: QuantizedGradients, node_samples: np.ndarray,
                    owner: str) -> FeatureHistogram:
    bins = partition.assignment[node_samples]
    size = partition.bin_count
    # integer sums stay below 2^53, so the float64 bincount is exact
    g_sum = np.bincount(bins, weights=quantized.g_int[node_samples], minlength=size)
    h_sum = np.bincount(bins, weights=quantized.h_int[node_samples], minlength=size)
    return FeatureHistogram(owner=owner, feature=partition.feature, g_sum=np.rint(g_sum).astype(np.int64),
                            h_sum=np.rint(h_sum).astype(np.int64),
                            counts=np.bincount(bins, minlength=size).astype(np.int64))


def split_gain(G_L: float, H_L: float, G: float, H: float, reg_lambda: float, gamma: float) -> float:
    G_R = G - G_L
    H_R = H - H_L
    return 0.5 * (G_L ** 2 / (H_L + reg_lambda) + G_R ** 2 / (H_R + reg_lambda) - G ** 2 / (H + reg_lambda)) - gamma


@dataclass
class SplitDecision:
    owner: str
    feature: int
    bin_id: int
    gain: float
    threshold: Optional[float] = None


def find_best_split(histograms: Sequence[FeatureHistogram], G: int, H: int, config: BoostConfig,
                    partitions_A: Optional[Sequence[BinPartition]] = None) -> Optional[SplitDecision]:
    """
    Scans every bin boundary of every histogram; ties go to A, then the lower feature, then the lower bin.
    :param G: node gradient sum in fixed point
    :param H: node hessian sum in fixed point
    :return: the best split, or None when no candidate has positive gain
    """
    scale = float(1 << LAYOUT_CODEC.frac_bits)
    G_f = G / scale
    H_f = H / scale
    parent = G_f ** 2 / (H_f + config.reg_lambda)
    best: Optional[SplitDecision] = None
    ordered = sorted(histograms, key=lambda hist: (hist.owner != constants.OWNER_ACTIVE, hist.feature))
    for hist in ordered:
        if len(hist.counts) < 2:
            continue
        G_L = np.cumsum(hist.g_sum)[:-1] / scale
        H_L = np.cumsum(hist.h_sum)[:-1] / scale
        n_L = np.cumsum(hist.counts)[:-1]
        G_R = G_f - G_L
        H_R = H_f - H_L
        gains = 0.5 * (G_L ** 2 / (H_L + config.reg_lambda) + G_R ** 2 / (H_R + config.reg_lambda) - parent) \
            - config.gamma
        gains[(n_L == 0) | (n_L == hist.counts.sum())] = -np.inf
        k = int(np.argmax(gains))
        gain = float(gains[k])
        if gain > 0 and (best is None or gain > best.gain):
            threshold = None
            if hist.owner == constants.OWNER_ACTIVE and partitions_A is not None:
                threshold = float(partitions_A[hist.feature].cuts[k])
            best = SplitDecision(owner=hist.owner, feature=hist.feature, bin_id=k, gain=gain, threshold=threshold)
    return best


@dataclass
class TreeNode:
    node_id: int
    depth: int
    G: int
    H: int
    samples: np.ndarray = field(repr=False)
    owner: Optional[str] = None
    feature: Optional[int] = None
    bin_id: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional[int] = None
    right: Optional[int] = None
    weight: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_json(self) -> Dict[str, Any]:
        if self.is_leaf:
            return {"id": self.node_id, "depth": self.depth, "leaf": True, "weight": float(self.weight).hex()}
        record = {"id": self.node_id, "depth": self.depth, "leaf": False, "owner": self.owner,
                  "feature": self.feature, "left": self.left, "right": self.right}
        if self.owner == constants.OWNER_ACTIVE:
            record["threshold"] = float(self.threshold).hex()
        else:
            # passive-party nodes keep only (feature, bin); the threshold stays with B
            record["bin_id"] = self.bin_id
        return record


@dataclass
class PassiveLookup:
    """
    The passive party's private routing table: its bin boundaries per feature.
    """
    partitions: List[BinPartition]

    def goes_left(self, feature: int, bin_id: int, values: np.ndarray) -> np.ndarray:
        return self.partitions[feature].bin_of(values) <= bin_id

    def to_json(self) -> Dict[str, Any]:
        return {"features": [{"feature": p.feature, "cuts": [float(c).hex() for c in p.cuts]}
                             for p in self.partitions]}


@dataclass
class TreeModel:
    trees: List[List[TreeNode]]
    reg_lambda: float
    gamma: float
    shrinkage: float
    objective: str
    passive_lookup: PassiveLookup = field(repr=False)

    def structure(self) -> List[List[Dict[str, Any]]]:
        return [[node.to_json() for node in tree] for tree in self.trees]

    def to_json(self) -> Dict[str, Any]:
        return {
            "schema_version": constants.SCHEMA_VERSION,
            "objective": self.objective,
            "lambda": self.reg_lambda,
            "gamma": self.gamma,
            "shrinkage": self.shrinkage,
            "trees": self.structure(),
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as out:
            json.dump(self.to_json(), out, indent=2, sort_keys=True)


@dataclass
class NodeView:
    """
    The active party's legitimate view of one node: its instance space and B's decrypted histograms.
    """
    tree: int
    node_id: int
    depth: int
    samples: np.ndarray
    histograms: List[FeatureHistogram]


@dataclass
class BoostTranscript:
    trees: List[List[NodeView]] = field(default_factory=list)

    def nodes(self, tree: int) -> List[NodeView]:
        return self.trees[tree] if tree < len(self.trees) else []

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as out:
            for views in self.trees:
                for view in views:
                    out.write(json.dumps({"tree": view.tree, "node": view.node_id, "depth": view.depth,
                                          "samples": [int(i) for i in view.samples],
                                          "histograms": [h.to_json() for h in view.histograms]},
                                         sort_keys=True) + "\n")


# (tree index, quantized gradients) -> (g words, h words)
GradientEncoder = Callable[[int, QuantizedGradients], Tuple[List[PlaintextWord], List[PlaintextWord]]]


def plain_words(quantized: QuantizedGradients) -> Tuple[List[PlaintextWord], List[PlaintextWord]]:
    scale = float(1 << quantized.frac_bits)
    g_words = [he_core.encode_layout(int(v) / scale, 0) for v in quantized.g_int]
    h_words = [he_core.encode_layout(int(v) / scale, 0) for v in quantized.h_int]
    return g_words, h_words


class PassiveParty:
    def __init__(self, X_B: np.ndarray, bins: int):
        self.X_B = X_B
        self.partitions = build_all_bins(X_B, bins)

    def encrypted_histograms(self, public_key, enc_g: Sequence[Ciphertext], enc_h: Sequence[Ciphertext],
                             samples: np.ndarray) -> List[EncryptedHistogram]:
        return [aggregate_encrypted(public_key, enc_g, enc_h, p, samples) for p in self.partitions]

    def instance_space(self, feature: int, bin_id: int, samples: np.ndarray) -> np.ndarray:
        # B's reply to a split request: which node samples go left
        return samples[self.partitions[feature].assignment[samples] <= bin_id]

    def lookup(self) -> PassiveLookup:
        return PassiveLookup(partitions=self.partitions)


class ActiveParty:
    def __init__(self, X_A: np.ndarray, Y: np.ndarray, bins: int, keypair: Optional[Keypair], seed: int):
        self.X_A = X_A
        self.Y = Y
        self.keypair = keypair
        self.partitions = build_all_bins(X_A, bins)
        self.nonces = random.Random(seed)

    def encrypt_words(self, words: Sequence[PlaintextWord]) -> List[Ciphertext]:
        return [he_core.encrypt(self.keypair.public_key, w, self.nonces) for w in words]

    def own_histograms(self, quantized: QuantizedGradients, samples: np.ndarray) -> List[FeatureHistogram]:
        return [plain_histogram(p, quantized, samples, constants.OWNER_ACTIVE) for p in self.partitions]


def _grow_tree(tree_index: int, active: ActiveParty, passive: PassiveParty, quantized: QuantizedGradients,
               passive_histograms: Callable[[np.ndarray], List[FeatureHistogram]], config: BoostConfig,
               views: List[NodeView]) -> List[TreeNode]:
    scale = float(1 << quantized.frac_bits)
    all_samples = np.arange(len(active.Y))
    nodes = [TreeNode(node_id=0, depth=0, G=int(quantized.g_int.sum()), H=int(quantized.h_int.sum()),
                      samples=all_samples)]
    frontier = [nodes[0]]
    for depth in range(config.max_depth):
        next_frontier = []
        for node in frontier:
            if len(node.samples) < config.min_samples:
                continue
            b_histograms = passive_histograms(node.samples)
            views.append(NodeView(tree=tree_index, node_id=node.node_id, depth=depth, samples=node.samples,
                                  histograms=b_histograms))
            decision = find_best_split(active.own_histograms(quantized, node.samples) + b_histograms,
                                       node.G, node.H, config, active.partitions)
            if decision is None:
                continue
            if decision.owner == constants.OWNER_ACTIVE:
                goes_left = active.partitions[decision.feature].assignment[node.samples] <= decision.bin_id
                left_samples = node.samples[goes_left]
            else:
                left_samples = passive.instance_space(decision.feature, decision.bin_id, node.samples)
            right_samples = np.setdiff1d(node.samples, left_samples, assume_unique=True)
            node.owner = decision.owner
            node.feature = decision.feature
            node.bin_id = decision.bin_id
            node.threshold = decision.threshold
            for samples in (left_samples, right_samples):
                child = TreeNode(node_id=len(nodes), depth=depth + 1, G=int(quantized.g_int[samples].sum()),
                                 H=int(quantized.h_int[samples].sum()), samples=samples)
                nodes.append(child)
                next_frontier.append(child)
            node.left = nodes[-2].node_id
            node.right = nodes[-1].node_id
            logger.debug(f"Tree {tree_index} node {node.node_id}: split on {decision.owner}:{decision.feature} "
                         f"bin {decision.bin_id} gain {decision.gain:.6f}")
        frontier = next_frontier
    for node in nodes:
        if node.is_leaf:
            node.weight = -(node.G / scale) / (node.H / scale + config.reg_lambda) * config.shrinkage
    return nodes


def _tree_outputs(nodes: List[TreeNode], n: int) -> np.ndarray:
    out = np.zeros(n)
    for node in nodes:
        if node.is_leaf:
            out[node.samples] = node.weight
    return out


def _boost(dataset: VerticalDataset, config: BoostConfig, keypair: Keypair,
           gradient_encoder: Optional[GradientEncoder]) -> Tuple[TreeModel, BoostTranscript]:
    config.validate(dataset.n)
    active = ActiveParty(dataset.X_A, dataset.Y, config.bins, keypair, derive_seed(config.seed, "nonces", "A"))
    passive = PassiveParty(dataset.X_B, config.bins)
    transcript = BoostTranscript()
    margins = np.zeros(dataset.n)
    trees = []
    for t in range(config.trees):
        quantized = quantize_gradients(compute_gradients(dataset.Y, margins, config.objective))
        try:
            if gradient_encoder is None:
                g_words, h_words = plain_words(quantized)
            else:
                g_words, h_words = gradient_encoder(t, quantized)
        except CodecOverflowError as e:
            raise ProtocolAbortError("A encodes gradients", e)
        enc_g = active.encrypt_words(g_words)
        enc_h = active.encrypt_words(h_words)

        def passive_histograms(samples, enc_g=enc_g, enc_h=enc_h):
            encrypted = passive.encrypted_histograms(keypair.public_key, enc_g, enc_h, samples)
            try:
                return [decrypt_histogram(keypair, hist) for hist in encrypted]
            except CodecOverflowError as e:
                raise ProtocolAbortError("A decrypts histograms", e)

        views: List[NodeView] = []
        with Timer(logger, f"SecureBoost tree {t}"):
            nodes = _grow_tree(t, active, passive, quantized, passive_histograms, config, views)
        transcript.trees.append(views)
        trees.append(nodes)
        margins = margins + _tree_outputs(nodes, dataset.n)
    model = TreeModel(trees=trees, reg_lambda=config.reg_lambda, gamma=config.gamma, shrinkage=config.shrinkage,
                      objective=config.objective, passive_lookup=passive.lookup())
    return model, transcript


def train_ensemble(dataset: VerticalDataset, config: BoostConfig, keypair: Optional[Keypair] = None,
                   gradient_encoder: Optional[GradientEncoder] = None) -> Tuple[TreeModel, BoostTranscript]:
    """
    Encrypted two-party SecureBoost; the active party owns the keypair.
    :param gradient_encoder: replaces the plain layout encoding of the gradients (attack hook)
    :return: (model, transcript of A's per-node views)
    """
    if keypair is None:
        keypair = he_core.keygen(config.key_bits, derive_seed(config.seed, "active", "keygen"))
    he_core.check_layout_capacity(keypair.public_key)
    model, transcript = _boost(dataset, config, keypair, gradient_encoder)
    logger.info(f"Trained {config.trees} encrypted tree(s); training accuracy {accuracy(model, dataset):.4f}")
    return model, transcript


def _reference_split(columns: Sequence[Tuple[str, int, np.ndarray, np.ndarray]], samples: np.ndarray,
                     quantized: QuantizedGradients, config: BoostConfig) -> Optional[Tuple[SplitDecision, float]]:
    # exhaustive scan over the node's raw values sorted per feature; A's features come first
    scale = float(1 << quantized.frac_bits)
    G = int(quantized.g_int[samples].sum())
    H = int(quantized.h_int[samples].sum())
    best: Optional[Tuple[SplitDecision, float]] = None
    for owner, feature, column, cuts in columns:
        values = column[samples]
        order = np.argsort(values, kind="stable")
        ordered = values[order]
        g_prefix = np.concatenate(([0], np.cumsum(quantized.g_int[samples][order])))
        h_prefix = np.concatenate(([0], np.cumsum(quantized.h_int[samples][order])))
        for k, cut in enumerate(cuts):
            n_left = int(np.searchsorted(ordered, cut, side="right"))
            if n_left == 0 or n_left == len(samples):
                continue
            gain = split_gain(int(g_prefix[n_left]) / scale, int(h_prefix[n_left]) / scale, G / scale, H / scale,
                              config.reg_lambda, config.gamma)
            if gain > 0 and (best is None or gain > best[0].gain):
                threshold = float(cut) if owner == constants.OWNER_ACTIVE else None
                best = (SplitDecision(owner=owner, feature=feature, bin_id=k, gain=gain, threshold=threshold),
                        float(cut))
    return best


def train_reference(dataset: VerticalDataset, config: BoostConfig) -> TreeModel:
    """
    Plaintext centralized trainer. Both parties' columns sit in one place; every bin cut of every
    feature is tried against the raw sorted values with g and h summed directly, so no histogram
    or split-search code is shared with the two-party path.
    """
    config.validate(dataset.n)
    partitions_A = build_all_bins(dataset.X_A, config.bins)
    partitions_B = build_all_bins(dataset.X_B, config.bins)
    columns = [(constants.OWNER_ACTIVE, p.feature, dataset.X_A[:, p.feature], p.cuts) for p in partitions_A] + \
              [(constants.OWNER_PASSIVE, p.feature, dataset.X_B[:, p.feature], p.cuts) for p in partitions_B]
    margins = np.zeros(dataset.n)
    trees = []
    for _ in range(config.trees):
        quantized = quantize_gradients(compute_gradients(dataset.Y, margins, config.objective))
        scale = float(1 << quantized.frac_bits)
        nodes = [TreeNode(node_id=0, depth=0, G=int(quantized.g_int.sum()), H=int(quantized.h_int.sum()),
                          samples=np.arange(dataset.n))]
        frontier = [nodes[0]]
        for depth in range(config.max_depth):
            next_frontier = []
            for node in frontier:
                if len(node.samples) < config.min_samples:
                    continue
                found = _reference_split(columns, node.samples, quantized, config)
                if found is None:
                    continue
                decision, cut = found
                column = dataset.X_A if decision.owner == constants.OWNER_ACTIVE else dataset.X_B
                goes_left = column[node.samples, decision.feature] <= cut
                node.owner = decision.owner
                node.feature = decision.feature
                node.bin_id = decision.bin_id
                node.threshold = decision.threshold
                for samples in (node.samples[goes_left], node.samples[~goes_left]):
                    child = TreeNode(node_id=len(nodes), depth=depth + 1, G=int(quantized.g_int[samples].sum()),
                                     H=int(quantized.h_int[samples].sum()), samples=samples)
                    nodes.append(child)
                    next_frontier.append(child)
                node.left = nodes[-2].node_id
                node.right = nodes[-1].node_id
            frontier = next_frontier
        for node in nodes:
            if node.is_leaf:
                node.weight = -(node.G / scale) / (node.H / scale + config.reg_lambda) * config.shrinkage
        trees.append(nodes)
        margins = margins + _tree_outputs(nodes, dataset.n)
    return TreeModel(trees=trees, reg_lambda=config.reg_lambda, gamma=config.gamma, shrinkage=config.shrinkage,
                     objective=config.objective, passive_lookup=PassiveLookup(partitions=partitions_B))


def predict(model: TreeModel, x_A: np.ndarray, x_B: np.ndarray) -> np.ndarray:
    x_A = np.atleast_2d(np.asarray(x_A, dtype=float))
    x_B = np.atleast_2d(np.asarray(x_B, dtype=float))
    scores = np.zeros(x_A.shape[0])
    for nodes in model.trees:
        position = np.zeros(x_A.shape[0], dtype=int)
        for _ in range(len(nodes)):
            active_rows = np.array([not nodes[p].is_leaf for p in position])
            if not active_rows.any():
                break
            for node_id in np.unique(position[active_rows]):
                node = nodes[node_id]
                rows = np.flatnonzero(position == node_id)
                if node.owner == constants.OWNER_ACTIVE:
                    left = x_A[rows, node.feature] <= node.threshold
                else:
                    left = model.passive_lookup.goes_left(node.feature, node.bin_id, x_B[rows, node.feature])
                position[rows] = np.where(left, node.left, node.right)
        scores += np.array([nodes[p].weight for p in position])
    return scores


def predict_label(model: TreeModel, scores: np.ndarray) -> np.ndarray:
    if model.objective == "squared":
        return scores
    return (scores >= 0).astype(float)


def accuracy(model: TreeModel, dataset: VerticalDataset) -> float:
    return float(np.mean(predict_label(model, predict(model, dataset.X_A, dataset.X_B)) == dataset.Y))
