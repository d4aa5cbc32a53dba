#  SPDX-License-Identifier: Apache-2.0
import itertools
import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import FrozenSet
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Set
from typing import Tuple

import numpy as np
from aria.ops.timer import Timer

import constants
import he_core
import secureboost_protocol
from errors import ConfigError
from errors import PlanError
from he_core import Keypair
from he_core import PlaintextWord
from secureboost_protocol import BinPartition
from secureboost_protocol import BoostConfig
from secureboost_protocol import BoostTranscript
from secureboost_protocol import NodeView
from secureboost_protocol import QuantizedGradients
from secureboost_protocol import TreeModel
from seeding import big_rng
from seeding import numpy_rng
from vertical_data import VerticalDataset

logger = logging.getLogger(__name__)

GROUP_CAPACITIES = ("b", "b-1")
STATUS_CONFIDENT = "confident"
STATUS_AMBIGUOUS = "ambiguous"
STATUS_UNRECOVERABLE = "unrecoverable"
BUDGET_TIERS = (1 << 8, 1 << 11, 1 << 14, constants.SEARCH_BUDGET)


@dataclass(frozen=True)
class MagicLayout:
    """
    Geometry of the low (padding) region of a layout word: k random windows of window_bits
    at the top, the base-b group identifier below them.
    """
    magic_bits: int = constants.MAGIC_BITS
    window_bits: int = constants.WINDOW_BITS
    random_bits: int = constants.RANDOM_BITS

    def __post_init__(self) -> None:
        if not 0 < self.random_bits <= self.window_bits < self.magic_bits:
            raise ConfigError(f"invalid magic layout {self}")

    def identifier_bits(self, k: int) -> int:
        return self.magic_bits - self.window_bits * k

    def window_offset(self, supergroup: int) -> int:
        return self.magic_bits - self.window_bits * (supergroup + 1)


@dataclass(frozen=True)
class SampleSlot:
    encoded_index: int
    slot: int
    supergroup: int
    position: int
    ordinal: int


@dataclass(frozen=True)
class EncodingPlan:
    k: int
    b: int
    l: int
    groups: int
    capacity: int
    n_samples: int
    group_capacity: str = "b"
    layout: MagicLayout = MagicLayout()

    @property
    def encoded(self) -> int:
        return min(self.n_samples, self.capacity)

    @property
    def per_group(self) -> int:
        return self.b if self.group_capacity == "b" else self.b - 1

    @property
    def identifier_bits(self) -> int:
        return self.layout.identifier_bits(self.k)

    @property
    def groups_per_slot(self) -> int:
        return self.groups // 2

    def locate(self, encoded_index: int) -> SampleSlot:
        i = encoded_index
        if not 0 <= i < self.capacity:
            raise PlanError(f"encoded index {i} outside the plan capacity {self.capacity}")
        return SampleSlot(encoded_index=i, slot=i % 2, supergroup=(i // 2) % self.k,
                          position=(i // (2 * self.k)) % self.l, ordinal=i // (2 * self.k * self.l))

    def to_json(self) -> Dict[str, Any]:
        return {"k": self.k, "b": self.b, "l": self.l, "groups": self.groups, "capacity": self.capacity,
                "encoded": self.encoded, "group_capacity": self.group_capacity,
                "magic_bits": self.layout.magic_bits, "window_bits": self.layout.window_bits,
                "random_bits": self.layout.random_bits}


def _identifier_length(b: int, bits: int) -> int:
    # largest l with b^l <= 2^bits
    limit = 1 << bits
    l, power = 0, b
    while power <= limit:
        l += 1
        power *= b
    return l


def plan_encoding(n_samples: int, k: int = constants.DEFAULT_SUPERGROUPS, b: int = constants.DEFAULT_BASE,
                  layout: MagicLayout = MagicLayout(), group_capacity: str = "b") -> EncodingPlan:
    """
    :param group_capacity: "b" fills every group with b samples, "b-1" keeps a single group below the digit overflow
    """
    if k < 1 or b < 2:
        raise PlanError(f"need k >= 1 and b >= 2, got k={k} b={b}")
    if group_capacity not in GROUP_CAPACITIES:
        raise PlanError(f"group_capacity must be one of {GROUP_CAPACITIES}, got '{group_capacity}'")
    bits = layout.identifier_bits(k)
    if bits <= 0:
        raise PlanError(f"{k} random windows of {layout.window_bits} bits leave no identifier region")
    l = _identifier_length(b, bits)
    if l < 1:
        raise PlanError(f"base {b} does not fit a single digit into {bits} identifier bits")
    groups = 2 * k * l
    per_group = b if group_capacity == "b" else b - 1
    plan = EncodingPlan(k=k, b=b, l=l, groups=groups, capacity=groups * per_group, n_samples=n_samples,
                        group_capacity=group_capacity, layout=layout)
    logger.debug(f"Encoding plan k={k} b={b}: l={l}, {groups} groups, capacity {plan.capacity}, "
                 f"encoding {plan.encoded} of {n_samples} samples")
    return plan


@dataclass(frozen=True)
class MagicNumber:
    raw: int
    supergroup: int
    position: int
    random_value: int
    layout: MagicLayout
    k: int

    @property
    def random_region(self) -> int:
        return (self.raw >> self.layout.window_offset(self.supergroup)) & ((1 << self.layout.window_bits) - 1)

    @property
    def identifier_region(self) -> int:
        return self.raw & ((1 << self.layout.identifier_bits(self.k)) - 1)


def compose_magic(plan: EncodingPlan, supergroup: int, position: int, random_value: int) -> MagicNumber:
    if not 0 < random_value < 1 << plan.layout.random_bits:
        raise PlanError(f"random value {random_value} outside [1, 2^{plan.layout.random_bits})")
    raw = (random_value << plan.layout.window_offset(supergroup)) | plan.b ** position
    return MagicNumber(raw=raw, supergroup=supergroup, position=position, random_value=random_value,
                       layout=plan.layout, k=plan.k)


def make_magic(plan: EncodingPlan, encoded_index: int, rng: random.Random,
               taken: Optional[Dict[Tuple[int, int, int], Set[int]]] = None) -> MagicNumber:
    """
    :param taken: random values already used per group (slot, supergroup, position); keeps them distinct
    """
    slot = plan.locate(encoded_index)
    used = set() if taken is None else taken.setdefault((slot.slot, slot.supergroup, slot.position), set())
    if len(used) >= (1 << plan.layout.random_bits) - 1:
        raise PlanError(f"group {slot} ran out of distinct random values")
    value = rng.randrange(1, 1 << plan.layout.random_bits)
    while value in used:
        value = rng.randrange(1, 1 << plan.layout.random_bits)
    used.add(value)
    return compose_magic(plan, slot.supergroup, slot.position, value)


@dataclass
class EncodedGradients:
    g_words: List[PlaintextWord]
    h_words: List[PlaintextWord]
    magics: Dict[int, MagicNumber]


def encode_gradients(quantized: QuantizedGradients, plan: EncodingPlan, rng: random.Random) -> EncodedGradients:
    """
    Hides a magic number in the padding of the first (slot 0) or second (slot 1) order
    gradient of each encoded sample. Gradient values are untouched.
    """
    n = len(quantized.g_int)
    if plan.n_samples != n:
        raise PlanError(f"plan built for {plan.n_samples} samples, gradients cover {n}")
    taken: Dict[Tuple[int, int, int], Set[int]] = {}
    magics = {i: make_magic(plan, i, rng, taken) for i in range(plan.encoded)}
    scale = float(1 << quantized.frac_bits)
    g_words, h_words = [], []
    for i in range(n):
        magic = magics.get(i)
        g_magic = magic.raw if magic is not None and i % 2 == constants.SLOT_FIRST else 0
        h_magic = magic.raw if magic is not None and i % 2 == constants.SLOT_SECOND else 0
        g_words.append(he_core.encode_layout(int(quantized.g_int[i]) / scale, g_magic))
        h_words.append(he_core.encode_layout(int(quantized.h_int[i]) / scale, h_magic))
    return EncodedGradients(g_words=g_words, h_words=h_words, magics=magics)


class MagicEncoder:
    """
    Gradient encoder handed to the SecureBoost trainer by a malicious active party;
    only the target tree carries magic numbers.
    """

    def __init__(self, plan: EncodingPlan, seed: int, target_tree: int = 0):
        self.plan = plan
        self.target_tree = target_tree
        self.rng = big_rng(seed, "magic")
        self.encoded: Optional[EncodedGradients] = None

    def __call__(self, tree_index: int, quantized: QuantizedGradients) -> Tuple[List[PlaintextWord],
                                                                               List[PlaintextWord]]:
        if tree_index != self.target_tree:
            return secureboost_protocol.plain_words(quantized)
        self.encoded = encode_gradients(quantized, self.plan, self.rng)
        return self.encoded.g_words, self.encoded.h_words


def _meet_in_middle(target: int, groups: Sequence[Sequence[Tuple[int, Tuple[int, ...]]]],
                    limit: Optional[int], budget: Optional[int] = None) -> Optional[List[FrozenSet[int]]]:
    """
    Picks one option from every group so that the option values sum to target.
    :return: the matching member sets (at most limit), or None when a half exceeds the budget
    """
    sizes = [len(options) for options in groups]
    if any(size == 0 for size in sizes):
        return []
    total = sum(math.log2(size) for size in sizes)
    split, acc = 0, 0.0
    while split < len(groups) and acc + math.log2(sizes[split]) <= total / 2:
        acc += math.log2(sizes[split])
        split += 1
    if budget is not None and max(acc, total - acc) > math.log2(budget):
        return None

    def expand(part):
        sums = [(0, ())]
        for options in part:
            sums = [(s + value, members + chosen) for s, members in sums for value, chosen in options]
        return sums

    left: Dict[int, List[Tuple[int, ...]]] = defaultdict(list)
    for value, members in expand(groups[:split]):
        left[value].append(members)
    solutions: List[FrozenSet[int]] = []
    for value, members in expand(groups[split:]):
        for partner in left.get(target - value, ()):
            solutions.append(frozenset(partner + members))
            if limit is not None and len(solutions) >= limit:
                return solutions
    return solutions


def solve_bin(residual: int, candidates: Sequence[int], magics: Mapping[int, int],
              limit: Optional[int] = 2) -> List[FrozenSet[int]]:
    """
    Exact subset search: every subset of candidates whose magic numbers sum to residual.
    """
    groups = [[(0, ()), (magics[i], (i,))] for i in candidates]
    return _meet_in_middle(residual, groups, limit)


def _digits(value: int, b: int, l: int) -> Optional[Dict[int, int]]:
    digits = {}
    if b & (b - 1) == 0:
        # power-of-two base: visit only the nonzero digits
        width = b.bit_length() - 1
        while value:
            position = ((value & -value).bit_length() - 1) // width
            if position >= l:
                return None
            digits[position] = (value >> (position * width)) & (b - 1)
            value &= ~((b - 1) << (position * width))
        return digits
    position = 0
    while value:
        value, d = divmod(value, b)
        if d:
            if position >= l:
                return None
            digits[position] = d
        position += 1
    return digits


def _count_hypotheses(digits: Dict[int, int], capacity: Dict[int, int], b: int,
                      max_moves: int) -> Optional[List[Dict[int, int]]]:
    """
    Per-position member counts that explain the identifier digits with up to max_moves carries;
    a carry at q turns one member at q+1 into b members at q.
    """
    start = tuple(sorted(digits.items()))
    seen = {start}
    frontier = {start}
    for _ in range(max_moves):
        expanded = set()
        for hypothesis in frontier:
            counts = dict(hypothesis)
            for position in counts:
                if position == 0:
                    continue
                moved = dict(counts)
                moved[position] -= 1
                if moved[position] == 0:
                    del moved[position]
                moved[position - 1] = moved.get(position - 1, 0) + b
                key = tuple(sorted(moved.items()))
                if key not in seen:
                    seen.add(key)
                    expanded.add(key)
        frontier = expanded
        if len(seen) > 16 * constants.MAX_HYPOTHESES:
            return None
    feasible = [dict(h) for h in seen if all(c <= capacity.get(p, 0) for p, c in h)]
    if len(feasible) > constants.MAX_HYPOTHESES:
        return None
    return sorted(feasible, key=lambda h: sum(h.values()))


@dataclass
class _Outcome:
    solutions: List[FrozenSet[int]]
    complete: bool


def _structured_solutions(residual: int, candidates: Sequence[int], plan: EncodingPlan, magics: Sequence[int],
                          max_moves: int, sizes: Tuple[int, int], budget: int) -> _Outcome:
    """
    Solves a bin too large for plain subset search: parses the identifier digits, enumerates
    carry hypotheses and matches the random windows per hypothesis.
    :param sizes: admissible range of the solution size
    """
    digits = _digits(residual & ((1 << plan.identifier_bits) - 1), plan.b, plan.l)
    if digits is None:
        return _Outcome([], False)
    by_position: Dict[int, List[int]] = defaultdict(list)
    for i in candidates:
        by_position[plan.locate(i).position].append(i)
    capacity = {p: len(members) for p, members in by_position.items()}
    hypotheses = _count_hypotheses(digits, capacity, plan.b, max_moves)
    if hypotheses is None:
        return _Outcome([], False)
    solutions: List[FrozenSet[int]] = []
    complete = True
    for hypothesis in hypotheses:
        if not sizes[0] <= sum(hypothesis.values()) <= sizes[1]:
            continue
        groups = [[(sum(magics[i] for i in combo), combo) for combo in itertools.combinations(by_position[p], c)]
                  for p, c in sorted(hypothesis.items())]
        found = _meet_in_middle(residual, groups, 2 - len(solutions), budget)
        if found is None:
            complete = False
            continue
        solutions.extend(found)
        if len(solutions) >= 2:
            break
    return _Outcome(solutions, complete)


@dataclass
class RecoveredBins:
    feature: int
    bin_count: int
    members: Dict[int, Set[int]]
    status: Dict[int, str]

    def bin_of(self, sample: int) -> Optional[int]:
        for k, samples in self.members.items():
            if sample in samples:
                return k
        return None

    def confident_bins(self) -> int:
        return sum(1 for s in self.status.values() if s == STATUS_CONFIDENT)


class _FeatureState:
    def __init__(self, encoded: int, bin_count: int):
        self.bin_count = bin_count
        self.bins = np.full(encoded, -1, dtype=np.int64)
        self.excluded = np.zeros((encoded, bin_count), dtype=bool)
        self.ambiguous: Set[int] = set()
        self.contradictions: Set[int] = set()

    def assign(self, sample: int, k: int) -> None:
        self.bins[sample] = k
        self.excluded[sample, :] = True
        self.excluded[sample, k] = False

    def propagate(self) -> int:
        assigned = 0
        while True:
            open_rows = np.flatnonzero(self.bins < 0)
            if open_rows.size == 0:
                return assigned
            remaining = self.bin_count - self.excluded[open_rows].sum(axis=1)
            forced = open_rows[remaining == 1]
            if forced.size == 0:
                return assigned
            for i in forced:
                self.assign(int(i), int(np.argmin(self.excluded[i])))
            assigned += forced.size


@dataclass
class _NodeIndex:
    view: NodeView
    slot_members: Tuple[np.ndarray, np.ndarray]
    non_encoded: int


class _Reverser:
    def __init__(self, views: Sequence[NodeView], plan: EncodingPlan, magics: Mapping[int, MagicNumber]):
        self.plan = plan
        self.encoded = plan.encoded
        self.magics = [magics[i].raw for i in range(self.encoded)]
        self.nodes = []
        for view in views:
            encoded = view.samples[view.samples < self.encoded]
            self.nodes.append(_NodeIndex(view=view,
                                         slot_members=(encoded[encoded % 2 == constants.SLOT_FIRST],
                                                       encoded[encoded % 2 == constants.SLOT_SECOND]),
                                         non_encoded=int((view.samples >= self.encoded).sum())))
        self.features = sorted({h.feature for view in views for h in view.histograms})
        root = {h.feature: h for h in views[0].histograms} if views else {}
        self.states = {j: _FeatureState(self.encoded, len(root[j].counts)) for j in self.features}
        self.done: Set[Tuple[int, int, int]] = set()

    def _residual(self, state: _FeatureState, members: np.ndarray, k: int, low: int) -> int:
        return low - sum(self.magics[i] for i in members[state.bins[members] == k])

    def _certify(self, residual: int, candidates: List[int], sizes: Tuple[int, int], max_moves: int,
                 exact_moves: bool, budget: int) -> _Outcome:
        if len(candidates) <= constants.EXACT_SEARCH_LIMIT:
            found = solve_bin(residual, candidates, dict(zip(candidates, (self.magics[i] for i in candidates))),
                              limit=None)
            return _Outcome([s for s in found if sizes[0] <= len(s) <= sizes[1]][:2], True)
        outcome = _structured_solutions(residual, candidates, self.plan, self.magics, max_moves, sizes, budget)
        outcome.complete = outcome.complete and exact_moves
        return outcome

    def _solve_item(self, node_id: int, feature: int, k: int, budget: int) -> bool:
        node = self.nodes[node_id]
        state = self.states[feature]
        histogram = next(h for h in node.view.histograms if h.feature == feature)
        lows = (histogram.g_low[k], histogram.h_low[k])
        residuals, candidates, digit_sums = [], [], []
        assigned = 0
        for slot in (constants.SLOT_FIRST, constants.SLOT_SECOND):
            members = node.slot_members[slot]
            residual = self._residual(state, members, k, lows[slot])
            residuals.append(residual)
            assigned += int((state.bins[members] == k).sum())
            open_members = members[state.bins[members] < 0]
            candidates.append([int(i) for i in open_members[~state.excluded[open_members, k]]])
            digits = _digits(residual & ((1 << self.plan.identifier_bits) - 1), self.plan.b, self.plan.l)
            digit_sums.append(sum(digits.values()) if digits else 0)
        if min(residuals) < 0:
            self._contradiction(node_id, feature, k, "assigned members exceed the observed sum")
            return False

        progress = False
        unknown = int(histogram.counts[k]) - assigned
        slack = unknown - sum(digit_sums)
        for slot in (constants.SLOT_FIRST, constants.SLOT_SECOND):
            residual = residuals[slot]
            if residual == 0:
                if candidates[slot]:
                    state.excluded[candidates[slot], k] = True
                    progress = True
                continue
            if not candidates[slot]:
                self._contradiction(node_id, feature, k, f"slot {slot} sum left without candidates")
                return progress
            other = 1 - slot
            # every unknown member is encoded, so the size is pinned once the other slot is explained
            pinned = node.non_encoded == 0 and residuals[other] == 0
            upper = unknown - digit_sums[other]
            sizes = (upper, upper) if pinned else (1, upper)
            max_moves = max(slack, 0) // (self.plan.b - 1)
            exact_moves = max_moves <= constants.MAX_CARRY_MOVES
            outcome = self._certify(residual, candidates[slot], sizes, min(max_moves, constants.MAX_CARRY_MOVES),
                                    exact_moves, budget)
            if len(outcome.solutions) >= 2:
                state.ambiguous.add(k)
                continue
            if not outcome.solutions:
                if outcome.complete:
                    self._contradiction(node_id, feature, k, f"no subset of slot {slot} candidates matches")
                    return progress
                continue
            # a bounded search may miss solutions with more carries, but any match it finds must
            # agree on every random window, so a single match is taken as the bin's members
            solution = outcome.solutions[0]
            for i in solution:
                state.assign(i, k)
            rest = [i for i in candidates[slot] if i not in solution]
            if rest:
                state.excluded[rest, k] = True
            state.ambiguous.discard(k)
            progress = True
        return progress

    def _contradiction(self, node_id: int, feature: int, k: int, reason: str) -> None:
        logger.warning(f"Node {self.nodes[node_id].view.node_id} feature {feature} bin {k}: {reason}")
        self.states[feature].contradictions.add(k)
        self.done.add((node_id, feature, k))

    def _explained(self, node_id: int, feature: int, k: int) -> bool:
        node = self.nodes[node_id]
        state = self.states[feature]
        histogram = next(h for h in node.view.histograms if h.feature == feature)
        return (self._residual(state, node.slot_members[0], k, histogram.g_low[k]) == 0
                and self._residual(state, node.slot_members[1], k, histogram.h_low[k]) == 0)

    def run(self) -> Dict[int, RecoveredBins]:
        tier = 0
        passes = 0
        while tier < len(BUDGET_TIERS):
            progress = False
            for node_id, node in enumerate(self.nodes):
                for histogram in node.view.histograms:
                    j = histogram.feature
                    for k in range(len(histogram.counts)):
                        if (node_id, j, k) in self.done:
                            continue
                        if self._explained(node_id, j, k):
                            open_members = [m[self.states[j].bins[m] < 0] for m in node.slot_members]
                            for members in open_members:
                                self.states[j].excluded[members, k] = True
                            self.done.add((node_id, j, k))
                            progress = True
                            continue
                        progress = self._solve_item(node_id, j, k, BUDGET_TIERS[tier]) or progress
            for state in self.states.values():
                progress = state.propagate() > 0 or progress
            passes += 1
            tier = 0 if progress else tier + 1
        logger.debug(f"Reverse sum solver finished after {passes} passes")
        return self._result()

    def _result(self) -> Dict[int, RecoveredBins]:
        recovered = {}
        for j, state in self.states.items():
            members = {k: set(int(i) for i in np.flatnonzero(state.bins == k)) for k in range(state.bin_count)}
            status = {}
            for k in range(state.bin_count):
                if k in state.contradictions:
                    status[k] = STATUS_UNRECOVERABLE
                elif self.nodes and self._explained(0, j, k):
                    status[k] = STATUS_CONFIDENT
                elif k in state.ambiguous:
                    status[k] = STATUS_AMBIGUOUS
                else:
                    status[k] = STATUS_UNRECOVERABLE
            recovered[j] = RecoveredBins(feature=j, bin_count=state.bin_count, members=members, status=status)
        return recovered


def reverse_sums(views: Sequence[NodeView], plan: EncodingPlan,
                 magics: Mapping[int, MagicNumber]) -> Dict[int, RecoveredBins]:
    """
    Recovers which encoded samples sit in which bin of every passive-party feature from the
    low regions of the decrypted histograms of one tree. Bins are solved jointly: a sample has
    one bin per feature, so every solved or empty bin narrows the others and deeper nodes
    split the candidate sets of the root.
    :param views: the active party's node views of the encoded tree, root first
    :param magics: the magic number of every encoded sample
    """
    if not views:
        return {}
    with Timer(logger, f"Reverse sum over {len(views)} node(s)"):
        recovered = _Reverser(views, plan, magics).run()
    for j, bins in recovered.items():
        counts = defaultdict(int)
        for s in bins.status.values():
            counts[s] += 1
        logger.info(f"Feature {j}: {sum(len(m) for m in bins.members.values())} samples placed, bins {dict(counts)}")
    return recovered


@dataclass
class PartialOrder:
    feature: int
    mapping: Dict[int, int]
    coverage: Set[int]


@dataclass
class FeatureSuccess:
    feature: int
    encoded: int
    recovered: int
    cracked: int

    @property
    def success_rate(self) -> float:
        return self.cracked / self.encoded if self.encoded else 0.0


@dataclass
class SuccessReport:
    features: List[FeatureSuccess]

    @property
    def success_rate(self) -> float:
        encoded = sum(f.encoded for f in self.features)
        return sum(f.cracked for f in self.features) / encoded if encoded else 0.0

    @property
    def cracked(self) -> int:
        return sum(f.cracked for f in self.features)

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{"feature": f.feature, "encoded": f.encoded, "recovered": f.recovered, "cracked": f.cracked,
                 "success_rate": f.success_rate} for f in self.features]

    def to_json(self) -> Dict[str, Any]:
        return {"schema_version": constants.SCHEMA_VERSION, "success_rate": self.success_rate,
                "cracked": self.cracked, "features": self.to_rows()}


def assemble_partial_orders(recovered: Mapping[int, RecoveredBins], plan: EncodingPlan,
                            true_bins: Optional[Mapping[int, np.ndarray]] = None
                            ) -> Tuple[Dict[int, PartialOrder], SuccessReport]:
    """
    :param true_bins: ground-truth assignment per feature, used only for the metric
    """
    orders = {}
    rows = []
    coverage = set(range(plan.encoded))
    for j, bins in sorted(recovered.items()):
        mapping = {i: k for k, samples in bins.members.items() for i in samples}
        orders[j] = PartialOrder(feature=j, mapping=mapping, coverage=coverage)
        cracked = 0
        if true_bins is not None:
            truth = true_bins[j]
            cracked = sum(1 for i, k in mapping.items() if truth[i] == k)
        rows.append(FeatureSuccess(feature=j, encoded=plan.encoded, recovered=len(mapping), cracked=cracked))
    return orders, SuccessReport(features=rows)


@dataclass
class BinBounds:
    feature: int
    lo: np.ndarray
    hi: np.ndarray
    support: np.ndarray

    @property
    def inferred(self) -> np.ndarray:
        return self.support > 0

    @property
    def inferred_fraction(self) -> float:
        return float(self.inferred.mean()) if self.support.size else 0.0

    @property
    def complete(self) -> bool:
        return bool(self.inferred.all())

    def midpoints(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{"feature": self.feature, "bin": k, "lo": self.lo[k], "hi": self.hi[k], "support": int(self.support[k])}
                for k in range(len(self.support))]


def infer_bin_bounds(partial_order: PartialOrder, aux: Sequence[int], column: np.ndarray,
                     bin_count: int) -> BinBounds:
    """
    Bin intervals estimated from auxiliary samples whose raw value of the feature is known.
    :param aux: sample ids of the auxiliary set
    :param column: the feature's raw values, read only at aux
    """
    lo = np.full(bin_count, np.nan)
    hi = np.full(bin_count, np.nan)
    support = np.zeros(bin_count, dtype=np.int64)
    for i in aux:
        k = partial_order.mapping.get(int(i))
        if k is None:
            continue
        value = float(column[i])
        lo[k] = value if support[k] == 0 else min(lo[k], value)
        hi[k] = value if support[k] == 0 else max(hi[k], value)
        support[k] += 1
    return BinBounds(feature=partial_order.feature, lo=lo, hi=hi, support=support)


def bin_mapping_fraction(bounds: Mapping[int, BinBounds]) -> Dict[int, float]:
    return {j: b.inferred_fraction for j, b in bounds.items()}


def sample_aux(n: int, size: int, seed: int) -> np.ndarray:
    size = min(max(size, 0), n)
    return np.sort(numpy_rng(seed, "aux").choice(n, size=size, replace=False))


@dataclass
class AlternativeReport:
    original_accuracy: float
    alternative_accuracy: float
    prediction_agreement: float
    identical_structure: bool
    used_features: List[int]
    excluded_features: List[int]
    fallback_samples: int = 0

    def to_row(self) -> Dict[str, Any]:
        return {"original_accuracy": self.original_accuracy, "alternative_accuracy": self.alternative_accuracy,
                "prediction_agreement": self.prediction_agreement, "identical_structure": self.identical_structure,
                "used_features": len(self.used_features), "excluded_features": len(self.excluded_features),
                "fallback_samples": self.fallback_samples}


def _representatives(train_B: np.ndarray, test_B: np.ndarray, orders: Mapping[int, PartialOrder],
                     bounds: Mapping[int, BinBounds], features: List[int]) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    :return: (train representatives, test representatives, number of training samples placed in the
             middle bin of some feature because the leaked mapping does not cover them)
    """
    if not features:
        return np.zeros((train_B.shape[0], 1)), np.zeros((test_B.shape[0], 1)), 0
    fallback = np.zeros(train_B.shape[0], dtype=bool)
    train_alt = np.empty((train_B.shape[0], len(features)))
    test_alt = np.empty((test_B.shape[0], len(features)))
    for c, j in enumerate(features):
        middle = bounds[j].midpoints()
        bin_count = len(middle)
        missing = np.array([i not in orders[j].mapping for i in range(train_B.shape[0])], dtype=bool)
        if missing.any():
            logger.warning(f"Feature {j}: {int(missing.sum())} training sample(s) missing from the leaked mapping "
                           f"are placed in the middle bin")
        fallback |= missing
        train_bins = np.array([orders[j].mapping.get(i, bin_count // 2) for i in range(train_B.shape[0])])
        train_alt[:, c] = middle[train_bins]
        # test samples are routed through the inferred upper bounds
        test_alt[:, c] = middle[np.searchsorted(bounds[j].hi[:-1], test_B[:, j], side="left")]
    return train_alt, test_alt, int(fallback.sum())


def evaluate_alternative(train: VerticalDataset, test: VerticalDataset, orders: Mapping[int, PartialOrder],
                         bounds: Mapping[int, BinBounds], config: BoostConfig) -> AlternativeReport:
    """
    Trains a model on A's raw features plus B's leaked bin representatives (bin midpoints) and
    compares it with the model trained on B's raw features.
    """
    used = [j for j in range(train.d_B) if j in bounds and j in orders and bounds[j].complete]
    excluded = [j for j in range(train.d_B) if j not in used]
    if excluded:
        logger.warning(f"Alternative model excludes passive features without full bin bounds: {excluded}")
    with Timer(logger, "Alternative classifier"):
        original = secureboost_protocol.train_reference(train, config)
        train_alt, test_alt, fallback = _representatives(train.X_B, test.X_B, orders, bounds, used)
        alternative = secureboost_protocol.train_reference(train.replace_B(train_alt, [f"bin:{j}" for j in used]),
                                                           config)
    original_pred = secureboost_protocol.predict_label(
        original, secureboost_protocol.predict(original, test.X_A, test.X_B))
    alternative_pred = secureboost_protocol.predict_label(
        alternative, secureboost_protocol.predict(alternative, test.X_A, test_alt))
    report = AlternativeReport(
        original_accuracy=float(np.mean(original_pred == test.Y)),
        alternative_accuracy=float(np.mean(alternative_pred == test.Y)),
        prediction_agreement=float(np.mean(original_pred == alternative_pred)),
        identical_structure=used == list(range(train.d_B)) and original.structure() == alternative.structure(),
        used_features=used, excluded_features=excluded, fallback_samples=fallback)
    logger.info(f"Alternative classifier accuracy {report.alternative_accuracy:.4f} vs original "
                f"{report.original_accuracy:.4f} ({len(used)} leaked feature(s))")
    return report


@dataclass(frozen=True)
class RevsumConfig:
    supergroups: int = constants.DEFAULT_SUPERGROUPS
    base: int = constants.DEFAULT_BASE
    group_capacity: str = "b"
    target_tree: int = 0
    seed: int = 0
    layout: MagicLayout = MagicLayout()


@dataclass
class RevsumResult:
    plan: EncodingPlan
    model: TreeModel
    transcript: BoostTranscript
    magics: Dict[int, MagicNumber]
    recovered: Dict[int, RecoveredBins]
    orders: Dict[int, PartialOrder]
    report: SuccessReport
    true_partitions: List[BinPartition] = field(repr=False)

    def to_json(self) -> Dict[str, Any]:
        record = self.report.to_json()
        record["plan"] = self.plan.to_json()
        record["bins"] = {str(j): {str(k): s for k, s in r.status.items()} for j, r in self.recovered.items()}
        return record


def run_revsum_attack(dataset: VerticalDataset, config: BoostConfig, attack: RevsumConfig,
                      keypair: Optional[Keypair] = None) -> RevsumResult:
    """
    Trains SecureBoost with magic-number encoded gradients and reverses the histogram sums of the target tree.
    """
    if attack.target_tree >= config.trees:
        raise ConfigError(f"target tree {attack.target_tree} but only {config.trees} tree(s) are trained")
    plan = plan_encoding(dataset.n, attack.supergroups, attack.base, attack.layout, attack.group_capacity)
    encoder = MagicEncoder(plan, attack.seed, attack.target_tree)
    model, transcript = secureboost_protocol.train_ensemble(dataset, config, keypair=keypair, gradient_encoder=encoder)
    magics = encoder.encoded.magics
    recovered = reverse_sums(transcript.nodes(attack.target_tree), plan, magics)
    partitions = model.passive_lookup.partitions
    orders, report = assemble_partial_orders(recovered, plan, {p.feature: p.assignment for p in partitions})
    logger.info(f"Reverse sum k={plan.k} b={plan.b}: {plan.encoded} samples encoded, {report.cracked} partial order "
                f"entries cracked over {len(report.features)} feature(s), success rate {report.success_rate:.4f}")
    return RevsumResult(plan=plan, model=model, transcript=transcript, magics=magics, recovered=recovered,
                        orders=orders, report=report, true_partitions=partitions)
