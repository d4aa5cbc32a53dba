#  SPDX-License-Identifier: Apache-2.0
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from aria.ops.timer import Timer

import constants
import he_core
from errors import ConfigError
from errors import CorruptionRequiredError
from errors import PlanError
from he_core import Keypair
from he_core import PlaintextWord
from he_core import SecretKey
from logreg_protocol import ROLE_ACTIVE
from logreg_protocol import Transcript

logger = logging.getLogger(__name__)


@dataclass
class CorruptionView:
    """
    What the adversary (active party A) can use: the transcript and, when the
    coordinator is corrupted, its secret key.
    """
    transcript: Transcript
    coordinator_secret_key: Optional[SecretKey] = None
    role: str = ROLE_ACTIVE

    @property
    def corrupted(self) -> bool:
        return self.coordinator_secret_key is not None

    @classmethod
    def from_run(cls, transcript: Transcript, keypair: Keypair, corrupt_coordinator: bool = True) -> "CorruptionView":
        return cls(transcript=transcript, coordinator_secret_key=keypair.secret_key if corrupt_coordinator else None)


@dataclass
class ProductRound:
    round_index: int
    values: np.ndarray


@dataclass
class LinearSystem:
    batch: Tuple[int, ...]
    M: np.ndarray
    R: np.ndarray
    rank_tolerance: float = constants.RANK_TOLERANCE
    round_pairs: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def rows(self) -> int:
        return self.M.shape[0]


@dataclass
class BatchRecovery:
    batch: Tuple[int, ...]
    rank: int
    d_B: int
    rows: int
    X_hat: np.ndarray
    residual: float
    condition: float
    max_error: Optional[float] = None

    @property
    def leakage_fraction(self) -> float:
        return self.rank / self.d_B

    def to_json(self) -> Dict[str, Any]:
        return {
            "batch_size": len(self.batch),
            "first_sample": int(self.batch[0]),
            "rank": self.rank,
            "rows": self.rows,
            "leakage_fraction": self.leakage_fraction,
            "residual": self.residual,
            "condition": self.condition,
            "max_error": self.max_error,
        }


@dataclass
class LeakageReport:
    d_B: int
    batches: List[BatchRecovery]
    X_hat: np.ndarray
    skipped_batches: int = 0

    @property
    def rank(self) -> int:
        return min((b.rank for b in self.batches), default=0)

    @property
    def leakage_fraction(self) -> float:
        samples = sum(len(b.batch) for b in self.batches) + 0.0
        if samples == 0:
            return 0.0
        return sum(b.leakage_fraction * len(b.batch) for b in self.batches) / samples

    @property
    def recovered_samples(self) -> int:
        return sum(len(b.batch) for b in self.batches if b.rank == self.d_B)

    @property
    def max_error(self) -> Optional[float]:
        errors = [b.max_error for b in self.batches if b.max_error is not None and b.rank == self.d_B]
        return max(errors) if errors else None

    def to_json(self) -> Dict[str, Any]:
        return {
            "schema_version": constants.SCHEMA_VERSION,
            "d_B": self.d_B,
            "rank": self.rank,
            "leakage_fraction": self.leakage_fraction,
            "recovered_samples": self.recovered_samples,
            "max_error": self.max_error,
            "skipped_batches": self.skipped_batches,
            "batches": [b.to_json() for b in self.batches],
        }

    def to_row(self) -> Dict[str, Any]:
        return {
            "rank": self.rank,
            "d_B": self.d_B,
            "leakage_fraction": self.leakage_fraction,
            "recovered_samples": self.recovered_samples,
            "max_error": self.max_error,
        }


def extract_products(view: CorruptionView, S: Sequence[int]) -> List[ProductRound]:
    """
    Decrypts [[v]] for every round on batch S and removes A's own u, leaving 1/4 theta_B x_i^B.
    """
    if not view.corrupted:
        raise CorruptionRequiredError("decrypting [[v]] needs the corrupted coordinator's secret key")
    transcript = view.transcript
    public_key = transcript.public_key
    n = public_key.n
    limit = 1 << constants.SIGNED_VALUE_BITS
    products = []
    for record in transcript.batches().get(tuple(int(i) for i in S), []):
        values = np.empty(len(record.batch))
        overflow = False
        for i, (enc_v, u_raw) in enumerate(zip(record.enc_v, record.u_words)):
            v_word = he_core.decrypt(view.coordinator_secret_key, enc_v)
            w_word = PlaintextWord((v_word.raw - u_raw) % n)
            if abs(he_core.signed_residue(public_key, w_word)) >= limit:
                overflow = True
                break
            values[i] = he_core.decode_signed(public_key, w_word)
        if overflow:
            logger.warning(f"Round {record.index}: decoded product overflows the signed codec, round skipped")
            continue
        products.append(ProductRound(round_index=record.index, values=values))
    return products


def build_system(view: CorruptionView, S: Sequence[int],
                 rank_tolerance: float = constants.RANK_TOLERANCE) -> LinearSystem:
    """
    Assembles M X = R for batch S. Between two visits t < t' of the batch the coefficients move by
    -eta times the sum of every g^B in between, so that sum is the row and
    (v_t' - v_t) * (-4 / eta) the right-hand side. With coordinator updates the received
    1/4 theta_B is the row and the product itself the right-hand side.
    """
    batch = tuple(int(i) for i in S)
    transcript = view.transcript
    products = extract_products(view, batch)
    d_B = transcript.d_B
    rows: List[np.ndarray] = []
    rhs: List[np.ndarray] = []
    pairs: List[Tuple[int, int]] = []

    if transcript.coordinator_updates:
        for product in products:
            if product.round_index == 0:
                continue
            theta_B = transcript.rounds[product.round_index - 1].theta_B_sent
            rows.append(0.25 * theta_B)
            rhs.append(product.values)
            pairs.append((product.round_index - 1, product.round_index))
        if not rows:
            raise PlanError(f"batch starting at sample {batch[0]} has no round with a known coefficient")
    else:
        if len(products) < 2:
            raise PlanError(f"batch starting at sample {batch[0]} was visited {len(products)} time(s), need 2")
        grad_B = np.array([record.grad_B for record in transcript.rounds])
        cumulative = np.vstack([np.zeros(d_B), np.cumsum(grad_B, axis=0)])
        scale = -4.0 / transcript.learning_rate
        for earlier, later in zip(products, products[1:]):
            rows.append(cumulative[later.round_index] - cumulative[earlier.round_index])
            rhs.append((later.values - earlier.values) * scale)
            pairs.append((earlier.round_index, later.round_index))

    return LinearSystem(batch=batch, M=np.array(rows), R=np.array(rhs), rank_tolerance=rank_tolerance,
                        round_pairs=pairs)


def numerical_rank(M: np.ndarray, rank_tolerance: float = constants.RANK_TOLERANCE) -> int:
    singular = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if singular.size == 0 or singular[0] == 0:
        return 0
    return int(np.sum(singular > rank_tolerance * singular[0]))


def solve_system(system: LinearSystem) -> BatchRecovery:
    """
    Column-wise least squares; a rank-deficient M yields the minimum-norm solution,
    i.e. the projection of the samples onto M's row space.
    """
    M = system.M
    singular = np.linalg.svd(M, compute_uv=False)
    rank = numerical_rank(M, system.rank_tolerance)
    solution, _, _, _ = np.linalg.lstsq(M, system.R, rcond=system.rank_tolerance)
    residual = float(np.max(np.abs(M @ solution - system.R))) if system.R.size else 0.0
    condition = float(singular[0] / singular[rank - 1]) if rank > 0 else float("inf")
    return BatchRecovery(batch=system.batch, rank=rank, d_B=M.shape[1], rows=system.rows, X_hat=solution.T,
                         residual=residual, condition=condition)


def system_consistency(system: LinearSystem, X_B_true: np.ndarray) -> float:
    # max-norm of M X - R for the true samples of the batch
    X_S = X_B_true[list(system.batch)]
    return float(np.max(np.abs(system.M @ X_S.T - system.R)))


def attack(view: CorruptionView, X_B_true: Optional[np.ndarray] = None,
           rank_tolerance: float = constants.RANK_TOLERANCE) -> LeakageReport:
    """
    Runs the reverse multiplication attack over every batch of the transcript.
    :param X_B_true: ground truth, used only to fill in reconstruction errors
    """
    if not view.corrupted:
        raise CorruptionRequiredError("the reverse multiplication attack needs a corrupted coordinator")
    transcript = view.transcript
    if not transcript.rounds:
        raise ConfigError("transcript has no rounds")
    n = 1 + max(max(record.batch) for record in transcript.rounds)
    X_hat = np.full((n, transcript.d_B), np.nan)
    recoveries: List[BatchRecovery] = []
    skipped = 0
    with Timer(logger, f"Reverse multiplication attack over {len(transcript)} rounds"):
        for batch in transcript.batches():
            try:
                system = build_system(view, batch, rank_tolerance)
            except PlanError as e:
                logger.warning(f"Skipping batch: {e}")
                skipped += 1
                continue
            recovery = solve_system(system)
            if X_B_true is not None:
                recovery.max_error = float(np.max(np.abs(recovery.X_hat - X_B_true[list(batch)])))
            X_hat[list(batch)] = recovery.X_hat
            recoveries.append(recovery)
            logger.debug(f"Batch of {len(batch)} samples: rank {recovery.rank}/{recovery.d_B} from "
                         f"{recovery.rows} rows, residual {recovery.residual:.3e}")
    report = LeakageReport(d_B=transcript.d_B, batches=recoveries, X_hat=X_hat, skipped_batches=skipped)
    logger.info(f"Reverse multiplication: rank {report.rank}/{report.d_B}, leakage {report.leakage_fraction:.3f}, "
                f"{report.recovered_samples} samples fully recovered")
    return report
