#  SPDX-License-Identifier: Apache-2.0
import json
import logging
import math
import random
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import Iterator
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from aria.ops.timer import Timer
from phe import paillier

import constants
import he_core
from errors import CodecOverflowError
from errors import ConfigError
from errors import ProtocolAbortError
from he_core import Ciphertext
from he_core import Keypair
from seeding import derive_seed
from seeding import numpy_rng
from vertical_data import VerticalDataset

logger = logging.getLogger(__name__)

ROLE_ACTIVE = "A"
ROLE_PASSIVE = "B"
ROLE_COORDINATOR = "C"


@dataclass(frozen=True)
class LogregConfig:
    epochs: int = constants.DEFAULT_EPOCHS
    batch_size: int = constants.DEFAULT_BATCH_SIZE
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    seed: int = 0
    key_bits: int = constants.DEFAULT_KEY_BITS
    coordinator_updates: bool = False
    init: str = "zeros"
    reshuffle_batches: bool = False

    def validate(self, n: int) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.batch_size > n:
            raise ConfigError(f"batch_size must be in [1, {n}], got {self.batch_size}")
        if self.init not in ("zeros", "random"):
            raise ConfigError(f"init must be 'zeros' or 'random', got '{self.init}'")


@dataclass
class PartyState:
    """
    One protocol participant.

    :param role: A (active, holds labels), B (passive) or C (coordinator, holds the keypair)
    :param theta: the party's coefficient block; the coordinator keeps copies only when it applies updates
    :param seed: seed of the party's nonce stream
    :param public_key: shared Paillier public key
    :param keypair: only the coordinator holds the secret key
    :param X: the party's feature block
    :param labels: A's labels in the {-1, +1} form used by the Taylor gradient
    """
    role: str
    theta: Optional[np.ndarray]
    seed: int
    learning_rate: float
    batch_size: int
    public_key: paillier.PaillierPublicKey
    keypair: Optional[Keypair] = None
    X: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    theta_copies: Dict[str, np.ndarray] = field(default_factory=dict)
    nonces: random.Random = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.role == ROLE_COORDINATOR and self.keypair is None:
            raise ConfigError("the coordinator must hold the keypair")
        if self.role != ROLE_COORDINATOR and self.keypair is not None:
            raise ConfigError(f"party {self.role} must only hold the public key")
        if self.theta is not None and self.X is not None and len(self.theta) != self.X.shape[1]:
            raise ConfigError(f"party {self.role}: |theta|={len(self.theta)} but {self.X.shape[1]} features")
        self.nonces = random.Random(self.seed)


@dataclass
class RoundRecord:
    """
    Everything the parties exchange in one round. grad_A reaches A and grad_B reaches B;
    the coordinator sees both. u_words are A's own plaintexts.
    """
    index: int
    epoch: int
    batch_id: int
    batch: Tuple[int, ...]
    enc_u: List[Ciphertext]
    enc_v: List[Ciphertext]
    enc_grad_A: List[Ciphertext]
    enc_grad_B: List[Ciphertext]
    u_words: List[int]
    grad_A: np.ndarray
    grad_B: np.ndarray
    theta_A_sent: Optional[np.ndarray] = None
    theta_B_sent: Optional[np.ndarray] = None

    def to_json(self) -> Dict[str, Any]:
        record = {
            "index": self.index,
            "epoch": self.epoch,
            "batch_id": self.batch_id,
            "batch": list(self.batch),
            "enc_u": [he_core.ciphertext_to_json(c) for c in self.enc_u],
            "enc_v": [he_core.ciphertext_to_json(c) for c in self.enc_v],
            "enc_grad_A": [he_core.ciphertext_to_json(c) for c in self.enc_grad_A],
            "enc_grad_B": [he_core.ciphertext_to_json(c) for c in self.enc_grad_B],
            "u_words": [format(w, "x") for w in self.u_words],
            "grad_A": [float(g).hex() for g in self.grad_A],
            "grad_B": [float(g).hex() for g in self.grad_B],
        }
        if self.theta_B_sent is not None:
            record["theta_A_sent"] = [float(t).hex() for t in self.theta_A_sent]
            record["theta_B_sent"] = [float(t).hex() for t in self.theta_B_sent]
        return record

    @classmethod
    def from_json(cls, record: Dict[str, Any]) -> "RoundRecord":
        def floats(key):
            return np.array([float.fromhex(v) for v in record[key]]) if key in record else None

        return cls(index=record["index"], epoch=record["epoch"], batch_id=record["batch_id"],
                   batch=tuple(record["batch"]),
                   enc_u=[he_core.ciphertext_from_json(c) for c in record["enc_u"]],
                   enc_v=[he_core.ciphertext_from_json(c) for c in record["enc_v"]],
                   enc_grad_A=[he_core.ciphertext_from_json(c) for c in record["enc_grad_A"]],
                   enc_grad_B=[he_core.ciphertext_from_json(c) for c in record["enc_grad_B"]],
                   u_words=[int(w, 16) for w in record["u_words"]],
                   grad_A=floats("grad_A"), grad_B=floats("grad_B"),
                   theta_A_sent=floats("theta_A_sent"), theta_B_sent=floats("theta_B_sent"))


@dataclass
class OracleSnapshot:
    # ground truth for evaluation only; attack code never reads these
    theta_A_before: np.ndarray
    theta_B_before: np.ndarray
    theta_A_after: np.ndarray
    theta_B_after: np.ndarray


class Transcript:
    def __init__(self, public_key: paillier.PaillierPublicKey, learning_rate: float, batch_size: int,
                 coordinator_updates: bool, d_A: int, d_B: int):
        self.public_key = public_key
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.coordinator_updates = coordinator_updates
        self.d_A = d_A
        self.d_B = d_B
        self.rounds: List[RoundRecord] = []
        self.oracle: List[OracleSnapshot] = []

    def __len__(self) -> int:
        return len(self.rounds)

    def append(self, record: RoundRecord, snapshot: Optional[OracleSnapshot] = None) -> None:
        if self.rounds and record.index <= self.rounds[-1].index:
            raise ValueError(f"round index {record.index} does not follow {self.rounds[-1].index}")
        self.rounds.append(record)
        if snapshot is not None:
            self.oracle.append(snapshot)

    def batches(self) -> Dict[Tuple[int, ...], List[RoundRecord]]:
        grouped: Dict[Tuple[int, ...], List[RoundRecord]] = {}
        for record in self.rounds:
            grouped.setdefault(record.batch, []).append(record)
        return grouped

    def header(self) -> Dict[str, Any]:
        return {
            "public_key": he_core.public_key_to_json(self.public_key),
            "learning_rate": float(self.learning_rate).hex(),
            "batch_size": self.batch_size,
            "coordinator_updates": self.coordinator_updates,
            "d_A": self.d_A,
            "d_B": self.d_B,
            "rounds": len(self.rounds),
        }

    def save_jsonl(self, path: str, include_oracle: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as out:
            out.write(json.dumps({"header": self.header()}, sort_keys=True) + "\n")
            for i, record in enumerate(self.rounds):
                line = record.to_json()
                if include_oracle and i < len(self.oracle):
                    snapshot = self.oracle[i]
                    line["oracle"] = {k: [float(t).hex() for t in getattr(snapshot, k)]
                                      for k in ("theta_A_before", "theta_B_before", "theta_A_after",
                                                "theta_B_after")}
                out.write(json.dumps(line, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: str) -> "Transcript":
        with open(path, "r", encoding="utf-8") as src:
            lines = [json.loads(line) for line in src if line.strip()]
        header = lines[0]["header"]
        public_key = paillier.PaillierPublicKey(int(header["public_key"]["n"], 16))
        transcript = cls(public_key=public_key, learning_rate=float.fromhex(header["learning_rate"]),
                         batch_size=header["batch_size"], coordinator_updates=header["coordinator_updates"],
                         d_A=header["d_A"], d_B=header["d_B"])
        for line in lines[1:]:
            snapshot = None
            if "oracle" in line:
                snapshot = OracleSnapshot(**{k: np.array([float.fromhex(v) for v in vs])
                                             for k, vs in line["oracle"].items()})
            transcript.append(RoundRecord.from_json(line), snapshot)
        return transcript


def signed_labels(Y: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(Y, dtype=float) - 1.0


def plaintext_gradient(theta_A: np.ndarray, theta_B: np.ndarray, X_A: np.ndarray, X_B: np.ndarray,
                       Y: np.ndarray, S: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Taylor-approximated logistic gradient on batch S, split into the two parties' blocks.
    :param Y: labels as they enter the residual (the protocol passes the {-1, +1} form)
    """
    idx = np.asarray(S, dtype=int)
    if idx.size == 0:
        raise ValueError("batch must not be empty")
    residual = 0.25 * X_A[idx] @ theta_A + 0.25 * X_B[idx] @ theta_B - 0.5 * Y[idx]
    return X_A[idx].T @ residual / idx.size, X_B[idx].T @ residual / idx.size


def batch_schedule(n: int, batch_size: int, epochs: int, seed: int,
                   reshuffle_batches: bool = False) -> Iterator[Tuple[int, int, np.ndarray]]:
    """
    Yields (epoch, batch_id, indices). Batch composition comes from one seeded permutation
    and the visiting order is reshuffled every epoch, so each batch recurs once per epoch.
    """
    rng = numpy_rng(seed, "batches")
    per_epoch = math.ceil(n / batch_size)
    permutation = rng.permutation(n)
    for epoch in range(epochs):
        if reshuffle_batches and epoch > 0:
            permutation = rng.permutation(n)
        batches = [np.sort(permutation[i:i + batch_size]) for i in range(0, n, batch_size)]
        for b in rng.permutation(per_epoch):
            batch_id = int(b) + (epoch * per_epoch if reshuffle_batches else 0)
            yield epoch, batch_id, batches[b]


def initial_theta(d: int, config: LogregConfig, role: str) -> np.ndarray:
    if config.init == "random":
        return numpy_rng(config.seed, "init", role).normal(0.0, constants.RANDOM_INIT_SCALE, size=d)
    return np.zeros(d)


def _encode_block(public_key, values: np.ndarray, step: str) -> List[he_core.PlaintextWord]:
    try:
        return [he_core.encode_signed(public_key, float(x)) for x in values]
    except CodecOverflowError as e:
        raise ProtocolAbortError(step, e)


def _encrypted_products(public_key, enc_v: List[Ciphertext], X_S: np.ndarray, step: str) -> List[Ciphertext]:
    products = []
    for j in range(X_S.shape[1]):
        column = _encode_block(public_key, X_S[:, j], step)
        products.append(he_core.dot_plain(public_key, enc_v, column))
    return products


def _decode_gradient(state_C: PartyState, enc_grad: List[Ciphertext], batch_len: int, step: str) -> np.ndarray:
    public_key = state_C.public_key
    secret_key = state_C.keypair.secret_key
    grad = np.empty(len(enc_grad))
    for j, c in enumerate(enc_grad):
        word = he_core.decrypt(secret_key, c)
        residue = he_core.signed_residue(public_key, word)
        if abs(residue) >= 1 << (2 * constants.SIGNED_VALUE_BITS):
            raise ProtocolAbortError(step, CodecOverflowError(f"gradient component {j} left the product window"))
        grad[j] = he_core.decode_signed(public_key, word, scale_exponent=2) / batch_len
    return grad


def run_round(state_A: PartyState, state_B: PartyState, state_C: PartyState, S: Sequence[int],
              transcript: Transcript, epoch: int = 0, batch_id: int = 0) -> Tuple[PartyState, PartyState, PartyState]:
    """
    One round of the coordinator-assisted protocol on batch S; appends all messages to the transcript.
    """
    public_key = state_C.public_key
    idx = np.asarray(S, dtype=int)
    X_SA = state_A.X[idx]
    X_SB = state_B.X[idx]
    theta_A_before = state_A.theta.copy()
    theta_B_before = state_B.theta.copy()

    # A: [[u]] = [[1/4 theta_A x_A - 1/2 y]]
    u = 0.25 * X_SA @ state_A.theta - 0.5 * state_A.labels[idx]
    u_words = _encode_block(public_key, u, "A encodes u")
    enc_u = [he_core.encrypt(public_key, w, state_A.nonces) for w in u_words]

    # B: [[v]] = [[1/4 theta_B x_B]] + [[u]], then [[v]] X_S^B
    w_B = _encode_block(public_key, 0.25 * X_SB @ state_B.theta, "B encodes theta_B x_B")
    enc_v = [he_core.add_cipher(public_key, he_core.encrypt(public_key, w, state_B.nonces), cu)
             for w, cu in zip(w_B, enc_u)]
    enc_grad_B = _encrypted_products(public_key, enc_v, X_SB, "B multiplies [[v]] by X_S^B")

    # A: [[v]] X_S^A
    enc_grad_A = _encrypted_products(public_key, enc_v, X_SA, "A multiplies [[v]] by X_S^A")

    # C: decrypt, average, decode at product scale
    grad_A = _decode_gradient(state_C, enc_grad_A, idx.size, "C decrypts g^A")
    grad_B = _decode_gradient(state_C, enc_grad_B, idx.size, "C decrypts g^B")

    theta_A_sent = theta_B_sent = None
    if state_C.theta_copies:
        state_C.theta_copies[ROLE_ACTIVE] = state_C.theta_copies[ROLE_ACTIVE] - state_C.learning_rate * grad_A
        state_C.theta_copies[ROLE_PASSIVE] = state_C.theta_copies[ROLE_PASSIVE] - state_C.learning_rate * grad_B
        theta_A_sent = state_C.theta_copies[ROLE_ACTIVE].copy()
        theta_B_sent = state_C.theta_copies[ROLE_PASSIVE].copy()
        state_A.theta = theta_A_sent.copy()
        state_B.theta = theta_B_sent.copy()
    else:
        state_A.theta = state_A.theta - state_A.learning_rate * grad_A
        state_B.theta = state_B.theta - state_B.learning_rate * grad_B

    record = RoundRecord(index=len(transcript), epoch=epoch, batch_id=batch_id, batch=tuple(int(i) for i in idx),
                         enc_u=enc_u, enc_v=enc_v, enc_grad_A=enc_grad_A, enc_grad_B=enc_grad_B,
                         u_words=[w.raw for w in u_words], grad_A=grad_A, grad_B=grad_B,
                         theta_A_sent=theta_A_sent, theta_B_sent=theta_B_sent)
    transcript.append(record, OracleSnapshot(theta_A_before=theta_A_before, theta_B_before=theta_B_before,
                                             theta_A_after=state_A.theta.copy(), theta_B_after=state_B.theta.copy()))
    logger.debug(f"Round {record.index} (epoch {epoch}, batch {batch_id}, |S|={idx.size}) "
                 f"|g^A|={np.linalg.norm(grad_A):.3e} |g^B|={np.linalg.norm(grad_B):.3e}")
    return state_A, state_B, state_C


def setup_parties(dataset: VerticalDataset, config: LogregConfig,
                  keypair: Keypair) -> Tuple[PartyState, PartyState, PartyState]:
    public_key = keypair.public_key
    state_A = PartyState(role=ROLE_ACTIVE, theta=initial_theta(dataset.d_A, config, ROLE_ACTIVE),
                         seed=derive_seed(config.seed, "nonces", ROLE_ACTIVE), learning_rate=config.learning_rate,
                         batch_size=config.batch_size, public_key=public_key, X=dataset.X_A,
                         labels=signed_labels(dataset.Y))
    state_B = PartyState(role=ROLE_PASSIVE, theta=initial_theta(dataset.d_B, config, ROLE_PASSIVE),
                         seed=derive_seed(config.seed, "nonces", ROLE_PASSIVE), learning_rate=config.learning_rate,
                         batch_size=config.batch_size, public_key=public_key, X=dataset.X_B)
    state_C = PartyState(role=ROLE_COORDINATOR, theta=None, seed=derive_seed(config.seed, "nonces", ROLE_COORDINATOR),
                         learning_rate=config.learning_rate, batch_size=config.batch_size, public_key=public_key,
                         keypair=keypair)
    if config.coordinator_updates:
        state_C.theta_copies = {ROLE_ACTIVE: state_A.theta.copy(), ROLE_PASSIVE: state_B.theta.copy()}
    return state_A, state_B, state_C


def train(dataset: VerticalDataset, config: LogregConfig,
          keypair: Optional[Keypair] = None) -> Tuple[np.ndarray, np.ndarray, Transcript]:
    """
    Trains with the encrypted protocol.
    :param keypair: reuse an existing coordinator keypair; generated from the config seed when omitted
    :return: (theta_A, theta_B, transcript)
    """
    config.validate(dataset.n)
    if keypair is None:
        keypair = he_core.keygen(config.key_bits, derive_seed(config.seed, "coordinator", "keygen"))
    state_A, state_B, state_C = setup_parties(dataset, config, keypair)
    transcript = Transcript(public_key=keypair.public_key, learning_rate=config.learning_rate,
                            batch_size=config.batch_size, coordinator_updates=config.coordinator_updates,
                            d_A=dataset.d_A, d_B=dataset.d_B)
    with Timer(logger, f"Logistic regression training ({config.epochs} epochs, batch {config.batch_size})"):
        for epoch, batch_id, S in batch_schedule(dataset.n, config.batch_size, config.epochs, config.seed,
                                                 config.reshuffle_batches):
            run_round(state_A, state_B, state_C, S, transcript, epoch=epoch, batch_id=batch_id)
    logger.info(f"Trained logistic regression over {len(transcript)} rounds; "
                f"training accuracy {accuracy(state_A.theta, state_B.theta, dataset):.4f}")
    return state_A.theta, state_B.theta, transcript


def plaintext_sgd(dataset: VerticalDataset, config: LogregConfig) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Encryption-free SGD over the same batch schedule; returns (theta_A, theta_B) after every round.
    """
    config.validate(dataset.n)
    theta_A = initial_theta(dataset.d_A, config, ROLE_ACTIVE)
    theta_B = initial_theta(dataset.d_B, config, ROLE_PASSIVE)
    labels = signed_labels(dataset.Y)
    trajectory = []
    for _, _, S in batch_schedule(dataset.n, config.batch_size, config.epochs, config.seed, config.reshuffle_batches):
        grad_A, grad_B = plaintext_gradient(theta_A, theta_B, dataset.X_A, dataset.X_B, labels, S)
        theta_A = theta_A - config.learning_rate * grad_A
        theta_B = theta_B - config.learning_rate * grad_B
        trajectory.append((theta_A.copy(), theta_B.copy()))
    return trajectory


def predict(theta_A: np.ndarray, theta_B: np.ndarray, x_A: np.ndarray, x_B: np.ndarray) -> np.ndarray:
    x_A = np.asarray(x_A, dtype=float)
    x_B = np.asarray(x_B, dtype=float)
    if x_A.shape[-1] != len(theta_A) or x_B.shape[-1] != len(theta_B):
        raise ValueError(f"dimension mismatch: x_A {x_A.shape} vs {len(theta_A)}, x_B {x_B.shape} vs {len(theta_B)}")
    return x_A @ theta_A + x_B @ theta_B


def predict_label(score: np.ndarray, threshold: float = constants.PREDICT_THRESHOLD) -> np.ndarray:
    return (0.25 * np.asarray(score) + 0.5 >= threshold).astype(float)


def accuracy(theta_A: np.ndarray, theta_B: np.ndarray, dataset: VerticalDataset) -> float:
    labels = predict_label(predict(theta_A, theta_B, dataset.X_A, dataset.X_B))
    return float(np.mean(labels == dataset.Y))
