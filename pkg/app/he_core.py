#  SPDX-License-Identifier: Apache-2.0
import functools
import hashlib
import logging
import math
import random
from dataclasses import dataclass
from typing import Any
from typing import Dict
from typing import Sequence
from typing import Tuple
from typing import Union

from aria.ops.timer import Timer
from phe import paillier
from phe.util import invert
from phe.util import is_prime
from phe.util import mulmod
from phe.util import powmod

import constants
from errors import CodecOverflowError
from errors import ConfigError
from errors import KeyMismatchError

logger = logging.getLogger(__name__)

PublicKey = paillier.PaillierPublicKey
SecretKey = paillier.PaillierPrivateKey
Seed = Union[int, random.Random]


@dataclass(frozen=True)
class CodecParams:
    """
    Fixed-point codec parameters shared by the signed and the layout codec.

    :param frac_bits: fractional bits F
    :param offset_bits: offset added to layout values so that sums stay non-negative
    :param magic_bits: width of the low (padding) region of a layout word
    :param value_bits: bound on |round(x * 2^F)| for the signed codec
    :param max_count: largest number of layout words that may be summed
    """
    frac_bits: int
    offset_bits: int = constants.LAYOUT_OFFSET_BITS
    magic_bits: int = constants.MAGIC_BITS
    value_bits: int = constants.SIGNED_VALUE_BITS
    max_count: int = constants.LAYOUT_MAX_COUNT

    def __post_init__(self) -> None:
        if not 0 < self.frac_bits < 64:
            raise ConfigError(f"frac_bits must be in (0, 64), got {self.frac_bits}")
        if self.max_count < 1:
            raise ConfigError(f"max_count must be positive, got {self.max_count}")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits


SIGNED_CODEC = CodecParams(frac_bits=constants.SIGNED_FRAC_BITS)
LAYOUT_CODEC = CodecParams(frac_bits=constants.LAYOUT_FRAC_BITS, offset_bits=constants.LAYOUT_OFFSET_BITS)


@functools.lru_cache(maxsize=64)
def _key_id(n: int) -> str:
    return hashlib.sha256(format(n, "x").encode("ascii")).hexdigest()[:16]


def key_id_of(public_key: PublicKey) -> str:
    return _key_id(public_key.n)


@dataclass(frozen=True)
class Keypair:
    public_key: PublicKey
    secret_key: SecretKey
    key_bits: int

    @property
    def key_id(self) -> str:
        return key_id_of(self.public_key)


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str


@dataclass(frozen=True)
class PlaintextWord:
    raw: int


def _seeded_prime(rng: random.Random, bits: int) -> int:
    while True:
        # top two bits set so that p * q has exactly 2 * bits bits
        candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        while candidate.bit_length() == bits:
            if is_prime(candidate, mr_rounds=constants.PRIME_MR_ROUNDS):
                return candidate
            candidate += 2


def keygen(key_bits: int = constants.DEFAULT_KEY_BITS, seed: int = 0) -> Keypair:
    """
    Deterministic Paillier key generation (g = n + 1).
    :param key_bits: modulus size, even and at least MIN_KEY_BITS so the 1024-bit layout fits
    :param seed: seed of the prime search
    :return: Keypair
    """
    if key_bits % 2 != 0 or key_bits < constants.MIN_KEY_BITS:
        raise ConfigError(f"key_bits must be even and >= {constants.MIN_KEY_BITS}, got {key_bits}")
    with Timer(logger, f"Paillier keygen ({key_bits} bits)"):
        rng = random.Random(seed)
        half = key_bits // 2
        p = _seeded_prime(rng, half)
        q = p
        while q == p:
            q = _seeded_prime(rng, half)
        public_key = paillier.PaillierPublicKey(p * q)
        secret_key = paillier.PaillierPrivateKey(public_key, p, q)
    logger.debug(f"Generated {key_bits}-bit keypair {key_id_of(public_key)} from seed {seed}")
    return Keypair(public_key=public_key, secret_key=secret_key, key_bits=key_bits)


def _check_key(public_key: PublicKey, *ciphertexts: Ciphertext) -> str:
    key_id = key_id_of(public_key)
    for c in ciphertexts:
        if c.key_id != key_id:
            raise KeyMismatchError(f"ciphertext under key {c.key_id} used with key {key_id}")
    return key_id


def _check_word(public_key: PublicKey, word: PlaintextWord) -> None:
    if not 0 <= word.raw < public_key.n:
        raise CodecOverflowError(f"plaintext word outside [0, n): {word.raw.bit_length()} bits")


def encrypt(public_key: PublicKey, word: PlaintextWord, seed: Seed = 0) -> Ciphertext:
    """
    :param seed: int seed of the nonce, or a party's random.Random to draw it from
    """
    _check_word(public_key, word)
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    nonce = rng.randrange(1, public_key.n)
    value = public_key.raw_encrypt(int(word.raw), r_value=nonce)
    return Ciphertext(value=value, key_id=key_id_of(public_key))


def decrypt(secret_key: SecretKey, ciphertext: Ciphertext) -> PlaintextWord:
    _check_key(secret_key.public_key, ciphertext)
    return PlaintextWord(secret_key.raw_decrypt(ciphertext.value))


def zero_cipher(public_key: PublicKey) -> Ciphertext:
    # Trivial encryption of 0 (nonce 1); neutral element of add_cipher.
    return Ciphertext(value=1, key_id=key_id_of(public_key))


def add_cipher(public_key: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    key_id = _check_key(public_key, a, b)
    return Ciphertext(value=mulmod(a.value, b.value, public_key.nsquare), key_id=key_id)


def mul_plain(public_key: PublicKey, a: Ciphertext, v: PlaintextWord) -> Ciphertext:
    key_id = _check_key(public_key, a)
    _check_word(public_key, v)
    nsquare = public_key.nsquare
    if v.raw > public_key.n // 2:
        # centered negative scalar: invert once, then a short exponent
        value = powmod(invert(a.value, nsquare), public_key.n - v.raw, nsquare)
    else:
        value = powmod(a.value, v.raw, nsquare)
    return Ciphertext(value=value, key_id=key_id)


def sum_ciphers(public_key: PublicKey, ciphertexts: Sequence[Ciphertext]) -> Ciphertext:
    total = zero_cipher(public_key)
    for c in ciphertexts:
        total = add_cipher(public_key, total, c)
    return total


def dot_plain(public_key: PublicKey, ciphertexts: Sequence[Ciphertext], words: Sequence[PlaintextWord]) -> Ciphertext:
    """
    Inner product of a plaintext vector with a ciphertext vector.
    """
    if len(ciphertexts) != len(words):
        raise ValueError(f"length mismatch: {len(ciphertexts)} ciphertexts, {len(words)} words")
    total = zero_cipher(public_key)
    for c, w in zip(ciphertexts, words):
        total = add_cipher(public_key, total, mul_plain(public_key, c, w))
    return total


def _scaled(x: float, frac_bits: int) -> int:
    if not math.isfinite(x):
        raise CodecOverflowError(f"cannot encode non-finite value {x}")
    return int(round(float(x) * (1 << frac_bits)))


def encode_signed(public_key: PublicKey, x: float, params: CodecParams = SIGNED_CODEC) -> PlaintextWord:
    scaled = _scaled(x, params.frac_bits)
    if abs(scaled) >= 1 << params.value_bits or 2 * abs(scaled) >= public_key.n:
        raise CodecOverflowError(f"value {x} overflows the signed codec (F={params.frac_bits})")
    return PlaintextWord(scaled % public_key.n)


def decode_signed(public_key: PublicKey, word: PlaintextWord, params: CodecParams = SIGNED_CODEC,
                  scale_exponent: int = 1) -> float:
    if scale_exponent not in (1, 2):
        raise ValueError(f"scale_exponent must be 1 or 2, got {scale_exponent}")
    return signed_residue(public_key, word) / (1 << (params.frac_bits * scale_exponent))


def signed_residue(public_key: PublicKey, word: PlaintextWord) -> int:
    raw = word.raw
    return raw - public_key.n if raw > public_key.n // 2 else raw


def encode_layout(x: float, magic: int, params: CodecParams = LAYOUT_CODEC) -> PlaintextWord:
    scaled = _scaled(x, params.frac_bits)
    if abs(scaled) >= 1 << params.offset_bits:
        raise CodecOverflowError(f"value {x} overflows the layout value window")
    if not 0 <= magic < 1 << params.magic_bits:
        raise CodecOverflowError(f"magic number wider than {params.magic_bits} bits")
    return PlaintextWord(((scaled + (1 << params.offset_bits)) << params.magic_bits) | magic)


def decode_layout_fixed(word: PlaintextWord, count: int, params: CodecParams = LAYOUT_CODEC) -> Tuple[int, int]:
    """
    Decodes a homomorphic sum of `count` layout words.
    :return: (value sum scaled by 2^F as an exact integer, low region)
    """
    if not 0 <= count <= params.max_count:
        raise CodecOverflowError(f"summand count {count} outside [0, {params.max_count}]")
    low = word.raw & ((1 << params.magic_bits) - 1)
    value = (word.raw >> params.magic_bits) - count * (1 << params.offset_bits)
    return value, low


def decode_layout(word: PlaintextWord, count: int, params: CodecParams = LAYOUT_CODEC) -> Tuple[float, int]:
    value, low = decode_layout_fixed(word, count, params)
    return value / params.scale, low


def check_layout_capacity(public_key: PublicKey, params: CodecParams = LAYOUT_CODEC) -> None:
    needed = params.magic_bits + params.offset_bits + 1 + math.ceil(math.log2(params.max_count)) + 1
    available = public_key.n.bit_length() - 1
    if needed > available:
        raise CodecOverflowError(
            f"layout needs {needed} bits for {params.max_count} summands but the key offers {available}")


def keypair_to_json(keypair: Keypair) -> Dict[str, Any]:
    public_key = keypair.public_key
    secret_key = keypair.secret_key
    return {
        "key_id": keypair.key_id,
        "key_bits": keypair.key_bits,
        "n": format(public_key.n, "x"),
        "g": format(public_key.g, "x"),
        "p": format(secret_key.p, "x"),
        "q": format(secret_key.q, "x"),
    }


def keypair_from_json(record: Dict[str, Any]) -> Keypair:
    public_key = paillier.PaillierPublicKey(int(record["n"], 16))
    secret_key = paillier.PaillierPrivateKey(public_key, int(record["p"], 16), int(record["q"], 16))
    keypair = Keypair(public_key=public_key, secret_key=secret_key, key_bits=int(record["key_bits"]))
    if keypair.key_id != record["key_id"]:
        raise KeyMismatchError(f"stored key_id {record['key_id']} does not match modulus")
    return keypair


def public_key_to_json(public_key: PublicKey) -> Dict[str, str]:
    return {"key_id": key_id_of(public_key), "n": format(public_key.n, "x"), "g": format(public_key.g, "x")}


def ciphertext_to_json(ciphertext: Ciphertext) -> Dict[str, str]:
    return {"c": format(ciphertext.value, "x"), "key_id": ciphertext.key_id}


def ciphertext_from_json(record: Dict[str, str]) -> Ciphertext:
    return Ciphertext(value=int(record["c"], 16), key_id=record["key_id"])
