#  SPDX-License-Identifier: Apache-2.0
import random
import time

import pytest

import he_core
from errors import CodecOverflowError
from errors import ConfigError
from errors import KeyMismatchError
from he_core import CodecParams
from he_core import PlaintextWord


def _identity_cases(keypair, cases, seed):
    public_key = keypair.public_key
    n = public_key.n
    rng = random.Random(seed)
    nonces = random.Random(seed + 1)
    for _ in range(cases):
        a, b, v = rng.randrange(n), rng.randrange(n), rng.randrange(n)
        enc_a = he_core.encrypt(public_key, PlaintextWord(a), nonces)
        enc_b = he_core.encrypt(public_key, PlaintextWord(b), nonces)
        total = he_core.add_cipher(public_key, enc_a, enc_b)
        assert he_core.decrypt(keypair.secret_key, total).raw == (a + b) % n
        scaled = he_core.mul_plain(public_key, enc_a, PlaintextWord(v))
        assert he_core.decrypt(keypair.secret_key, scaled).raw == (a * v) % n


def test_homomorphic_identities(keypair):
    _identity_cases(keypair, 100, seed=3)


@pytest.mark.slow
def test_homomorphic_identities_full_size(keypair_2048):
    start = time.monotonic()
    _identity_cases(keypair_2048, 1000, seed=5)
    assert time.monotonic() - start < 60


def test_keygen_is_deterministic(keypair):
    again = he_core.keygen(keypair.key_bits, seed=11)
    assert again.public_key.n == keypair.public_key.n
    assert again.key_id == keypair.key_id
    assert keypair.public_key.n.bit_length() == keypair.key_bits


@pytest.mark.parametrize("bits", [1024, 1089, 512])
def test_keygen_rejects_small_or_odd_moduli(bits):
    with pytest.raises(ConfigError):
        he_core.keygen(bits)


def test_ciphertexts_from_another_key_are_rejected(keypair, other_keypair):
    a = he_core.encrypt(keypair.public_key, PlaintextWord(1), 1)
    b = he_core.encrypt(other_keypair.public_key, PlaintextWord(2), 2)
    with pytest.raises(KeyMismatchError):
        he_core.add_cipher(keypair.public_key, a, b)
    with pytest.raises(KeyMismatchError):
        he_core.decrypt(keypair.secret_key, b)


def test_encrypt_rejects_words_outside_plaintext_space(keypair):
    with pytest.raises(CodecOverflowError):
        he_core.encrypt(keypair.public_key, PlaintextWord(keypair.public_key.n), 0)


def test_encryption_is_randomized_by_seed(keypair):
    word = PlaintextWord(42)
    first = he_core.encrypt(keypair.public_key, word, 1)
    second = he_core.encrypt(keypair.public_key, word, 2)
    assert first.value != second.value
    assert he_core.encrypt(keypair.public_key, word, 1) == first


def test_sum_and_dot_product(keypair):
    public_key = keypair.public_key
    values = [3, 5, 7]
    weights = [2, 0, 4]
    ciphers = [he_core.encrypt(public_key, PlaintextWord(v), i) for i, v in enumerate(values)]
    total = he_core.sum_ciphers(public_key, ciphers)
    assert he_core.decrypt(keypair.secret_key, total).raw == 15
    dot = he_core.dot_plain(public_key, ciphers, [PlaintextWord(w) for w in weights])
    assert he_core.decrypt(keypair.secret_key, dot).raw == 34
    with pytest.raises(ValueError):
        he_core.dot_plain(public_key, ciphers, [PlaintextWord(1)])


@pytest.mark.parametrize("x", [0.0, 1.5, -1.5, 0.25, -1234.0625])
def test_signed_codec_is_exact_on_dyadic_values(keypair, x):
    word = he_core.encode_signed(keypair.public_key, x)
    assert he_core.decode_signed(keypair.public_key, word) == x


def test_signed_product_decodes_at_double_scale(keypair):
    public_key = keypair.public_key
    x, y = -0.75, 2.5
    enc_x = he_core.encrypt(public_key, he_core.encode_signed(public_key, x), 9)
    product = he_core.mul_plain(public_key, enc_x, he_core.encode_signed(public_key, y))
    word = he_core.decrypt(keypair.secret_key, product)
    assert he_core.decode_signed(public_key, word, scale_exponent=2) == x * y


@pytest.mark.parametrize("x", [2.0 ** 45, -(2.0 ** 45), float("nan"), float("inf")])
def test_signed_codec_overflow(keypair, x):
    with pytest.raises(CodecOverflowError):
        he_core.encode_signed(keypair.public_key, x)


def test_layout_sum_recovers_values_and_padding(keypair):
    public_key = keypair.public_key
    values = [0.5, -1.25, 3.0]
    magics = [0x30001, 0x20010, 0x100]
    ciphers = [he_core.encrypt(public_key, he_core.encode_layout(x, m), i)
               for i, (x, m) in enumerate(zip(values, magics))]
    word = he_core.decrypt(keypair.secret_key, he_core.sum_ciphers(public_key, ciphers))
    value, low = he_core.decode_layout_fixed(word, len(values))
    assert value == int(sum(values) * 2 ** he_core.LAYOUT_CODEC.frac_bits)
    assert low == sum(magics)
    assert he_core.decode_layout(word, len(values)) == (sum(values), sum(magics))


def test_layout_codec_bounds():
    with pytest.raises(CodecOverflowError):
        he_core.encode_layout(2.0 ** 30, 0)
    with pytest.raises(CodecOverflowError):
        he_core.encode_layout(1.0, 1 << he_core.LAYOUT_CODEC.magic_bits)
    with pytest.raises(CodecOverflowError):
        he_core.decode_layout_fixed(PlaintextWord(0), he_core.LAYOUT_CODEC.max_count + 1)


def test_layout_capacity_check(keypair):
    he_core.check_layout_capacity(keypair.public_key)
    with pytest.raises(CodecOverflowError):
        he_core.check_layout_capacity(keypair.public_key, CodecParams(frac_bits=24, max_count=1 << 80))


def test_codec_params_validation():
    with pytest.raises(ConfigError):
        CodecParams(frac_bits=0)
    with pytest.raises(ConfigError):
        CodecParams(frac_bits=24, max_count=0)


def test_keypair_json(keypair):
    record = he_core.keypair_to_json(keypair)
    restored = he_core.keypair_from_json(record)
    assert restored.public_key.n == keypair.public_key.n
    assert restored.secret_key.p == keypair.secret_key.p
    record["key_id"] = "0" * 16
    with pytest.raises(KeyMismatchError):
        he_core.keypair_from_json(record)


def test_ciphertext_json_keeps_key_tag(keypair):
    enc = he_core.encrypt(keypair.public_key, PlaintextWord(12345), 3)
    restored = he_core.ciphertext_from_json(he_core.ciphertext_to_json(enc))
    assert restored.key_id == keypair.key_id
    assert he_core.decrypt(keypair.secret_key, restored).raw == 12345


def test_signed_codec_round_trip_bound(keypair):
    rng = random.Random(21)
    bound = 2.0 ** -(he_core.SIGNED_CODEC.frac_bits + 1)
    for _ in range(200):
        x = rng.uniform(-1000.0, 1000.0)
        decoded = he_core.decode_signed(keypair.public_key, he_core.encode_signed(keypair.public_key, x))
        assert abs(decoded - x) <= bound


def test_signed_products_match_plaintext(keypair):
    public_key = keypair.public_key
    rng = random.Random(22)
    tolerance = 2.0 ** -he_core.SIGNED_CODEC.frac_bits
    for i in range(100):
        x, y = rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0)
        enc_x = he_core.encrypt(public_key, he_core.encode_signed(public_key, x), i)
        word = he_core.decrypt(keypair.secret_key,
                               he_core.mul_plain(public_key, enc_x, he_core.encode_signed(public_key, y)))
        product = he_core.decode_signed(public_key, word, scale_exponent=2)
        assert abs(product - x * y) <= tolerance * (abs(x) + abs(y) + 1)


def test_layout_sums_match_plaintext(keypair):
    public_key = keypair.public_key
    rng = random.Random(23)
    # 50 magics below 2^954 keep the sum inside the 960-bit region
    values = [rng.uniform(-1.0, 1.0) for _ in range(50)]
    magics = [rng.getrandbits(he_core.LAYOUT_CODEC.magic_bits - 6) for _ in range(50)]
    ciphers = [he_core.encrypt(public_key, he_core.encode_layout(x, m), i)
               for i, (x, m) in enumerate(zip(values, magics))]
    word = he_core.decrypt(keypair.secret_key, he_core.sum_ciphers(public_key, ciphers))
    value, low = he_core.decode_layout(word, 50)
    assert abs(value - sum(values)) <= 50 * 2.0 ** -he_core.LAYOUT_CODEC.frac_bits
    assert low == sum(magics)


def test_dot_products_match_plaintext(keypair):
    public_key = keypair.public_key
    rng = random.Random(24)
    for case in range(50):
        values = [rng.randrange(1 << 40) for _ in range(4)]
        weights = [rng.randrange(1 << 40) for _ in range(4)]
        ciphers = [he_core.encrypt(public_key, PlaintextWord(v), 10 * case + j) for j, v in enumerate(values)]
        dot = he_core.dot_plain(public_key, ciphers, [PlaintextWord(w) for w in weights])
        assert he_core.decrypt(keypair.secret_key, dot).raw == sum(v * w for v, w in zip(values, weights))
