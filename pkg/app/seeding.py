#  SPDX-License-Identifier: Apache-2.0
import random
import zlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    """
    Derives an independent 64-bit seed from a root seed and a path of labels,
    e.g. derive_seed(7, "logreg", "party_A"). Labels may be strings or ints.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            entropy.append(zlib.crc32(label.encode("utf-8")))
        else:
            entropy.append(int(label) & 0xFFFFFFFF)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def numpy_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))


def big_rng(seed: int, *labels) -> random.Random:
    # Mersenne Twister gives reproducible arbitrary-width integers via getrandbits.
    return random.Random(derive_seed(seed, *labels))
