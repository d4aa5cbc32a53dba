#  SPDX-License-Identifier: Apache-2.0
TOOL_NAME = "vfl_sim"
LOG_FILE_NAME = "vfl_sim.log"
SCHEMA_VERSION = 1

# he_core
DEFAULT_KEY_BITS = 2048
MIN_KEY_BITS = 1088
SIGNED_FRAC_BITS = 40
SIGNED_VALUE_BITS = 80
LAYOUT_FRAC_BITS = 24
LAYOUT_OFFSET_BITS = 48
MAGIC_BITS = 960
LAYOUT_MAX_COUNT = 1 << 20
PRIME_MR_ROUNDS = 25

# logreg_protocol
DEFAULT_EPOCHS = 100
DEFAULT_BATCH_SIZE = 50
DEFAULT_LEARNING_RATE = 0.05
RANDOM_INIT_SCALE = 0.01
PREDICT_THRESHOLD = 0.5

# revmul_attack
RANK_TOLERANCE = 1e-10

# secureboost_protocol
DEFAULT_TREES = 1
DEFAULT_MAX_DEPTH = 3
DEFAULT_BINS = 32
DEFAULT_LAMBDA = 1.0
DEFAULT_GAMMA = 0.0
DEFAULT_SHRINKAGE = 1.0
MIN_SAMPLES_SPLIT = 2
OWNER_ACTIVE = "A"
OWNER_PASSIVE = "B"

# revsum_attack
WINDOW_BITS = 30
RANDOM_BITS = 20
DEFAULT_SUPERGROUPS = 2
DEFAULT_BASE = 2
SEARCH_BUDGET = 1 << 17
EXACT_SEARCH_LIMIT = 24
MAX_CARRY_MOVES = 2
MAX_HYPOTHESES = 256
SLOT_FIRST = 0
SLOT_SECOND = 1

# harness_cli
DEFAULT_SAMPLES = 2000
DEFAULT_TRAIN_FRACTION = 0.8
LABEL_SCALE = 4.0
PARTITION_PRESETS = {
    "credit": (13, 10),
    "breast": (10, 20),
    "vehicle": (9, 9),
    "student": (6, 7),
}
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_PROTOCOL_ABORT = 3
# one-feature synthetic datasets: A holds a noise column, B the distribution column
SYNTHETIC_DISTRIBUTIONS = {
    "normal": "normal(0,1)",
    "bernoulli": "bernoulli(0.5)",
    "exponential": "exponential(1)",
    "uniform": "uniform(0,50)",
}
SYNTHETIC_WEIGHTS = (0.3, 1.0)
SUB_SEED_MODULUS = 1 << 31
METRICS_FLOAT_FORMAT = "%.10g"
