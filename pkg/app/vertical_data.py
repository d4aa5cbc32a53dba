#  SPDX-License-Identifier: Apache-2.0
import logging
import re
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
import pandas as pd

import constants
from errors import ConfigError
from errors import DatasetError
from seeding import numpy_rng

logger = logging.getLogger(__name__)

DISTRIBUTION_ARITY = {"normal": 2, "bernoulli": 1, "exponential": 1, "uniform": 2}
_SPEC_PATTERN = re.compile(r"^\s*(\w+)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class DistributionSpec:
    """
    One synthetic column: normal(mu, sigma), bernoulli(p), exponential(rate) or uniform(a, b).
    """
    kind: str
    params: Tuple[float, ...]
    n: int
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in DISTRIBUTION_ARITY:
            raise ConfigError(f"unknown distribution '{self.kind}'")
        if len(self.params) != DISTRIBUTION_ARITY[self.kind]:
            raise ConfigError(f"{self.kind} takes {DISTRIBUTION_ARITY[self.kind]} parameters, got {self.params}")
        if self.n < 1:
            raise ConfigError(f"sample count must be positive, got {self.n}")
        if self.kind == "normal" and self.params[1] <= 0:
            raise ConfigError(f"normal sigma must be positive, got {self.params[1]}")
        if self.kind == "bernoulli" and not 0 <= self.params[0] <= 1:
            raise ConfigError(f"bernoulli p must be in [0, 1], got {self.params[0]}")
        if self.kind == "exponential" and self.params[0] <= 0:
            raise ConfigError(f"exponential rate must be positive, got {self.params[0]}")
        if self.kind == "uniform" and not self.params[0] < self.params[1]:
            raise ConfigError(f"uniform needs a < b, got {self.params}")

    @classmethod
    def parse(cls, text: str, n: int, seed: int) -> "DistributionSpec":
        match = _SPEC_PATTERN.match(text)
        if not match:
            raise ConfigError(f"cannot parse distribution '{text}', expected e.g. normal(0,1)")
        try:
            params = tuple(float(p) for p in match.group(2).split(",") if p.strip())
        except ValueError:
            raise ConfigError(f"non-numeric parameter in distribution '{text}'")
        return cls(kind=match.group(1).lower(), params=params, n=n, seed=seed)

    @property
    def tag(self) -> str:
        return f"{self.kind}({','.join(f'{p:g}' for p in self.params)})"

    def sample(self) -> np.ndarray:
        rng = numpy_rng(self.seed, "column", self.tag)
        if self.kind == "normal":
            return rng.normal(self.params[0], self.params[1], size=self.n)
        if self.kind == "bernoulli":
            return (rng.random(self.n) < self.params[0]).astype(float)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.params[0], size=self.n)
        return rng.uniform(self.params[0], self.params[1], size=self.n)


@dataclass
class Dataset:
    ids: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    columns: List[str]

    @property
    def n(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class PartitionSpec:
    features_A: Tuple[int, ...]
    features_B: Tuple[int, ...]
    label_owner: str = constants.OWNER_ACTIVE

    def __post_init__(self) -> None:
        if not self.features_A or not self.features_B:
            raise ConfigError("both parties need at least one feature")
        if set(self.features_A) & set(self.features_B):
            raise ConfigError("party feature sets overlap")
        if self.label_owner != constants.OWNER_ACTIVE:
            raise ConfigError("the label owner must be the active party A")

    @classmethod
    def from_counts(cls, d_A: int, d_B: int) -> "PartitionSpec":
        return cls(features_A=tuple(range(d_A)), features_B=tuple(range(d_A, d_A + d_B)))

    @classmethod
    def preset(cls, name: str) -> "PartitionSpec":
        if name not in constants.PARTITION_PRESETS:
            raise ConfigError(f"unknown partition preset '{name}'")
        return cls.from_counts(*constants.PARTITION_PRESETS[name])


@dataclass
class VerticalDataset:
    """
    Aligned two-party view of a dataset: A holds X_A and the labels, B holds X_B.
    """
    ids: np.ndarray
    X_A: np.ndarray
    X_B: np.ndarray
    Y: np.ndarray
    columns_A: List[str] = field(default_factory=list)
    columns_B: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.X_A = np.asarray(self.X_A, dtype=float)
        self.X_B = np.asarray(self.X_B, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X_A.ndim != 2 or self.X_B.ndim != 2:
            raise DatasetError("feature blocks must be 2-D matrices")
        n = len(self.ids)
        if self.X_A.shape[0] != n or self.X_B.shape[0] != n or self.Y.shape[0] != n:
            raise DatasetError(f"party blocks are not aligned on {n} ids")
        if self.X_A.shape[1] < 1 or self.X_B.shape[1] < 1:
            raise DatasetError("both parties need at least one feature")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d_A(self) -> int:
        return self.X_A.shape[1]

    @property
    def d_B(self) -> int:
        return self.X_B.shape[1]

    def concatenate(self) -> np.ndarray:
        return np.hstack([self.X_A, self.X_B])

    def subset(self, indices: Sequence[int]) -> "VerticalDataset":
        idx = np.asarray(indices, dtype=int)
        return VerticalDataset(ids=self.ids[idx], X_A=self.X_A[idx], X_B=self.X_B[idx], Y=self.Y[idx],
                               columns_A=list(self.columns_A), columns_B=list(self.columns_B))

    def replace_B(self, X_B: np.ndarray, columns_B: Optional[List[str]] = None) -> "VerticalDataset":
        return VerticalDataset(ids=self.ids, X_A=self.X_A, X_B=X_B, Y=self.Y, columns_A=list(self.columns_A),
                               columns_B=list(columns_B if columns_B is not None else self.columns_B))


def _linear_labels(X: np.ndarray, seed: int, weights: Optional[Sequence[float]], scale: float,
                    noise: str) -> np.ndarray:
    rng = numpy_rng(seed, "labels")
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = (X - X.mean(axis=0)) / std
    if weights is None:
        w = rng.normal(size=X.shape[1])
        w /= np.linalg.norm(w)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (X.shape[1],):
            raise ConfigError(f"label weights need {X.shape[1]} entries, got {len(w)}")
    margin = scale * Z @ w
    if noise == "logistic":
        margin = margin + rng.logistic(size=X.shape[0])
    elif noise != "none":
        raise ConfigError(f"unknown label noise '{noise}'")
    return (margin > 0).astype(float)


def gen_synthetic(columns: Sequence[DistributionSpec], seed: int, weights: Optional[Sequence[float]] = None,
                  label_scale: float = constants.LABEL_SCALE, noise: str = "logistic") -> Dataset:
    """
    Generates the columns described by `columns` and labels them with a seeded linear
    label model on the standardized features plus logistic noise.
    """
    if not columns:
        raise ConfigError("at least one column is required")
    sizes = {spec.n for spec in columns}
    if len(sizes) != 1:
        raise ConfigError(f"all columns need the same sample count, got {sorted(sizes)}")
    X = np.column_stack([spec.sample() for spec in columns])
    Y = _linear_labels(X, seed, weights, label_scale, noise)
    n = X.shape[0]
    logger.debug(f"Generated synthetic dataset {n}x{X.shape[1]} with positive rate {Y.mean():.3f}")
    return Dataset(ids=np.arange(n), X=X, Y=Y, columns=[f"x{j}:{spec.tag}" for j, spec in enumerate(columns)])


def gaussian_columns(d: int, n: int, seed: int) -> List[DistributionSpec]:
    return [DistributionSpec(kind="normal", params=(0.0, 1.0), n=n, seed=seed + j) for j in range(d)]


def gen_sparse(n: int, d: int, density: float, seed: int) -> Dataset:
    """
    Few samples, many mostly-zero features: a dataset too small to yield one equation per feature.
    """
    rng = numpy_rng(seed, "sparse")
    mask = rng.random((n, d)) < density
    X = np.where(mask, rng.exponential(1.0, size=(n, d)), 0.0)
    Y = _linear_labels(X, seed, None, constants.LABEL_SCALE, "logistic")
    return Dataset(ids=np.arange(n), X=X, Y=Y, columns=[f"x{j}:sparse" for j in range(d)])


def load_csv(path: str, id_column: str, label_column: str) -> Dataset:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetError(f"cannot read CSV {path}: {e}")
    for required in (id_column, label_column):
        if required not in frame.columns:
            raise DatasetError("required column missing", column=required)

    ids = frame[id_column]
    missing = np.flatnonzero(ids.isna().to_numpy())
    if missing.size:
        raise DatasetError("missing sample id", row=int(missing[0]) + 1, column=id_column)
    duplicated = np.flatnonzero(ids.duplicated().to_numpy())
    if duplicated.size:
        raise DatasetError(f"duplicate sample id {ids.iloc[duplicated[0]]!r}", row=int(duplicated[0]) + 1,
                           column=id_column)

    values = frame.drop(columns=[id_column]).apply(pd.to_numeric, errors="coerce")
    bad = np.argwhere(values.isna().to_numpy())
    if bad.size:
        row, col = bad[0]
        raise DatasetError("missing or non-numeric value", row=int(row) + 1, column=str(values.columns[col]))

    feature_columns = [c for c in values.columns if c != label_column]
    if not feature_columns:
        raise DatasetError("CSV has no feature columns")
    logger.info(f"Loaded {len(frame)} samples with {len(feature_columns)} features from {path}")
    return Dataset(ids=ids.to_numpy(), X=values[feature_columns].to_numpy(dtype=float),
                   Y=values[label_column].to_numpy(dtype=float), columns=[str(c) for c in feature_columns])


def partition(dataset: Dataset, spec: PartitionSpec) -> VerticalDataset:
    d = dataset.X.shape[1]
    used = sorted(spec.features_A + spec.features_B)
    if used != list(range(d)):
        raise ConfigError(f"partition must cover features 0..{d - 1} exactly once, got A={spec.features_A} "
                          f"B={spec.features_B}")
    a = list(spec.features_A)
    b = list(spec.features_B)
    return VerticalDataset(ids=dataset.ids, X_A=dataset.X[:, a], X_B=dataset.X[:, b], Y=dataset.Y,
                           columns_A=[dataset.columns[j] for j in a], columns_B=[dataset.columns[j] for j in b])


def train_test_split(data: VerticalDataset, train_fraction: float = constants.DEFAULT_TRAIN_FRACTION,
                     seed: int = 0) -> Tuple[VerticalDataset, VerticalDataset]:
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    order = numpy_rng(seed, "split").permutation(data.n)
    cut = int(round(train_fraction * data.n))
    if cut == 0 or cut == data.n:
        raise ConfigError(f"split of {data.n} samples at {train_fraction} leaves an empty side")
    return data.subset(np.sort(order[:cut])), data.subset(np.sort(order[cut:]))
