"""Synthetic generators, CSV ingestion, and deterministic splitting.

The impact-risk generator draws the label uniformly, the features from a
label-conditional Gaussian, and the sensitive bit from a Bernoulli whose
probability is the posterior of the positive class evaluated at the features
rotated by pi/3. The mistreatment-risk generator draws (z, y) uniformly over
four cells with cell-specific Gaussian features.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import multivariate_normal

from .losses import Sample

FLOAT_FMT = "%.17g"

DI_MEAN_POS = np.array([1.5, 1.5])
DI_COV_POS = np.array([[0.4, 0.2], [0.2, 0.3]])
DI_MEAN_NEG = np.array([-1.5, -1.5])
DI_COV_NEG = np.array([[0.6, 0.1], [0.1, 0.4]])
DI_ROTATION = np.array(
    [
        [math.cos(math.pi / 3.0), -math.sin(math.pi / 3.0)],
        [math.sin(math.pi / 3.0), math.cos(math.pi / 3.0)],
    ]
)

DM_COV = np.array([[3.0, 1.0], [1.0, 3.0]])
# cells in draw order: (z, y) -> feature mean
DM_CELLS = ((0, 1), (1, 1), (0, -1), (1, -1))
DM_MEANS = {
    (0, 1): np.array([2.0, 2.0]),
    (1, 1): np.array([2.0, 2.0]),
    (0, -1): np.array([1.0, 1.0]),
    (1, -1): np.array([-2.0, -2.0]),
}


@dataclass
class Dataset:
    samples: list[Sample]
    feature_names: list[str]
    sensitive_name: str = "z"

    def __post_init__(self) -> None:
        dims = {s.x.shape[0] for s in self.samples}
        if len(dims) > 1:
            raise ValueError(f"samples disagree on feature dimension: {sorted(dims)}")
        if self.samples:
            z_values = {s.z for s in self.samples}
            y_values = {s.y for s in self.samples}
            if z_values != {0, 1}:
                warnings.warn(f"dataset contains only sensitive value(s) {sorted(z_values)}")
            if y_values != {-1, 1}:
                warnings.warn(f"dataset contains only label(s) {sorted(y_values)}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def feature_dim(self) -> int:
        return self.samples[0].x.shape[0] if self.samples else len(self.feature_names)


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _gaussian_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def synthetic_di(n: int, seed) -> Dataset:
    """Two-feature dataset at risk of a positive-rate gap between groups."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(_as_seed_sequence(seed))
    y = rng.integers(0, 2, size=n) * 2 - 1
    noise = _gaussian_rows(rng, n, 2)
    x = np.empty((n, 2))
    pos = y == 1
    x[pos] = DI_MEAN_POS + noise[pos] @ np.linalg.cholesky(DI_COV_POS).T
    x[~pos] = DI_MEAN_NEG + noise[~pos] @ np.linalg.cholesky(DI_COV_NEG).T
    rotated = x @ DI_ROTATION.T
    z = (rng.uniform(size=n) < sensitive_probability(rotated)).astype(int)
    samples = [Sample(x=x[i], z=int(z[i]), y=int(y[i])) for i in range(n)]
    return Dataset(samples=samples, feature_names=["x0", "x1"])


def sensitive_probability(points: np.ndarray) -> np.ndarray:
    """P(z=1 | point): posterior weight of the positive-class density."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    log_pos = np.atleast_1d(multivariate_normal(DI_MEAN_POS, DI_COV_POS).logpdf(points))
    log_neg = np.atleast_1d(multivariate_normal(DI_MEAN_NEG, DI_COV_NEG).logpdf(points))
    return expit(log_pos - log_neg)


def synthetic_dm(n: int, seed) -> Dataset:
    """Two-feature dataset at risk of a false-positive-rate gap between groups."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(_as_seed_sequence(seed))
    cell_idx = rng.integers(0, 4, size=n)
    noise = _gaussian_rows(rng, n, 2) @ np.linalg.cholesky(DM_COV).T
    means = np.stack([DM_MEANS[DM_CELLS[i]] for i in cell_idx])
    x = means + noise
    samples = [
        Sample(x=x[i], z=DM_CELLS[cell_idx[i]][0], y=DM_CELLS[cell_idx[i]][1]) for i in range(n)
    ]
    return Dataset(samples=samples, feature_names=["x0", "x1"])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CsvSchema:
    label_column: str
    sensitive_column: str
    positive_label: str
    categorical_columns: tuple[str, ...] = ()
    add_intercept: bool = True

    @classmethod
    def from_dict(cls, raw: dict) -> "CsvSchema":
        known = {"label_column", "sensitive_column", "positive_label", "categorical_columns", "add_intercept"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        for key in ("label_column", "sensitive_column", "positive_label"):
            if key not in raw:
                raise ValueError(f"schema is missing required key {key!r}")
        return cls(
            label_column=str(raw["label_column"]),
            sensitive_column=str(raw["sensitive_column"]),
            positive_label=str(raw["positive_label"]),
            categorical_columns=tuple(raw.get("categorical_columns", ())),
            add_intercept=bool(raw.get("add_intercept", True)),
        )


def canonical_schema() -> CsvSchema:
    """Schema that reloads a file written by :func:`save_csv` without changes."""
    return CsvSchema(
        label_column="y", sensitive_column="z", positive_label="1", add_intercept=False
    )


def _parse_sensitive(cell: str, row: int, column: str) -> int:
    text = cell.strip()
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"row {row}, column {column!r}: unmappable sensitive value {cell!r}") from None
    if value == 0.0:
        return 0
    if value == 1.0:
        return 1
    raise ValueError(f"row {row}, column {column!r}: unmappable sensitive value {cell!r}")


def load_csv(path: str, schema: CsvSchema) -> Dataset:
    """Read a delimited file with a header row into a dataset.

    Numeric feature columns pass through; categorical columns are one-hot
    encoded with lexicographically ordered levels; rows are indexed from 1 for
    error messages (header excluded). Lines starting with ``#`` are skipped.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = [r for r in csv.reader(handle) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValueError(f"{path}: no header row found")
    header, data_rows = rows[0], rows[1:]
    header = [h.strip() for h in header]
    for column in (schema.label_column, schema.sensitive_column, *schema.categorical_columns):
        if column not in header:
            raise ValueError(f"{path}: column {column!r} not found in header")
    col_index = {name: i for i, name in enumerate(header)}
    feature_columns = [
        name for name in header if name not in (schema.label_column, schema.sensitive_column)
    ]
    categorical = set(schema.categorical_columns)

    for r, row in enumerate(data_rows, start=1):
        if len(row) != len(header):
            raise ValueError(f"row {r}: expected {len(header)} cells, found {len(row)}")

    # collect categorical level sets before encoding
    levels: dict[str, list[str]] = {}
    for name in feature_columns:
        if name in categorical:
            seen = {row[col_index[name]].strip() for row in data_rows}
            levels[name] = sorted(seen)

    feature_names: list[str] = []
    for name in feature_columns:
        if name in categorical:
            feature_names.extend(f"{name}={level}" for level in levels[name])
        else:
            feature_names.append(name)
    if schema.add_intercept:
        feature_names.append("intercept")

    label_values: set[str] = set()
    samples: list[Sample] = []
    for r, row in enumerate(data_rows, start=1):
        values: list[float] = []
        for name in feature_columns:
            cell = row[col_index[name]].strip()
            if name in categorical:
                values.extend(1.0 if cell == level else 0.0 for level in levels[name])
            else:
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"row {r}, column {name!r}: could not parse {cell!r} as a number"
                    ) from None
        if schema.add_intercept:
            values.append(1.0)
        label_cell = row[col_index[schema.label_column]].strip()
        label_values.add(label_cell)
        if len(label_values - {schema.positive_label}) > 1:
            raise ValueError(
                f"row {r}, column {schema.label_column!r}: unmappable label {label_cell!r} "
                f"(more than two distinct label values)"
            )
        y = 1 if label_cell == schema.positive_label else -1
        z = _parse_sensitive(row[col_index[schema.sensitive_column]], r, schema.sensitive_column)
        samples.append(Sample(x=np.array(values), z=z, y=y))
    if not samples:
        raise ValueError(f"{path}: no data rows")
    return Dataset(samples=samples, feature_names=feature_names, sensitive_name=schema.sensitive_column)


def save_csv(dataset: Dataset, path: str, comment: str | None = None) -> None:
    """Write the canonical form: feature columns, then ``z``, then ``y``."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if comment is not None:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([*dataset.feature_names, "z", "y"])
        for s in dataset.samples:
            writer.writerow([*(FLOAT_FMT % v for v in s.x), str(s.z), str(s.y)])


# ---------------------------------------------------------------------------
# Splitting and streaming
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SplitConfig:
    n_constraint: int
    n_heldout: int
    stream_length: int
    seed: object = 0

    def __post_init__(self) -> None:
        if self.n_constraint < 1 or self.n_heldout < 1:
            raise ValueError("constraint and held-out sizes must be >= 1")
        if self.stream_length < 1:
            raise ValueError("stream length must be >= 1")


@dataclass(frozen=True)
class PoolStream:
    """Draws ``length`` samples i.i.d. with replacement from a fixed pool.

    Iterating twice over the same object yields the identical sequence.
    """

    pool: tuple[Sample, ...]
    length: int
    seed: object

    def __post_init__(self) -> None:
        if len(self.pool) == 0:
            raise ValueError("stream pool is empty")
        object.__setattr__(self, "pool", tuple(self.pool))

    def __len__(self) -> int:
        return self.length

    def __iter__(self) -> Iterator[Sample]:
        rng = np.random.default_rng(_as_seed_sequence(self.seed))
        indices = rng.integers(0, len(self.pool), size=self.length)
        for i in indices:
            yield self.pool[i]

    def with_seed(self, seed) -> "PoolStream":
        return replace(self, seed=seed)

    def with_length(self, length: int) -> "PoolStream":
        return replace(self, length=length)


def split(dataset: Dataset, config: SplitConfig) -> tuple[list[Sample], list[Sample], PoolStream]:
    """Shuffle, carve off the constraint and held-out sets, stream the rest."""
    n = len(dataset)
    reserved = config.n_constraint + config.n_heldout
    if reserved + 1 > n:
        raise ValueError(
            f"dataset has {n} rows; need more than {reserved} for the requested split"
        )
    root = _as_seed_sequence(config.seed)
    shuffle_seq, stream_seq = root.spawn(2)
    perm = np.random.default_rng(shuffle_seq).permutation(n)
    ordered = [dataset.samples[i] for i in perm]
    constraint_set = ordered[: config.n_constraint]
    heldout = ordered[config.n_constraint : reserved]
    pool = ordered[reserved:]
    return constraint_set, heldout, PoolStream(tuple(pool), config.stream_length, stream_seq)
