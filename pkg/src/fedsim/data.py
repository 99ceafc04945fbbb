"""Dataset ingestion, synthetic generation, splitting and federated partitioning.

Every function that needs randomness takes an explicit integer seed and builds
its own ``numpy.random.Generator`` from it; nothing touches global RNG state.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for unreadable files, malformed cells, or impossible requests."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got {features.ndim} dimensions")
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DataError("labels must be a vector")
        if features.shape[0] != labels.shape[0]:
            raise DataError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(features)):
            raise DataError("features contain NaN or infinite values")
        if labels.dtype.kind == "f" and not np.all(np.isfinite(labels)):
            raise DataError("labels contain NaN or infinite values")
        if self.feature_names is not None and len(self.feature_names) != features.shape[1]:
            raise DataError("feature_names length does not match the number of columns")
        features = features.copy()
        labels = labels.copy()
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> LabeledDataset:
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows], self.feature_names)

    def class_labels(self) -> np.ndarray:
        """Labels as an integer vector; raises if they are not whole numbers."""
        labels = self.labels
        if labels.dtype.kind in "iu":
            return labels.astype(np.int64)
        rounded = np.rint(labels)
        if not np.array_equal(rounded, labels):
            raise DataError("labels are not integer class indices")
        return rounded.astype(np.int64)


class PartitionKind(str, enum.Enum):
    IID = "iid"
    LABEL_SKEW = "label_skew"


@dataclass(frozen=True, eq=False)
class FederatedPartition:
    shards: tuple[LabeledDataset, ...]
    kind: PartitionKind
    source_row_indices: tuple[np.ndarray, ...]
    # label-skew only: the classes each client was assigned
    client_classes: tuple[tuple[int, ...], ...] | None = None

    def __len__(self) -> int:
        return len(self.shards)

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    holdout_rows: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must lie strictly in (0, 1), got {self.train_fraction}")
        if self.holdout_rows < 0:
            raise DataError("holdout_rows must be nonnegative")


def load_csv(
    path: str | os.PathLike,
    label_column: str | int,
    feature_columns: Sequence[str | int] | None = None,
) -> LabeledDataset:
    """Read a headed, comma-delimited numeric CSV into a dataset.

    Args:
        path: CSV file with a mandatory header row.
        label_column: header name or zero-based column index of the label.
        feature_columns: optional subset (names or indices) kept as features,
            in the given order. Defaults to every non-label column.

    Raises:
        DataError: missing file, absent column, or a cell that is not a finite
            number. Parse errors carry the 1-based data row and the column name.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty; a header row is required") from None
        rows = [r for r in reader if r]

    def resolve(col) -> int:
        if isinstance(col, int):
            if not 0 <= col < len(header):
                raise DataError(f"column index {col} out of range", column=str(col))
            return col
        if col not in header:
            raise DataError(f"column {col!r} not found in header", column=str(col))
        return header.index(col)

    label_idx = resolve(label_column)
    if feature_columns is None:
        feature_idx = [i for i in range(len(header)) if i != label_idx]
    else:
        feature_idx = [resolve(c) for c in feature_columns]
        if label_idx in feature_idx:
            raise DataError("label column cannot also be a feature", column=header[label_idx])
    if not feature_idx:
        raise DataError("no feature columns left after removing the label")

    needed = feature_idx + [label_idx]
    values = np.empty((len(rows), len(needed)))
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(
                f"row {r}: expected {len(header)} cells, found {len(row)}", row=r
            )
        for j, c in enumerate(needed):
            cell = row[c].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"row {r}, column {header[c]}: cannot parse {cell!r} as a number",
                    row=r,
                    column=header[c],
                ) from None
            if not math.isfinite(v):
                raise DataError(
                    f"row {r}, column {header[c]}: non-finite value {cell!r}",
                    row=r,
                    column=header[c],
                )
            values[r - 1, j] = v
    return LabeledDataset(
        values[:, :-1], values[:, -1], tuple(header[i] for i in feature_idx)
    )


def synthesize_regression(
    n: int,
    n_features: int,
    coefficients: Sequence[float],
    noise_sd: float,
    seed: int,
) -> LabeledDataset:
    """Standard-normal features with a linear response; intercept is the last coefficient."""
    if n <= 0:
        raise DataError("n must be positive")
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (n_features + 1,):
        raise DataError(
            f"expected {n_features + 1} coefficients (intercept last), got {coefficients.size}"
        )
    if noise_sd < 0:
        raise DataError("noise_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, n_features))
    y = x @ coefficients[:-1] + coefficients[-1]
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(n)
    return LabeledDataset(x, y)


def synthesize_blobs(
    n_per_cluster: int,
    centers: Sequence[Sequence[float]],
    spread_sd: float,
    seed: int,
) -> LabeledDataset:
    """Isotropic Gaussian clusters; the label is the index of the generating center."""
    if len(centers) == 0:
        raise DataError("at least one center is required")
    if len({len(c) for c in centers}) != 1:
        raise DataError("all centers must have the same dimension")
    centers = np.asarray(centers, dtype=float)
    if n_per_cluster <= 0:
        raise DataError("n_per_cluster must be positive")
    if spread_sd < 0:
        raise DataError("spread_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    k, d = centers.shape
    scatter = rng.standard_normal((k, n_per_cluster, d)) * spread_sd
    x = (centers[:, None, :] + scatter).reshape(k * n_per_cluster, d)
    y = np.repeat(np.arange(k), n_per_cluster)
    return LabeledDataset(x, y)


def split(
    ds: LabeledDataset, spec: SplitSpec, seed: int
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Shuffle once, reserve the last ``holdout_rows``, split the rest into train/test."""
    n = len(ds)
    if spec.holdout_rows >= n:
        raise DataError(f"holdout_rows={spec.holdout_rows} leaves no rows out of {n}")
    order = np.random.default_rng(seed).permutation(n)
    rest, holdout = order[: n - spec.holdout_rows], order[n - spec.holdout_rows :]
    n_train = int(round(spec.train_fraction * len(rest)))
    if n_train == 0 or n_train == len(rest):
        raise DataError(
            f"train_fraction={spec.train_fraction} on {len(rest)} rows leaves an empty part"
        )
    return ds.subset(rest[:n_train]), ds.subset(rest[n_train:]), ds.subset(holdout)


def partition_iid(
    ds: LabeledDataset, n_clients: int, percent: float, seed: int
) -> FederatedPartition:
    if n_clients < 1:
        raise DataError("n_clients must be at least 1")
    if not 0.0 < percent <= 100.0:
        raise DataError(f"percent must lie in (0, 100], got {percent}")
    m = int(math.floor(len(ds) * percent / 100.0))
    if m < n_clients:
        raise DataError(f"{m} selected rows cannot fill {n_clients} non-empty shards")
    chosen = np.random.default_rng(seed).permutation(len(ds))[:m]
    indices = tuple(chosen[i::n_clients] for i in range(n_clients))
    return FederatedPartition(
        shards=tuple(ds.subset(ix) for ix in indices),
        kind=PartitionKind.IID,
        source_row_indices=indices,
    )


def assign_classes(
    classes: Sequence[int], n_clients: int, labels_per_client: int, seed: int
) -> tuple[tuple[int, ...], ...]:
    """Give each client ``labels_per_client`` consecutive classes of a seeded cyclic order.

    Consecutive blocks that wrap around cover every class as soon as
    ``n_clients * labels_per_client >= len(classes)``.
    """
    classes = list(classes)
    c = len(classes)
    if labels_per_client < 1 or labels_per_client > c:
        raise DataError(f"labels_per_client must lie in [1, {c}], got {labels_per_client}")
    if n_clients < 1:
        raise DataError("n_clients must be at least 1")
    if n_clients * labels_per_client < c:
        raise DataError(
            f"{n_clients} clients x {labels_per_client} labels cannot cover {c} classes"
        )
    order = [classes[i] for i in np.random.default_rng(seed).permutation(c)]
    return tuple(
        tuple(sorted(order[(i * labels_per_client + j) % c] for j in range(labels_per_client)))
        for i in range(n_clients)
    )


def partition_by_classes(
    ds: LabeledDataset, client_classes: Sequence[Sequence[int]], seed: int
) -> FederatedPartition:
    """Deal the rows of each class round-robin over the clients holding that class."""
    labels = ds.class_labels()
    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[] for _ in client_classes]
    for cls in np.unique(labels):
        holders = [i for i, cs in enumerate(client_classes) if cls in cs]
        if not holders:
            raise DataError(f"class {cls} is not assigned to any client")
        rows = rng.permutation(np.flatnonzero(labels == cls))
        for j, client in enumerate(holders):
            buckets[client].append(rows[j :: len(holders)])
    indices = []
    for i, parts in enumerate(buckets):
        ix = np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
        if ix.size == 0:
            raise DataError(f"client {i} would receive an empty shard")
        indices.append(ix)
    return FederatedPartition(
        shards=tuple(ds.subset(ix) for ix in indices),
        kind=PartitionKind.LABEL_SKEW,
        source_row_indices=tuple(indices),
        client_classes=tuple(tuple(int(c) for c in cs) for cs in client_classes),
    )


def partition_label_skew(
    ds: LabeledDataset, n_clients: int, labels_per_client: int, seed: int
) -> FederatedPartition:
    classes = np.unique(ds.class_labels()).tolist()
    rng = np.random.default_rng(seed)
    assign_seed, deal_seed = (int(s) for s in rng.integers(0, 2**63 - 1, size=2))
    assignment = assign_classes(classes, n_clients, labels_per_client, assign_seed)
    return partition_by_classes(ds, assignment, deal_seed)
