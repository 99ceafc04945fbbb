"""Server-side operators fusing client parameter vectors into a global one."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import ParamVector, ShapeError, lloyd

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ClientWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size == 0:
            raise ValueError("at least one weight is required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(math.fsum(w) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {math.fsum(w)!r}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> ClientWeights:
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def by_samples(cls, counts: Sequence[int]) -> ClientWeights:
        counts = np.asarray(counts, dtype=float)
        if counts.sum() <= 0:
            raise ValueError("sample counts must have a positive total")
        return cls(counts / counts.sum())


def _check_shapes(params: Sequence[ParamVector]) -> None:
    if not params:
        raise ValueError("no client parameters to aggregate")
    tags = {p.shape_tag for p in params}
    if len(tags) != 1:
        raise ShapeError(f"client parameters have mismatched shapes: {sorted(map(str, tags))}")


def fed_avg(params: Sequence[ParamVector], weights: ClientWeights) -> ParamVector:
    """Componentwise weighted mean of the client parameter vectors."""
    _check_shapes(params)
    if len(weights) != len(params):
        raise ValueError(f"{len(weights)} weights for {len(params)} clients")
    stacked = np.stack([p.values for p in params])
    return params[0].with_values(weights.weights @ stacked)


def cluster_aggregate(centroid_sets: Sequence[ParamVector], k: int, seed: int = 0) -> ParamVector:
    """Meta k-means over the pooled client centroids.

    Lloyd starts from the first client's centroids, so ``seed`` does not
    influence the result; it is accepted for interface symmetry with the
    model's own seeding. Output centroids are sorted lexicographically.
    """
    _check_shapes(centroid_sets)
    tag = centroid_sets[0].shape_tag
    if len(tag) != 3 or tag[1] != k:
        raise ShapeError(f"expected {k} centroids per client, got shape tag {tag}")
    pooled = np.concatenate([p.structured() for p in centroid_sets])
    result = lloyd(pooled, centroid_sets[0].structured())
    centroids = result.centroids
    order = np.lexsort(centroids.T[::-1])
    return centroid_sets[0].with_values(centroids[order])


def coop_alpha(global_age: int, incoming_age: int) -> float:
    """Mixing weight for an incoming model; each unit of staleness shrinks it."""
    return 1.0 / (1.0 + max(0, global_age - incoming_age))


def coop_merge(
    global_params: ParamVector, global_age: int, incoming: ParamVector, incoming_age: int
) -> tuple[ParamVector, int]:
    if not global_params.compatible(incoming):
        raise ShapeError(f"cannot merge {incoming.shape_tag} into {global_params.shape_tag}")
    if global_age < 0 or incoming_age < 0:
        raise ValueError("model ages must be nonnegative")
    alpha = coop_alpha(global_age, incoming_age)
    merged = (1.0 - alpha) * global_params.values + alpha * incoming.values
    return global_params.with_values(merged), global_age + 1


class FedAvg:
    """FedAvg as a round aggregator, weighting clients uniformly or by sample count."""

    def __init__(self, weighting: str = "uniform"):
        if weighting not in ("uniform", "by_samples"):
            raise ValueError(f"unknown weighting {weighting!r}")
        self.weighting = weighting

    def __call__(self, params: Sequence[ParamVector], sample_counts: Sequence[int]) -> ParamVector:
        if self.weighting == "uniform":
            weights = ClientWeights.uniform(len(params))
        else:
            weights = ClientWeights.by_samples(sample_counts)
        return fed_avg(params, weights)


class ClusterAggregator:
    def __init__(self, k: int, seed: int = 0):
        self.k = k
        self.seed = seed

    def __call__(self, params: Sequence[ParamVector], sample_counts: Sequence[int]) -> ParamVector:
        return cluster_aggregate(params, self.k, self.seed)
