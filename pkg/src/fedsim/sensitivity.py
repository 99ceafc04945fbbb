"""Empirical sensitivity of a query, estimated from sampled neighbouring datasets."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import LabeledDataset
from .dp import NormKind, norm_of

Query = Callable[[LabeledDataset], np.ndarray]


class SensitivitySamplingError(RuntimeError):
    def __init__(self, message: str, sample_index: int):
        super().__init__(message)
        self.sample_index = sample_index


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """Uniform sampling, with replacement, over the rows of ``pool``."""

    pool: LabeledDataset

    def __post_init__(self):
        if len(self.pool) == 0:
            raise ValueError("sampling pool is empty")

    def draw_rows(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, len(self.pool), size=size)


@dataclass(frozen=True)
class SensitivityEstimate:
    max_sensitivity: float
    mean_sensitivity: float
    n_samples: int
    gamma: float
    norm_kind: NormKind
    record_count: int
    norms: np.ndarray = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {
            "max_sensitivity": self.max_sensitivity,
            "mean_sensitivity": self.mean_sensitivity,
            "n_samples": self.n_samples,
            "gamma": self.gamma,
            "norm_kind": self.norm_kind.value,
            "record_count": self.record_count,
        }


def default_record_count(pool_size: int) -> int:
    return max(2, pool_size // 4)


def sample_sensitivity(
    query: Query,
    dist: SamplingDistribution,
    n: int,
    gamma: float,
    norm: NormKind | str,
    record_count: int | None = None,
    seed: int | np.random.SeedSequence = 0,
    workers: int = 1,
) -> SensitivityEstimate:
    """Max and mean of ``||query(D) - query(D')||`` over ``n`` sampled neighbour pairs.

    ``D`` holds ``record_count`` rows drawn uniformly with replacement from the
    pool; ``D'`` replaces one uniformly chosen row of ``D`` with a fresh draw.
    Sample ``i`` uses its own generator spawned from ``seed`` at index ``i``, so
    the first ``n`` norms are the same for any larger ``n`` and for any
    ``workers`` count. ``gamma`` is stored as metadata only.

    ``record_count`` defaults to a quarter of the pool. It may exceed the pool
    size since rows are drawn with replacement.
    """
    norm = NormKind(norm)
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if record_count is None:
        record_count = default_record_count(len(dist.pool))
    if record_count < 2:
        raise ValueError("record_count must be at least 2")

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n)
    pool = dist.pool

    def one(i: int) -> float:
        rng = np.random.default_rng(children[i])
        rows = dist.draw_rows(record_count, rng)
        neighbour = rows.copy()
        neighbour[rng.integers(record_count)] = dist.draw_rows(1, rng)[0]
        try:
            a = np.asarray(query(pool.subset(rows)), dtype=float)
            b = np.asarray(query(pool.subset(neighbour)), dtype=float)
        except Exception as exc:
            raise SensitivitySamplingError(f"query failed on sample {i}: {exc}", i) from exc
        return norm_of(a - b, norm)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            norms = np.fromiter(pool_exec.map(one, range(n)), dtype=float, count=n)
    else:
        norms = np.fromiter((one(i) for i in range(n)), dtype=float, count=n)
    return SensitivityEstimate(
        max_sensitivity=float(norms.max()),
        mean_sensitivity=float(norms.mean()),
        n_samples=n,
        gamma=gamma,
        norm_kind=norm,
        record_count=record_count,
        norms=norms,
    )
