"""End-to-end experiment execution from a validated ``ExperimentConfig``.

Pipeline: load data, split, partition train and test shards, estimate
sensitivity (when sampled), build the privacy filter, then run the
experiment once or, with ``repeat_until_halt``, repeatedly with fresh noise
against the same filter until it halts. The result is a report dictionary
(see :mod:`fedsim.report`).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import report as report_mod
from .accountant import FilterState
from .aggregators import ClusterAggregator, FedAvg
from .config import DatasetConfig, ExperimentConfig
from .data import (
    DataError,
    FederatedPartition,
    LabeledDataset,
    SplitSpec,
    load_csv,
    partition_by_classes,
    partition_iid,
    partition_label_skew,
    split,
    synthesize_blobs,
    synthesize_regression,
)
from .models import KMeans, LinearRegression, LogisticRegression, Metrics, Model
from .orchestrator import ParamAccess, RoundReport, derive_seed, make_clients, run_coop, run_rounds
from .sensitivity import SamplingDistribution, SensitivityEstimate, sample_sensitivity

# Stream tags for seeds derived from the master seed.
TAG_SPLIT = 1
TAG_PARTITION = 2
TAG_TEST_PARTITION = 3
TAG_CLIENTS = 4
TAG_SENSITIVITY = 5
TAG_NOISE = 6
TAG_AGGREGATOR = 7
TAG_CENTRAL = 8


@dataclass(frozen=True)
class PreparedData:
    dataset: LabeledDataset
    train: LabeledDataset
    test: LabeledDataset
    holdout: LabeledDataset
    partition: FederatedPartition
    test_partition: FederatedPartition


def load_dataset(cfg: DatasetConfig, base_dir: str) -> LabeledDataset:
    if cfg.csv is not None:
        path = cfg.csv.path
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return load_csv(path, cfg.csv.label_column, cfg.csv.feature_columns)
    s = cfg.synthetic
    if s.kind == "regression":
        return synthesize_regression(s.n, s.n_features, s.coefficients, s.noise_sd, s.seed)
    return synthesize_blobs(s.n_per_cluster, s.centers, s.spread_sd, s.seed)


def prepare_data(cfg: ExperimentConfig, base_dir: str) -> PreparedData:
    ds = load_dataset(cfg.dataset, base_dir)
    train, test, holdout = split(
        ds, SplitSpec(cfg.split.train_fraction, cfg.split.holdout_rows),
        derive_seed(cfg.seed, TAG_SPLIT),
    )
    part_seed = derive_seed(cfg.seed, TAG_PARTITION)
    test_seed = derive_seed(cfg.seed, TAG_TEST_PARTITION)
    if cfg.partition.kind == "iid":
        partition = partition_iid(train, cfg.n_clients, cfg.partition.percent, part_seed)
        test_partition = partition_iid(test, cfg.n_clients, 100.0, test_seed)
    else:
        partition = partition_label_skew(
            train, cfg.n_clients, cfg.partition.labels_per_client, part_seed
        )
        # each client is tested on the classes it trained on
        test_partition = partition_by_classes(test, partition.client_classes, test_seed)
    return PreparedData(ds, train, test, holdout, partition, test_partition)


def _n_classes(cfg: ExperimentConfig, ds: LabeledDataset) -> int:
    labels = ds.class_labels()
    found = int(labels.max()) + 1
    if cfg.model.n_classes is None:
        return max(2, found)
    if found > cfg.model.n_classes:
        raise DataError(f"labels reach class {found - 1} but model.n_classes={cfg.model.n_classes}")
    return cfg.model.n_classes


def model_factory(cfg: ExperimentConfig, ds: LabeledDataset, epochs: int | None = None):
    """A ``seed -> Model`` constructor for the configured model."""
    d = ds.n_features
    m = cfg.model
    if m.kind == "linreg":
        return lambda seed: LinearRegression(d)
    if m.kind == "logreg":
        k = _n_classes(cfg, ds)
        e = m.epochs if epochs is None else epochs
        return lambda seed: LogisticRegression(d, n_classes=k, step=m.step, epochs=e)
    return lambda seed: KMeans(d, m.k, seed=seed)


def estimate_sensitivity(
    cfg: ExperimentConfig, data: PreparedData
) -> tuple[float | None, SensitivityEstimate | None]:
    """The sensitivity used to calibrate noise, plus the sampled estimate if any."""
    if cfg.dp is None:
        return None, None
    s = cfg.dp.sensitivity
    if s.kind == "fixed":
        return s.value, None
    factory = model_factory(cfg, data.dataset)
    seed = derive_seed(cfg.seed, TAG_SENSITIVITY)

    def query(sample: LabeledDataset) -> np.ndarray:
        return factory(seed).train(sample).get_params().values

    est = sample_sensitivity(
        query,
        SamplingDistribution(data.holdout),
        n=s.n,
        gamma=s.gamma,
        norm=s.norm,
        record_count=s.record_count,
        seed=seed,
        workers=cfg.workers,
    )
    return est.max_sensitivity, est


def build_access(cfg: ExperimentConfig, sensitivity: float | None) -> ParamAccess:
    if cfg.dp is None:
        return ParamAccess.plain()
    filt = None
    charge = "per_round"
    if cfg.budget is not None:
        b = cfg.budget
        filt = FilterState(b.filter, b.eps_g, b.delta_g)
        charge = b.charge
    if cfg.dp.mechanism == "laplace":
        return ParamAccess.laplace(sensitivity, cfg.dp.epsilon, filt, charge)
    return ParamAccess.gaussian(sensitivity, cfg.dp.epsilon, cfg.dp.delta, filt, charge)


def _aggregator(cfg: ExperimentConfig):
    if cfg.aggregator.kind == "cluster":
        return ClusterAggregator(cfg.aggregator.k, seed=derive_seed(cfg.seed, TAG_AGGREGATOR))
    return FedAvg(cfg.aggregator.weighting)


def run_once(
    cfg: ExperimentConfig,
    data: PreparedData,
    access: ParamAccess,
    run_index: int,
) -> list[RoundReport]:
    """One whole federated experiment; models start fresh, noise is run-specific."""
    clients = make_clients(
        data.partition,
        model_factory(cfg, data.dataset),
        derive_seed(cfg.seed, TAG_CLIENTS),
        data.test_partition,
    )
    global_test = data.test if cfg.evaluation.global_test else None
    noise_seed = derive_seed(cfg.seed, TAG_NOISE, run_index)
    if cfg.aggregator.kind == "coop":
        reports, _ = run_coop(
            clients,
            [tuple(s) for s in cfg.aggregator.schedule],
            access,
            global_test,
            seed=noise_seed,
            initial_age=cfg.aggregator.initial_age,
            run_index=run_index,
        )
        return reports
    return run_rounds(
        clients,
        _aggregator(cfg),
        access,
        cfg.rounds,
        global_test,
        seed=noise_seed,
        run_index=run_index,
        workers=cfg.workers,
    )


def centralized_baseline(cfg: ExperimentConfig, data: PreparedData) -> Metrics:
    """The same model trained on the pooled training set, evaluated on the test set.

    Gradient-trained models get the total epoch count of the federated run.
    """
    epochs = cfg.model.epochs * max(1, cfg.rounds) if cfg.model.kind == "logreg" else None
    model: Model = model_factory(cfg, data.dataset, epochs)(derive_seed(cfg.seed, TAG_CENTRAL))
    return model.train(data.train).evaluate(data.test)


def mean_metrics(finals: list[Metrics]) -> dict[str, float | None]:
    """Arithmetic mean over runs of each final global metric value."""
    if not finals:
        return {}
    out = {}
    for key in finals[0].values:
        vals = [m.values[key] for m in finals]
        mean = math.fsum(vals) / len(vals)
        out[key] = None if math.isnan(mean) else mean
    return out


def run_experiment(cfg: ExperimentConfig, base_dir: str = ".") -> dict:
    started = time.perf_counter()
    data = prepare_data(cfg, base_dir)
    sensitivity, estimate = estimate_sensitivity(cfg, data)
    access = build_access(cfg, sensitivity)

    all_reports: list[RoundReport] = []
    runs = []
    finals: list[Metrics] = []
    n_runs = cfg.max_runs if cfg.repeat_until_halt else 1
    halted = False
    for run_index in range(n_runs):
        reports = run_once(cfg, data, access, run_index)
        all_reports.extend(reports)
        halted = any(r.halted for r in reports)
        done = [r for r in reports if not r.halted]
        final = done[-1].global_metrics if done else None
        runs.append(
            {
                "run": run_index,
                "completed": not halted,
                "halted": halted,
                "rounds_completed": len(done),
                "final_global": None if final is None else final.to_dict(),
            }
        )
        if not halted and final is not None:
            finals.append(final)
        if halted:
            break

    centralized = centralized_baseline(cfg, data) if cfg.evaluation.centralized_baseline else None
    ledger = None
    if access.private:
        ledger = access.ledger.to_dict()
        ledger["filter"] = None if access.filter is None else access.filter.to_dict()

    return report_mod.build_report(
        config_echo=cfg.to_dict(),
        data_summary={
            "n_rows": len(data.dataset),
            "n_features": data.dataset.n_features,
            "feature_names": list(data.dataset.feature_names or ()),
            "n_train": len(data.train),
            "n_test": len(data.test),
            "n_holdout": len(data.holdout),
            "client_train_sizes": data.partition.sizes,
            "client_test_sizes": data.test_partition.sizes,
            "client_classes": None
            if data.partition.client_classes is None
            else [list(c) for c in data.partition.client_classes],
        },
        sensitivity=None
        if cfg.dp is None
        else {
            "kind": cfg.dp.sensitivity.kind,
            "value": sensitivity,
            "estimate": None if estimate is None else estimate.to_dict(),
        },
        per_round=[r.to_dict() for r in all_reports],
        runs=runs,
        summary={
            "completed_runs": len(finals),
            "mean_global": mean_metrics(finals),
        },
        centralized=None if centralized is None else centralized.to_dict(),
        privacy_ledger=ledger,
        halted=halted,
        wall_time=time.perf_counter() - started,
    )
