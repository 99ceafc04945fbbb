"""Experiment configuration: a YAML document parsed into validated dataclasses.

Every validation failure raises ``ConfigError`` carrying the dotted path of the
offending field (``dp.delta``, ``aggregator.k``, ...).
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any

import yaml


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


@dataclass
class CsvSource:
    path: str
    label_column: str | int
    feature_columns: list[str | int] | None = None


@dataclass
class SyntheticSource:
    kind: str  # "regression" | "blobs"
    seed: int
    n: int | None = None
    n_features: int | None = None
    coefficients: list[float] | None = None
    noise_sd: float = 0.0
    n_per_cluster: int | None = None
    centers: list[list[float]] | None = None
    spread_sd: float = 1.0


@dataclass
class DatasetConfig:
    csv: CsvSource | None = None
    synthetic: SyntheticSource | None = None


@dataclass
class SplitConfig:
    train_fraction: float = 0.8
    holdout_rows: int = 0


@dataclass
class PartitionConfig:
    kind: str = "iid"
    percent: float = 100.0
    labels_per_client: int | None = None


@dataclass
class ModelConfig:
    kind: str = "linreg"
    step: float = 0.1
    epochs: int = 5
    k: int | None = None
    n_classes: int | None = None


@dataclass
class AggregatorConfig:
    kind: str = "fedavg"
    weighting: str = "uniform"
    k: int | None = None
    schedule: list[list[int]] | None = None
    schedule_file: str | None = None
    initial_age: int = 0


@dataclass
class SensitivityConfig:
    kind: str = "fixed"
    value: float | None = None
    n: int = 4000
    gamma: float = 0.05
    record_count: int | None = None
    norm: str | None = None


@dataclass
class DpConfig:
    mechanism: str
    epsilon: float
    delta: float | None
    sensitivity: SensitivityConfig


@dataclass
class BudgetConfig:
    filter: str = "basic"
    eps_g: float = 1.0
    delta_g: float = 0.0
    charge: str = "per_round"


@dataclass
class EvaluationConfig:
    global_test: bool = False
    centralized_baseline: bool = False


@dataclass
class ExperimentConfig:
    seed: int
    dataset: DatasetConfig
    split: SplitConfig = field(default_factory=SplitConfig)
    n_clients: int = 5
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    rounds: int = 1
    dp: DpConfig | None = None
    budget: BudgetConfig | None = None
    repeat_until_halt: bool = False
    max_runs: int = 1000
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    workers: int = 1

    def to_dict(self) -> dict:
        """The resolved config with defaults expanded; parses back to an equal config."""
        d = asdict(self)
        syn = d["dataset"]["synthetic"]
        if syn is not None:
            _keep(syn, _ECHO_KEYS["synthetic"][syn["kind"]])
        _keep(d["partition"], _ECHO_KEYS["partition"][d["partition"]["kind"]])
        _keep(d["model"], _ECHO_KEYS["model"][d["model"]["kind"]])
        agg = d["aggregator"]
        _keep(agg, _ECHO_KEYS["aggregator"][agg["kind"]])
        if d["dp"] is not None:
            sens = d["dp"]["sensitivity"]
            _keep(sens, _ECHO_KEYS["sensitivity"][sens["kind"]])
        return _drop_none(d)


# Fields that apply to each variant; the rest are left out of the echo.
_ECHO_KEYS = {
    "synthetic": {
        "regression": ("kind", "seed", "n", "n_features", "coefficients", "noise_sd"),
        "blobs": ("kind", "seed", "n_per_cluster", "centers", "spread_sd"),
    },
    "partition": {"iid": ("kind", "percent"), "label_skew": ("kind", "labels_per_client")},
    "model": {
        "linreg": ("kind",),
        "logreg": ("kind", "step", "epochs", "n_classes"),
        "kmeans": ("kind", "k"),
    },
    # a coop schedule is echoed inline, already resolved from its file
    "aggregator": {
        "fedavg": ("kind", "weighting"),
        "cluster": ("kind", "k"),
        "coop": ("kind", "schedule", "initial_age"),
    },
    "sensitivity": {
        "fixed": ("kind", "value", "norm"),
        "sampled": ("kind", "n", "gamma", "record_count", "norm"),
    },
}


def _keep(d: dict, keys) -> None:
    for k in list(d):
        if k not in keys:
            del d[k]


def _drop_none(node):
    if isinstance(node, dict):
        return {k: _drop_none(v) for k, v in node.items() if v is not None}
    return node


# -- typed field readers -----------------------------------------------------

_MISSING = object()


class _Section:
    """Reads typed fields from one mapping and rejects unknown keys."""

    def __init__(self, raw: Any, path: str):
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(path, "expected a mapping")
        self.raw = raw
        self.path = path
        self.used: set[str] = set()

    def sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, default: Any = _MISSING) -> Any:
        self.used.add(key)
        if key not in self.raw or self.raw[key] is None:
            if default is _MISSING:
                raise ConfigError(self.sub(key), "required field is missing")
            return default
        return self.raw[key]

    def has(self, key: str) -> bool:
        return self.raw.get(key) is not None

    def integer(self, key, default=_MISSING, minimum=None) -> int | None:
        v = self.get(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(self.sub(key), f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise ConfigError(self.sub(key), f"must be >= {minimum}, got {v}")
        return v

    def number(self, key, default=_MISSING) -> float | None:
        v = self.get(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(self.sub(key), f"expected a finite number, got {v!r}")
        return float(v)

    def boolean(self, key, default=_MISSING) -> bool:
        v = self.get(key, default)
        if not isinstance(v, bool):
            raise ConfigError(self.sub(key), f"expected true or false, got {v!r}")
        return v

    def choice(self, key, options, default=_MISSING) -> str:
        v = self.get(key, default)
        if v not in options:
            raise ConfigError(self.sub(key), f"must be one of {list(options)}, got {v!r}")
        return v

    def done(self) -> None:
        extra = sorted(set(self.raw) - self.used)
        if extra:
            raise ConfigError(self.sub(extra[0]), "unknown field")


def _dataset(raw, seed: int) -> DatasetConfig:
    s = _Section(raw, "dataset")
    if s.has("csv") == s.has("synthetic"):
        raise ConfigError("dataset", "exactly one of 'csv' or 'synthetic' is required")
    if s.has("csv"):
        c = _Section(s.get("csv"), "dataset.csv")
        path = c.get("path")
        if not isinstance(path, str):
            raise ConfigError("dataset.csv.path", "expected a file path")
        label = c.get("label_column")
        if not isinstance(label, (str, int)) or isinstance(label, bool):
            raise ConfigError("dataset.csv.label_column", "expected a column name or index")
        cols = c.get("feature_columns", None)
        if cols is not None and not (isinstance(cols, list) and cols):
            raise ConfigError("dataset.csv.feature_columns", "expected a non-empty list")
        c.done()
        s.done()
        return DatasetConfig(csv=CsvSource(path, label, cols))
    g = _Section(s.get("synthetic"), "dataset.synthetic")
    kind = g.choice("kind", ("regression", "blobs"))
    src = SyntheticSource(kind=kind, seed=g.integer("seed", seed, minimum=0))
    if kind == "regression":
        src.n = g.integer("n", minimum=1)
        src.n_features = g.integer("n_features", minimum=1)
        coefs = g.get("coefficients")
        if not isinstance(coefs, list) or len(coefs) != src.n_features + 1:
            raise ConfigError(
                "dataset.synthetic.coefficients",
                f"expected a list of {src.n_features + 1} numbers (intercept last)",
            )
        src.coefficients = [float(v) for v in coefs]
        src.noise_sd = g.number("noise_sd", 0.0)
        if src.noise_sd < 0:
            raise ConfigError("dataset.synthetic.noise_sd", "must be nonnegative")
    else:
        src.n_per_cluster = g.integer("n_per_cluster", minimum=1)
        centers = g.get("centers")
        if (
            not isinstance(centers, list)
            or not centers
            or not all(isinstance(c, list) and len(c) == len(centers[0]) and c for c in centers)
        ):
            raise ConfigError(
                "dataset.synthetic.centers", "expected a non-empty list of equal-length vectors"
            )
        src.centers = [[float(v) for v in c] for c in centers]
        src.spread_sd = g.number("spread_sd", 1.0)
        if src.spread_sd < 0:
            raise ConfigError("dataset.synthetic.spread_sd", "must be nonnegative")
    g.done()
    s.done()
    return DatasetConfig(synthetic=src)


def _sensitivity(raw, mechanism: str) -> SensitivityConfig:
    s = _Section(raw, "dp.sensitivity")
    kind = s.choice("kind", ("fixed", "sampled"))
    expected_norm = "l1" if mechanism == "laplace" else "l2"
    cfg = SensitivityConfig(kind=kind, norm=s.choice("norm", ("l1", "l2"), expected_norm))
    if cfg.norm != expected_norm:
        raise ConfigError(
            "dp.sensitivity.norm", f"the {mechanism} mechanism needs {expected_norm} sensitivity"
        )
    if kind == "fixed":
        cfg.value = s.number("value")
        if cfg.value < 0:
            raise ConfigError("dp.sensitivity.value", "must be nonnegative")
    else:
        cfg.n = s.integer("n", 4000, minimum=1)
        cfg.gamma = s.number("gamma", 0.05)
        if not 0 < cfg.gamma < 1:
            raise ConfigError("dp.sensitivity.gamma", "must lie in (0, 1)")
        cfg.record_count = s.integer("record_count", None, minimum=2)
    s.done()
    return cfg


def _dp(raw) -> DpConfig:
    s = _Section(raw, "dp")
    mechanism = s.choice("mechanism", ("laplace", "gaussian"))
    epsilon = s.number("epsilon")
    if not epsilon > 0:
        raise ConfigError("dp.epsilon", "must be positive")
    if mechanism == "gaussian":
        if not s.has("delta"):
            raise ConfigError("dp.delta", "the gaussian mechanism requires delta")
        delta = s.number("delta")
        if not 0 < delta < 1:
            raise ConfigError("dp.delta", "must lie in (0, 1)")
        if not epsilon < 1:
            raise ConfigError("dp.epsilon", "the gaussian mechanism requires epsilon < 1")
    else:
        delta = s.number("delta", None)
        if delta not in (None, 0.0):
            raise ConfigError("dp.delta", "the laplace mechanism is pure epsilon-DP; omit delta")
    sens = _sensitivity(s.get("sensitivity"), mechanism)
    s.done()
    return DpConfig(mechanism, epsilon, delta, sens)


def _budget(raw) -> BudgetConfig:
    s = _Section(raw, "budget")
    cfg = BudgetConfig(
        filter=s.choice("filter", ("basic", "advanced"), "basic"),
        eps_g=s.number("eps_g"),
        delta_g=s.number("delta_g", 0.0),
        charge=s.choice("charge", ("per_read", "per_round"), "per_round"),
    )
    if not cfg.eps_g > 0:
        raise ConfigError("budget.eps_g", "must be positive")
    if cfg.filter == "advanced" and not 0 < cfg.delta_g < 1 / math.e:
        raise ConfigError("budget.delta_g", "the advanced filter requires delta_g in (0, 1/e)")
    if cfg.delta_g < 0:
        raise ConfigError("budget.delta_g", "must be nonnegative")
    s.done()
    return cfg


def _schedule(value, path: str) -> list[list[int]]:
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of [client_id, age] pairs")
    out = []
    for i, item in enumerate(value):
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in item)
        ):
            raise ConfigError(f"{path}[{i}]", "expected [client_id, age] with nonnegative integers")
        out.append([int(item[0]), int(item[1])])
    return out


def parse_config(raw: Any, base_dir: str = ".") -> ExperimentConfig:
    """Validate a decoded YAML document. Relative paths resolve against ``base_dir``."""
    top = _Section(raw, "")
    seed = top.integer("seed", minimum=0)
    dataset = _dataset(top.get("dataset"), seed)

    sp = _Section(top.get("split", None), "split")
    split = SplitConfig(sp.number("train_fraction", 0.8), sp.integer("holdout_rows", 0, minimum=0))
    if not 0 < split.train_fraction < 1:
        raise ConfigError("split.train_fraction", "must lie strictly in (0, 1)")
    sp.done()

    n_clients = top.integer("n_clients", 5, minimum=1)

    pt = _Section(top.get("partition", None), "partition")
    partition = PartitionConfig(kind=pt.choice("kind", ("iid", "label_skew"), "iid"))
    if partition.kind == "iid":
        partition.percent = pt.number("percent", 100.0)
        if not 0 < partition.percent <= 100:
            raise ConfigError("partition.percent", "must lie in (0, 100]")
    else:
        partition.labels_per_client = pt.integer("labels_per_client", minimum=1)
    pt.done()

    md = _Section(top.get("model", None), "model")
    model = ModelConfig(kind=md.choice("kind", ("linreg", "logreg", "kmeans"), "linreg"))
    if model.kind == "logreg":
        model.step = md.number("step", 0.1)
        if not model.step > 0:
            raise ConfigError("model.step", "must be positive")
        model.epochs = md.integer("epochs", 5, minimum=1)
        model.n_classes = md.integer("n_classes", None, minimum=2)
    elif model.kind == "kmeans":
        model.k = md.integer("k", minimum=1)
    md.done()

    ag = _Section(top.get("aggregator", None), "aggregator")
    aggregator = AggregatorConfig(kind=ag.choice("kind", ("fedavg", "cluster", "coop"), "fedavg"))
    if aggregator.kind == "fedavg":
        aggregator.weighting = ag.choice("weighting", ("uniform", "by_samples"), "uniform")
    elif aggregator.kind == "cluster":
        if model.kind != "kmeans":
            raise ConfigError("aggregator.kind", "the cluster aggregator requires a kmeans model")
        aggregator.k = ag.integer("k", model.k, minimum=1)
        if aggregator.k != model.k:
            raise ConfigError("aggregator.k", f"must equal model.k ({model.k})")
    else:
        if ag.has("schedule") == ag.has("schedule_file"):
            raise ConfigError("aggregator.schedule", "give exactly one of schedule or schedule_file")
        if ag.has("schedule"):
            aggregator.schedule = _schedule(ag.get("schedule"), "aggregator.schedule")
        else:
            aggregator.schedule_file = ag.get("schedule_file")
            path = os.path.join(base_dir, aggregator.schedule_file)
            try:
                with open(path) as fh:
                    loaded = yaml.safe_load(fh)
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError("aggregator.schedule_file", f"cannot read schedule: {exc}") from None
            aggregator.schedule = _schedule(loaded, "aggregator.schedule_file")
        aggregator.initial_age = ag.integer("initial_age", 0, minimum=0)
        for i, (cid, _) in enumerate(aggregator.schedule):
            if cid >= n_clients:
                raise ConfigError(f"aggregator.schedule[{i}]", f"client id {cid} >= n_clients")
    ag.done()

    rounds = top.integer("rounds", 1, minimum=0)
    dp = _dp(top.get("dp")) if top.has("dp") else None
    top.used.add("dp")
    budget = _budget(top.get("budget")) if top.has("budget") else None
    top.used.add("budget")
    if budget is not None and dp is None:
        raise ConfigError("budget", "a privacy budget needs a dp mechanism to charge")
    if dp is not None and dp.sensitivity.kind == "sampled" and split.holdout_rows == 0:
        raise ConfigError(
            "dp.sensitivity", "sampled sensitivity draws from the holdout; set split.holdout_rows"
        )
    repeat = top.boolean("repeat_until_halt", False)
    if repeat and budget is None:
        raise ConfigError("repeat_until_halt", "requires a budget that can halt")
    max_runs = top.integer("max_runs", 1000, minimum=1)

    ev = _Section(top.get("evaluation", None), "evaluation")
    evaluation = EvaluationConfig(
        ev.boolean("global_test", False), ev.boolean("centralized_baseline", False)
    )
    ev.done()
    workers = top.integer("workers", 1, minimum=1)
    top.done()

    return ExperimentConfig(
        seed=seed,
        dataset=dataset,
        split=split,
        n_clients=n_clients,
        partition=partition,
        model=model,
        aggregator=aggregator,
        rounds=rounds,
        dp=dp,
        budget=budget,
        repeat_until_halt=repeat,
        max_runs=max_runs,
        evaluation=evaluation,
        workers=workers,
    )


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("", f"config {path} is not valid YAML: {exc}") from None
    if seed_override is not None:
        if not isinstance(raw, dict):
            raise ConfigError("", "expected a mapping at the top level")
        raw = {**raw, "seed": seed_override}
    return parse_config(raw, os.path.dirname(os.path.abspath(path)))
