"""Trainable models that exchange their state as flat parameter vectors.

Parameter layouts are frozen because aggregation operates on them directly:

* ``LinearRegression``: ``[w_1, ..., w_d, intercept]`` (length d+1).
* ``LogisticRegression``: one row ``[w_1, ..., w_d, intercept]`` per one-vs-rest
  classifier, flattened row-major. Binary problems use a single row.
* ``KMeans``: the k centroids, flattened row-major (k*d values).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset

RIDGE_LAMBDA = 1e-8
CONDITION_LIMIT = 1e12
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-9


class ShapeError(ValueError):
    """Parameter vector or feature matrix does not match the model."""


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    shape_tag: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape_tag", tuple(self.shape_tag))
        expected = int(np.prod(self.shape_tag[1:])) if len(self.shape_tag) > 1 else None
        if expected is not None and expected != values.size:
            raise ShapeError(
                f"shape tag {self.shape_tag} implies {expected} values, got {values.size}"
            )

    def __len__(self) -> int:
        return self.values.size

    def compatible(self, other: ParamVector) -> bool:
        return self.shape_tag == other.shape_tag

    def with_values(self, values) -> ParamVector:
        return ParamVector(values, self.shape_tag)

    def structured(self) -> np.ndarray:
        """Values reshaped to the tag's dimensions."""
        return self.values.reshape(self.shape_tag[1:])


@dataclass
class Metrics:
    """Evaluation results for one dataset.

    ``values`` holds the reported numbers. ``stats`` carries the sufficient
    statistics needed to pool metrics across clients exactly (see
    :func:`pool_metrics`); it never contains per-sample data.
    """

    kind: str
    n_samples: int
    values: dict[str, float]
    confusion: np.ndarray | None = None
    notes: dict[str, str] = field(default_factory=dict)
    stats: dict[str, float] = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "n_samples": int(self.n_samples),
            "values": {k: (None if math.isnan(v) else float(v)) for k, v in self.values.items()},
        }
        if self.confusion is not None:
            out["confusion"] = self.confusion.astype(int).tolist()
        if self.notes:
            out["notes"] = dict(self.notes)
        return out


def _regression_metrics(sse: float, n: int, y_mean: float, y_m2: float) -> Metrics:
    rmse = math.sqrt(sse / n)
    notes = {}
    if y_m2 == 0.0:
        r2 = float("nan")
        notes["r2"] = "undefined: labels are constant, total sum of squares is zero"
    else:
        r2 = 1.0 - sse / y_m2
    return Metrics(
        kind="regression",
        n_samples=n,
        values={"rmse": rmse, "r2": r2},
        notes=notes,
        stats={"sse": sse, "y_mean": y_mean, "y_m2": y_m2},
    )


def regression_metrics(y_true, y_pred) -> Metrics:
    y = np.asarray(y_true, dtype=float)
    resid = np.asarray(y_pred, dtype=float) - y
    n = y.size
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if np.all(y == y[0]):
        # exact zero rather than a rounding residue from the mean
        y_mean, y_m2 = float(y[0]), 0.0
    else:
        y_mean = float(y.mean())
        y_m2 = float(((y - y_mean) ** 2).sum())
    return _regression_metrics(float(resid @ resid), n, y_mean, y_m2)


def classification_metrics(y_true, y_pred, n_classes: int, loss: float) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    n = y_true.size
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    return Metrics(
        kind="classification",
        n_samples=n,
        values={"accuracy": float(np.trace(confusion)) / n, "loss": float(loss)},
        confusion=confusion,
        stats={"loss_sum": float(loss) * n},
    )


def pool_metrics(parts: list[Metrics]) -> Metrics:
    """Combine per-shard metrics into the metrics of the pooled data.

    Regression pools squared errors and label moments (Chan's parallel
    update), classification sums confusion matrices, clustering sums the
    within-cluster SSE. Per-shard rates are never averaged.
    """
    if not parts:
        raise ValueError("nothing to pool")
    kinds = {p.kind for p in parts}
    if len(kinds) != 1:
        raise ValueError(f"cannot pool metrics of different kinds: {sorted(kinds)}")
    kind = kinds.pop()
    n = sum(p.n_samples for p in parts)
    if kind == "regression":
        sse = math.fsum(p.stats["sse"] for p in parts)
        first = parts[0].stats
        count, mean, m2 = parts[0].n_samples, first["y_mean"], first["y_m2"]
        for p in parts[1:]:
            nb, mb, m2b = p.n_samples, p.stats["y_mean"], p.stats["y_m2"]
            delta = mb - mean
            total = count + nb
            mean += delta * nb / total
            m2 += m2b + delta * delta * count * nb / total
            count = total
        return _regression_metrics(sse, n, mean, m2)
    if kind == "classification":
        confusion = sum(p.confusion for p in parts)
        loss = math.fsum(p.stats["loss_sum"] for p in parts) / n
        return Metrics(
            kind=kind,
            n_samples=n,
            values={"accuracy": float(np.trace(confusion)) / n, "loss": loss},
            confusion=confusion,
            stats={"loss_sum": loss * n},
        )
    sse = math.fsum(p.values["within_sse"] for p in parts)
    return Metrics(kind=kind, n_samples=n, values={"within_sse": sse})


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


class Model:
    """Common surface: ``train``, ``predict``, ``evaluate``, ``get_params``, ``set_params``."""

    kind: str = ""

    def _check_features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.n_features) if self.n_features == 1 else x.reshape(1, -1)
        if x.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, got {x.shape[1]}")
        return x

    def _check_dataset(self, ds: LabeledDataset) -> None:
        if len(ds) == 0:
            raise ValueError("dataset is empty")
        self._check_features(ds.features[:1])

    @property
    def shape_tag(self) -> tuple:
        raise NotImplementedError

    def _flat(self) -> np.ndarray:
        raise NotImplementedError

    def _load(self, values: np.ndarray) -> None:
        raise NotImplementedError

    def get_params(self) -> ParamVector:
        return ParamVector(self._flat(), self.shape_tag)

    def set_params(self, params: ParamVector) -> None:
        if params.shape_tag != self.shape_tag:
            raise ShapeError(f"parameter shape {params.shape_tag} does not match {self.shape_tag}")
        self._load(np.array(params.values))


class LinearRegression(Model):
    """Ordinary least squares solved in closed form from the normal equations."""

    kind = "linreg"

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.coef = np.zeros(n_features + 1)

    @property
    def shape_tag(self) -> tuple:
        return ("linreg", self.n_features + 1)

    def _flat(self):
        return self.coef.copy()

    def _load(self, values):
        self.coef = values

    def train(self, ds: LabeledDataset) -> LinearRegression:
        self._check_dataset(ds)
        a = _augment(ds.features)
        gram = a.T @ a
        rhs = a.T @ np.asarray(ds.labels, dtype=float)
        # ridge fallback only for numerically singular systems
        if np.linalg.cond(gram) > CONDITION_LIMIT:
            gram = gram + RIDGE_LAMBDA * np.eye(gram.shape[0])
        try:
            self.coef = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"normal equations are singular: {exc}") from exc
        return self

    def predict(self, features) -> np.ndarray:
        return _augment(self._check_features(features)) @ self.coef

    def evaluate(self, ds: LabeledDataset) -> Metrics:
        self._check_dataset(ds)
        return regression_metrics(ds.labels, self.predict(ds.features))


def _sigmoid(z):
    # numerically safe for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_loss(z: np.ndarray, targets: np.ndarray) -> float:
    # mean binary cross-entropy from logits: log(1 + e^z) - t*z
    return float(np.mean(np.logaddexp(0.0, z) - targets * z))


def max_stable_step(features) -> float:
    """Step size bound ``4 / L`` with ``L = ||[X, 1]||_2^2 / n``.

    The logistic loss has a ``L / 4``-Lipschitz gradient, so any step at or
    below this bound keeps full-batch gradient descent monotone.
    """
    a = _augment(np.asarray(features, dtype=float))
    lipschitz = np.linalg.norm(a, 2) ** 2 / a.shape[0]
    return 4.0 / lipschitz


class LogisticRegression(Model):
    """Logistic regression fit by full-batch gradient descent, one-vs-rest for >2 classes.

    Each call to :meth:`train` runs ``epochs`` gradient steps starting from the
    current parameters, so repeated federated rounds continue the optimisation.
    It appends ``epochs + 1`` training losses to ``loss_history``: the loss
    before each step and after the last one.
    """

    kind = "logreg"

    def __init__(self, n_features: int, n_classes: int = 2, step: float = 0.1, epochs: int = 5):
        if n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if step <= 0 or epochs < 0:
            raise ValueError("step must be positive and epochs nonnegative")
        self.n_features = n_features
        self.n_classes = n_classes
        self.step = step
        self.epochs = epochs
        self.weights = np.zeros((self._rows, n_features + 1))
        self.loss_history: list[float] = []

    @property
    def _rows(self) -> int:
        return 1 if self.n_classes == 2 else self.n_classes

    @property
    def shape_tag(self) -> tuple:
        return ("logreg", self._rows, self.n_features + 1)

    def _flat(self):
        return self.weights.ravel().copy()

    def _load(self, values):
        self.weights = values.reshape(self._rows, self.n_features + 1)

    def _targets(self, labels) -> np.ndarray:
        y = np.asarray(labels)
        if np.any(y < 0) or np.any(y >= self.n_classes) or np.any(np.rint(y) != y):
            raise ValueError(f"labels must be class indices in [0, {self.n_classes})")
        y = y.astype(np.int64)
        if self.n_classes == 2:
            return y.reshape(-1, 1).astype(float)
        return np.eye(self.n_classes)[y]

    def loss(self, ds: LabeledDataset) -> float:
        z = _augment(self._check_features(ds.features)) @ self.weights.T
        return _log_loss(z, self._targets(ds.labels))

    def train(self, ds: LabeledDataset) -> LogisticRegression:
        self._check_dataset(ds)
        a = _augment(ds.features)
        t = self._targets(ds.labels)
        n = a.shape[0]
        for _ in range(self.epochs):
            z = a @ self.weights.T
            self.loss_history.append(_log_loss(z, t))
            grad = (_sigmoid(z) - t).T @ a / n
            self.weights = self.weights - self.step * grad
        self.loss_history.append(_log_loss(a @ self.weights.T, t))
        return self

    def predict_proba(self, features) -> np.ndarray:
        """Sigmoid scores, shape (n, rows): P(class 1) for binary, per-class OvR otherwise."""
        return _sigmoid(_augment(self._check_features(features)) @ self.weights.T)

    def predict(self, features) -> np.ndarray:
        p = self.predict_proba(features)
        if self.n_classes == 2:
            return (p[:, 0] >= 0.5).astype(np.int64)
        return np.argmax(p, axis=1)

    def evaluate(self, ds: LabeledDataset) -> Metrics:
        self._check_dataset(ds)
        return classification_metrics(
            ds.class_labels(), self.predict(ds.features), self.n_classes, self.loss(ds)
        )


def assign_nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest centroid (lowest index on ties) and the squared distance."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


@dataclass
class LloydResult:
    centroids: np.ndarray
    labels: np.ndarray
    sse_history: list[float]
    n_iter: int
    converged: bool

    @property
    def sse(self) -> float:
        return self.sse_history[-1]


def lloyd(
    points,
    init_centroids,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
) -> LloydResult:
    """Lloyd iterations from the given centroids.

    ``sse_history[t]`` is the within-cluster SSE of the assignment made with the
    centroids at the start of iteration ``t``; the last entry corresponds to the
    returned centroids. A cluster that loses all its points takes over the
    point farthest from its current centroid.
    """
    points = np.asarray(points, dtype=float)
    centroids = np.array(init_centroids, dtype=float)
    k = centroids.shape[0]
    if points.shape[0] < k:
        raise ValueError(f"cannot form {k} clusters from {points.shape[0]} points")
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        labels, d2 = assign_nearest(points, centroids)
        history.append(float(d2.sum()))
        counts = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            movable = counts[labels] > 1
            far = int(np.argmax(np.where(movable, d2, -1.0)))
            counts[labels[far]] -= 1
            labels[far] = empty
            counts[empty] = 1
            d2[far] = 0.0
        new = np.zeros_like(centroids)
        np.add.at(new, labels, points)
        new /= counts[:, None]
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            converged = True
            break
    labels, d2 = assign_nearest(points, centroids)
    history.append(float(d2.sum()))
    return LloydResult(centroids, labels, history, it, converged)


class KMeans(Model):
    """Lloyd k-means. First training seeds from distinct data points; later calls warm-start."""

    kind = "kmeans"

    def __init__(self, n_features: int, k: int, seed: int = 0):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.n_features = n_features
        self.k = k
        self.seed = seed
        self.centroids: np.ndarray | None = None
        self.last_fit: LloydResult | None = None

    @property
    def shape_tag(self) -> tuple:
        return ("kmeans", self.k, self.n_features)

    def _flat(self):
        if self.centroids is None:
            return np.zeros(self.k * self.n_features)
        return self.centroids.ravel().copy()

    def _load(self, values):
        self.centroids = values.reshape(self.k, self.n_features)

    def initial_centroids(self, points: np.ndarray) -> np.ndarray:
        unique = np.unique(points, axis=0)
        if unique.shape[0] < self.k:
            raise ValueError(f"only {unique.shape[0]} distinct points for k={self.k}")
        rng = np.random.default_rng(self.seed)
        return unique[rng.choice(unique.shape[0], size=self.k, replace=False)]

    def train(self, ds: LabeledDataset) -> KMeans:
        self._check_dataset(ds)
        x = ds.features
        init = self.centroids if self.centroids is not None else self.initial_centroids(x)
        self.last_fit = lloyd(x, init)
        self.centroids = self.last_fit.centroids
        return self

    def predict(self, features) -> np.ndarray:
        if self.centroids is None:
            raise ValueError("model has no centroids yet")
        return assign_nearest(self._check_features(features), self.centroids)[0]

    def evaluate(self, ds: LabeledDataset) -> Metrics:
        self._check_dataset(ds)
        if self.centroids is None:
            raise ValueError("model has no centroids yet")
        _, d2 = assign_nearest(ds.features, self.centroids)
        return Metrics(kind="clustering", n_samples=len(ds), values={"within_sse": float(d2.sum())})
