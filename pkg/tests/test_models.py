import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fedsim.data import SplitSpec, split, synthesize_blobs, synthesize_regression
from fedsim.models import (
    KMeans,
    LinearRegression,
    LogisticRegression,
    Metrics,
    ParamVector,
    ShapeError,
    assign_nearest,
    classification_metrics,
    lloyd,
    max_stable_step,
    pool_metrics,
    regression_metrics,
)

from .conftest import make_dataset


class TestParamVector:
    def test_shape_tag_consistency(self):
        ParamVector(np.zeros(6), ("kmeans", 3, 2))
        with pytest.raises(ShapeError):
            ParamVector(np.zeros(5), ("kmeans", 3, 2))

    def test_compatibility(self):
        a = ParamVector(np.zeros(3), ("linreg", 3))
        assert a.compatible(ParamVector(np.ones(3), ("linreg", 3)))
        assert not a.compatible(ParamVector(np.ones(3), ("logreg", 1, 3)))

    def test_immutable(self):
        p = ParamVector(np.zeros(3), ("linreg", 3))
        with pytest.raises(ValueError):
            p.values[0] = 1.0


class TestLinearRegression:
    def test_exact_line(self):
        ds = make_dataset([[0.0], [1.0], [2.0], [5.0]], [1.0, 3.0, 5.0, 11.0])
        m = LinearRegression(1).train(ds)
        np.testing.assert_allclose(m.get_params().values, [2.0, 1.0], atol=1e-9)

    def test_layout_and_predict(self):
        m = LinearRegression(1)
        m.set_params(ParamVector(np.array([2.0, 1.0]), ("linreg", 2)))
        assert m.predict(np.array([[3.0]]))[0] == 7.0
        assert len(LinearRegression(4).get_params()) == 5

    def test_wrong_shape(self):
        with pytest.raises(ShapeError):
            LinearRegression(2).set_params(ParamVector(np.zeros(4), ("linreg", 4)))
        with pytest.raises(ShapeError):
            LinearRegression(2).train(make_dataset([[1.0]], [1.0]))

    def test_singular_gram_uses_ridge(self):
        x = np.column_stack([np.arange(6.0), np.arange(6.0)])
        m = LinearRegression(2).train(make_dataset(x, 3 * np.arange(6.0) + 1))
        assert np.all(np.isfinite(m.get_params().values))
        np.testing.assert_allclose(m.predict(x), 3 * np.arange(6.0) + 1, atol=1e-4)

    def test_residual_orthogonality(self):
        ds = synthesize_regression(2000, 3, [1.0, -2.0, 0.5, 4.0], 0.3, seed=1)
        beta = LinearRegression(3).train(ds).get_params().values
        x = np.column_stack([ds.features, np.ones(len(ds))])
        grad = x.T @ (ds.labels - x @ beta)
        assert np.abs(grad).max() <= 1e-6 * np.abs(x.T @ ds.labels).max()

    def test_california_centralized(self, california):
        train, test, _ = split(california, SplitSpec(0.8, 2000), seed=1234)
        met = LinearRegression(2).train(train).evaluate(test)
        assert abs(met["rmse"] - 0.8154) <= 0.02
        assert abs(met["r2"] - 0.5019) <= 0.02


class TestMetrics:
    def test_perfect_predictor(self):
        m = regression_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert m["rmse"] == 0.0 and m["r2"] == 1.0

    def test_mean_predictor(self):
        y = np.array([1.0, 2.0, 6.0])
        assert regression_metrics(y, np.full(3, y.mean()))["r2"] == pytest.approx(0.0, abs=1e-15)

    def test_constant_labels(self):
        m = regression_metrics([2.0, 2.0], [2.0, 1.0])
        assert math.isnan(m["r2"]) and "r2" in m.notes
        assert m.to_dict()["values"]["r2"] is None

    def test_confusion_totals(self):
        m = classification_metrics([0, 1, 1, 2], [0, 1, 2, 2], 3, loss=0.3)
        assert m.confusion.sum() == m.n_samples == 4
        assert m["accuracy"] == 0.75
        assert (m.confusion >= 0).all()

    def test_pool_confusion_not_mean_of_rates(self):
        a = classification_metrics([0, 1], [0, 1], 2, 0.0)
        b = classification_metrics([0, 1], [1, 0], 2, 0.0)
        pooled = pool_metrics([a, b])
        np.testing.assert_array_equal(pooled.confusion, [[1, 1], [1, 1]])
        assert pooled["accuracy"] == 0.5
        c = classification_metrics([0, 0, 0, 0], [0, 0, 0, 0], 2, 0.0)
        assert pool_metrics([b, c])["accuracy"] == pytest.approx(4 / 6)

    @settings(max_examples=50, deadline=None)
    @given(
        y=hnp.arrays(np.float64, st.integers(4, 60), elements=st.floats(-100, 100)),
        noise=st.floats(0.01, 5.0),
        cuts=st.lists(st.integers(1, 59), min_size=0, max_size=4),
    )
    def test_regression_pooling_matches_whole(self, y, noise, cuts):
        pred = y + noise * np.cos(np.arange(len(y)))
        bounds = sorted({c for c in cuts if c < len(y)})
        pieces = np.split(np.arange(len(y)), bounds)
        whole = regression_metrics(y, pred)
        pooled = pool_metrics([regression_metrics(y[p], pred[p]) for p in pieces])
        assert pooled.n_samples == whole.n_samples
        assert pooled["rmse"] == pytest.approx(whole["rmse"], rel=1e-9, abs=1e-12)
        if math.isnan(whole["r2"]):
            assert math.isnan(pooled["r2"])
        else:
            assert pooled["r2"] == pytest.approx(whole["r2"], rel=1e-7, abs=1e-9)

    def test_pool_rejects_mixed_kinds(self):
        with pytest.raises(ValueError):
            pool_metrics([regression_metrics([1.0, 2.0], [1.0, 2.0]),
                          classification_metrics([0], [0], 2, 0.0)])


class TestLogisticRegression:
    def test_zero_params_half_probability(self):
        m = LogisticRegression(3)
        np.testing.assert_array_equal(m.predict_proba(np.random.default_rng(0).normal(size=(5, 3))), 0.5)

    def test_separable_two_points(self):
        ds = make_dataset([[-1.0], [1.0]], [0, 1])
        m = LogisticRegression(1, step=0.1, epochs=500).train(ds)
        assert m.evaluate(ds)["accuracy"] == 1.0

    def test_loss_non_increasing_at_stable_step(self):
        ds = synthesize_blobs(100, [[0, 0], [2, 1], [1, 3]], 1.0, seed=2)
        step = max_stable_step(ds.features)
        m = LogisticRegression(2, n_classes=3, step=step, epochs=200)
        m.train(ds)
        hist = np.array(m.loss_history)
        assert len(hist) == 201
        assert np.all(np.diff(hist) <= 1e-12)

    def test_multiclass_shape(self):
        m = LogisticRegression(2, n_classes=4)
        assert m.shape_tag == ("logreg", 4, 3)
        assert len(m.get_params()) == 12

    def test_training_accumulates_across_calls(self):
        ds = synthesize_blobs(50, [[0, 0], [3, 3]], 1.0, seed=0)
        a = LogisticRegression(2, epochs=10).train(ds)
        b = LogisticRegression(2, epochs=5)
        b.train(ds)
        b.train(ds)
        np.testing.assert_allclose(a.get_params().values, b.get_params().values)

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ValueError):
            LogisticRegression(1, n_classes=2).train(make_dataset([[0.0], [1.0]], [0, 2]))


class TestKMeans:
    def test_zero_spread_recovers_centers(self):
        ds = synthesize_blobs(20, [[0, 0], [10, 10]], 0.0, seed=0)
        m = KMeans(2, 2, seed=3).train(ds)
        np.testing.assert_array_equal(
            np.sort(m.get_params().structured(), axis=0), [[0, 0], [10, 10]]
        )
        assert m.evaluate(ds)["within_sse"] == 0.0

    def test_tie_goes_to_lowest_index(self):
        labels, _ = assign_nearest(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert labels[0] == 0

    def test_sse_non_increasing_and_fixed_point(self):
        ds = synthesize_blobs(80, [[0, 0], [3, 0], [0, 3], [3, 3]], 1.2, seed=4)
        pts = ds.features
        init = pts[:4].copy()
        res = lloyd(pts, init)
        assert np.all(np.diff(res.sse_history) <= 1e-9)
        again = lloyd(pts, res.centroids, max_iter=5)
        np.testing.assert_array_equal(again.centroids, res.centroids)

    def test_empty_cluster_repair(self):
        pts = np.array([[0.0], [1.0], [10.0], [11.0]])
        res = lloyd(pts, np.array([[0.0], [100.0], [200.0]]))
        assert len(np.unique(res.labels)) == 3

    def test_deterministic_seed(self):
        ds = synthesize_blobs(30, [[0, 0], [5, 5], [0, 5]], 1.0, seed=1)
        a = KMeans(2, 3, seed=7).train(ds).get_params().values
        b = KMeans(2, 3, seed=7).train(ds).get_params().values
        assert a.tobytes() == b.tobytes()


def _models_and_data():
    reg = synthesize_regression(60, 2, [1.0, -1.0, 0.5], 0.2, seed=0)
    blobs = synthesize_blobs(30, [[0, 0], [3, 0], [0, 3]], 1.0, seed=0)
    return [
        (LinearRegression(2).train(reg), reg),
        (LogisticRegression(2, n_classes=3, epochs=20).train(blobs), blobs),
        (KMeans(2, 3, seed=1).train(blobs), blobs),
    ]


@pytest.mark.parametrize("model,ds", _models_and_data(), ids=["linreg", "logreg", "kmeans"])
def test_get_set_round_trip(model, ds):
    before = model.predict(ds.features)
    p = model.get_params()
    model.set_params(p)
    np.testing.assert_array_equal(model.predict(ds.features), before)
    fresh = type(model).__new__(type(model))
    fresh.__dict__.update(model.__dict__)
    fresh.set_params(p)
    np.testing.assert_array_equal(fresh.predict(ds.features), before)


def test_metrics_dict_excludes_stats():
    d = regression_metrics([1.0, 2.0], [1.5, 2.0]).to_dict()
    assert set(d) == {"kind", "n_samples", "values"}
    assert isinstance(Metrics("clustering", 1, {"within_sse": 0.0}).to_dict(), dict)
