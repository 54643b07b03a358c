#!/usr/bin/env python3
"""Тесты базовых моделей: лес, линейная модель, MLP."""

import os
import sys

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from datagen import Dataset
from learners import (
    CLASSIFICATION,
    REGRESSION,
    ForestParams,
    MlpParams,
    class_scores,
    fit_forest,
    fit_linear,
    fit_mlp,
    forward,
    gini_impurity,
    init_network,
    mean_bce,
    network_gradients,
    predict,
    save_model,
    sigmoid,
    variance_impurity,
)
from utils import DataError, UsageError, load_json


@pytest.fixture
def separable():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    return Dataset(features=X, labels=y)


@pytest.fixture
def three_classes():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 2))
    y = np.digitize(X[:, 0], [-0.5, 0.5])
    return Dataset(features=X, labels=y)


def numeric_gradients(weights, X, y, loss, eps=1e-6):
    result = []
    for i, w in enumerate(weights):
        grad = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            plus = [v.copy() for v in weights]
            minus = [v.copy() for v in weights]
            plus[i][idx] += eps
            minus[i][idx] -= eps
            f_plus, _ = network_gradients(plus, X, y, loss)
            f_minus, _ = network_gradients(minus, X, y, loss)
            grad[idx] = (f_plus - f_minus) / (2 * eps)
        result.append(grad)
    return result


def with_random_biases(weights, rng):
    """Ненулевые смещения: без них мёртвые нейроны дают z ровно на изломе ReLU."""
    for i in range(1, len(weights), 2):
        weights[i] = rng.normal(0.0, 0.5, size=weights[i].shape)
    return weights


def away_from_kinks(weights, X, margin=1e-4):
    _, cache, _ = forward(weights, X)
    return all(np.abs(z).min() > margin for _, z in cache)


def relative_gradient_error(weights, X, y, loss):
    _, grads = network_gradients(weights, X, y, loss)
    analytic = np.concatenate([g.ravel() for g in grads])
    numeric = np.concatenate([g.ravel() for g in numeric_gradients(weights, X, y, loss)])
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale

# ===================== НЕЧИСТОТА =====================

def test_gini_impurity():
    assert gini_impurity([5, 3]) == pytest.approx(0.46875)
    assert gini_impurity([4, 0]) == 0.0
    assert gini_impurity([0, 0]) == 0.0
    assert gini_impurity([[5, 3], [1, 1]]).tolist() == pytest.approx([0.46875, 0.5])


def test_variance_impurity():
    # значения 1, 2, 3: count=3, sum=6, sum_sq=14
    assert variance_impurity([3, 6, 14]) == pytest.approx(2 / 3)
    assert variance_impurity([0, 0, 0]) == 0.0


def test_sigmoid_stable():
    values = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert values.tolist() == [0.0, 0.5, 1.0]

# ===================== ЛЕС =====================

def test_forest_fits_separable(separable):
    model = fit_forest(separable, ForestParams(n_trees=20, max_depth=6, seed=3))
    scores = class_scores(model, separable.features)
    assert scores.shape == (200, 2)
    assert np.allclose(scores.sum(axis=1), 1.0)
    assert np.mean(predict(model, separable.features) == separable.labels) > 0.95


def test_forest_separable_with_margin_reaches_full_training_accuracy():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(400, 2))
    X = X[np.abs(X[:, 0] + X[:, 1]) > 0.2][:100]
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    data = Dataset(features=X, labels=y)
    model = fit_forest(data, ForestParams(max_depth=10, seed=42))
    assert np.mean(predict(model, X) == y) == 1.0


def test_forest_deterministic(separable):
    params = ForestParams(n_trees=10, max_depth=4, seed=7)
    first = class_scores(fit_forest(separable, params), separable.features)
    second = class_scores(fit_forest(separable, params), separable.features)
    assert np.array_equal(first, second)


def test_forest_uniform_weights_match_unweighted(separable):
    params = ForestParams(n_trees=5, max_depth=4, seed=11)
    plain = fit_forest(separable, params)
    weighted = fit_forest(separable, params, sample_weight=np.full(200, 2.5))
    assert np.array_equal(class_scores(plain, separable.features),
                          class_scores(weighted, separable.features))


def test_forest_respects_max_depth(three_classes):
    model = fit_forest(three_classes, ForestParams(n_trees=5, max_depth=3, seed=1))
    assert all(tree.depth <= 3 for tree in model.trees)
    assert model.n_classes == 3


def test_forest_regression():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(300, 1))
    y = 3.0 * X[:, 0]
    model = fit_forest(Dataset(features=X, labels=y), ForestParams(n_trees=10, max_depth=8), REGRESSION)
    assert np.mean((model.predict(X) - y) ** 2) < 0.05
    with pytest.raises(UsageError):
        model.class_scores(X)


def test_forest_single_class():
    data = Dataset(features=np.arange(10.0)[:, None], labels=np.ones(10, dtype=int))
    model = fit_forest(data, ForestParams(n_trees=3))
    assert np.all(model.predict(data.features) == 1)


def test_forest_empty_and_bad_input(separable):
    with pytest.raises(DataError):
        fit_forest(Dataset(features=np.zeros((0, 2)), labels=np.zeros(0)), ForestParams(n_trees=2))
    model = fit_forest(separable, ForestParams(n_trees=2, max_depth=2))
    with pytest.raises(UsageError):
        model.class_scores(np.zeros((3, 5)))


@pytest.mark.parametrize("kwargs", [{"n_trees": 0}, {"max_depth": 0}, {"min_samples_split": 1}])
def test_forest_params_validation(kwargs):
    with pytest.raises(UsageError):
        ForestParams(**kwargs)

# ===================== ЛИНЕЙНЫЕ =====================

def test_linear_regression_exact():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 4.0
    model = fit_linear(Dataset(features=X, labels=y), REGRESSION)
    assert model.coef.tolist() == pytest.approx([1.0, -2.0, 0.5])
    assert float(model.intercept) == pytest.approx(4.0)
    assert model.predict(X) == pytest.approx(y)


def test_linear_regression_on_exact_line():
    X = np.arange(10.0)[:, None]
    model = fit_linear(Dataset(features=X, labels=2.0 * X[:, 0]), REGRESSION)
    assert float(model.coef[0]) == pytest.approx(2.0, abs=1e-9)
    assert float(model.intercept) == pytest.approx(0.0, abs=1e-9)
    assert float(model.predict(np.array([[3.0]]))[0]) == pytest.approx(6.0, abs=1e-6)


def test_linear_regression_ignores_row_duplication():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(40, 2))
    y = X @ np.array([0.7, -1.2]) + 0.3 + 0.1 * rng.normal(size=40)
    once = fit_linear(Dataset(features=X, labels=y), REGRESSION)
    twice = fit_linear(Dataset(features=np.vstack([X, X]), labels=np.concatenate([y, y])), REGRESSION)
    assert twice.coef.tolist() == pytest.approx(once.coef.tolist(), abs=1e-12)
    assert float(twice.intercept) == pytest.approx(float(once.intercept), abs=1e-12)


def test_logistic_binary(separable):
    model = fit_linear(separable, CLASSIFICATION)
    assert np.mean(model.predict(separable.features) == separable.labels) > 0.95
    assert not model.coef.flags.writeable


def test_logistic_multiclass(three_classes):
    model = fit_linear(three_classes, CLASSIFICATION)
    scores = model.class_scores(three_classes.features)
    assert scores.shape == (300, 3)
    assert np.allclose(scores.sum(axis=1), 1.0)
    assert np.mean(scores.argmax(axis=1) == three_classes.labels) > 0.85


def test_logistic_seed_irrelevant(separable):
    first = fit_linear(separable, CLASSIFICATION, seed=1).class_scores(separable.features)
    second = fit_linear(separable, CLASSIFICATION, seed=2).class_scores(separable.features)
    assert np.array_equal(first, second)


def test_logistic_single_class_prior():
    data = Dataset(features=np.zeros((4, 1)), labels=np.array([1, 1, 1, 1]))
    model = fit_linear(data, CLASSIFICATION)
    assert model.class_scores(np.zeros((2, 1))).tolist() == [[0.0, 1.0], [0.0, 1.0]]


def test_negative_labels_rejected():
    data = Dataset(features=np.zeros((2, 1)), labels=np.array([-1, 0]))
    with pytest.raises(DataError):
        fit_linear(data, CLASSIFICATION)


def test_unknown_task(separable):
    with pytest.raises(UsageError):
        fit_linear(separable, "ranking")

# ===================== MLP =====================

def test_network_gradients_match_finite_differences():
    checked = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(8, 3))
        y = (rng.random(8) > 0.5).astype(float)
        weights = with_random_biases(init_network(3, 4, 2, rng), rng)
        if not away_from_kinks(weights, X):
            continue
        assert relative_gradient_error(weights, X, y, mean_bce) < 1e-4, f"seed {seed}"
        checked += 1
        if checked == 10:
            break
    assert checked == 10


def test_mlp_learns_separable(separable):
    params = MlpParams(hidden_dim=16, hidden_layers=2, dropout_rate=0.0,
                       epochs=60, learning_rate=0.01, batch_size=32, seed=3)
    model = fit_mlp(separable, params)
    assert np.mean(model.predict(separable.features) == separable.labels) > 0.9
    assert np.allclose(model.class_scores(separable.features).sum(axis=1), 1.0)


def test_mlp_learns_xor():
    rng = np.random.default_rng(12)
    corners = rng.choice([-1.0, 1.0], size=(200, 2))
    X = corners + rng.normal(0.0, 0.25, size=(200, 2))
    y = (corners[:, 0] * corners[:, 1] > 0).astype(int)
    params = MlpParams(hidden_dim=16, hidden_layers=2, dropout_rate=0.0,
                       epochs=300, learning_rate=0.01, seed=12)
    model = fit_mlp(Dataset(features=X, labels=y), params)
    assert np.mean(model.predict(X) == y) >= 0.95


def test_mlp_zero_epochs_keeps_seeded_init(separable):
    params = MlpParams(hidden_dim=8, hidden_layers=2, epochs=0, seed=4)
    first = fit_mlp(separable, params).class_scores(separable.features)
    second = fit_mlp(separable, params).class_scores(separable.features)
    assert np.array_equal(first, second)
    weights = init_network(2, 8, 2, np.random.default_rng(4))
    expected = sigmoid(forward(weights, separable.features)[0])
    assert np.allclose(first[:, 1], expected)


def test_mlp_deterministic(separable):
    params = MlpParams(hidden_dim=8, hidden_layers=1, epochs=3, seed=9)
    first = fit_mlp(separable, params).class_scores(separable.features)
    second = fit_mlp(separable, params).class_scores(separable.features)
    assert np.array_equal(first, second)


def test_mlp_rejects_multiclass(three_classes):
    with pytest.raises(UsageError):
        fit_mlp(three_classes, MlpParams(epochs=1))


@pytest.mark.parametrize("kwargs", [{"dropout_rate": 1.0}, {"learning_rate": 0.0}, {"batch_size": 0}])
def test_mlp_params_validation(kwargs):
    with pytest.raises(UsageError):
        MlpParams(**kwargs)

# ===================== СОХРАНЕНИЕ =====================

def test_save_model(tmp_path, separable):
    model = fit_forest(separable, ForestParams(n_trees=2, max_depth=2))
    path = save_model(model, tmp_path / "models" / "forest.json")
    payload = load_json(path)
    assert payload["schema_version"] == 1
    assert payload["kind"] == "forest"
    assert len(payload["trees"]) == 2
    assert payload["n_classes"] == 2
