"""
Базовые обучаемые модели на numpy: случайный лес с подключаемой функцией
нечистоты, линейная/логистическая модель и небольшой MLP с подключаемой
функцией потерь.

Обучение однопоточное и детерминированное по seed; обученные модели неизменяемы.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from datagen import Dataset
from utils import DataError, UsageError, save_json

logger = logging.getLogger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASKS = (CLASSIFICATION, REGRESSION)
MODEL_SCHEMA_VERSION = 1


def _check_task(task: str) -> None:
    if task not in TASKS:
        raise UsageError(f"Неизвестная задача '{task}', ожидается одна из {TASKS}")


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def _class_labels(labels) -> np.ndarray:
    """Метки классов как неотрицательные целые."""
    values = np.asarray(labels, dtype=float)
    if values.size and (np.any(values < 0) or np.any(values != np.round(values))):
        raise DataError("Метки классов должны быть неотрицательными целыми")
    return values.astype(int)


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = np.exp(z - z.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def scores_to_labels(scores) -> np.ndarray:
    """argmax по строкам; при равенстве побеждает меньший индекс класса."""
    return np.argmax(np.asarray(scores, dtype=float), axis=1)

# ===================== ФУНКЦИИ НЕЧИСТОТЫ =====================

def gini_impurity(class_counts, group_counts=None) -> np.ndarray:
    """Gini 1 - Σ p_c² по (взвешенным) счётчикам классов; последняя ось - классы."""
    counts = np.asarray(class_counts, dtype=float)
    total = counts.sum(axis=-1)
    safe = np.where(total > 0, total, 1.0)
    p = counts / safe[..., None]
    return np.where(total > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


def variance_impurity(stats, group_stats=None) -> np.ndarray:
    """Дисперсия отклика по статистикам (count, sum, sum_sq)."""
    stats = np.asarray(stats, dtype=float)
    count = stats[..., 0]
    safe = np.where(count > 0, count, 1.0)
    mean = stats[..., 1] / safe
    return np.where(count > 0, np.maximum(stats[..., 2] / safe - mean * mean, 0.0), 0.0)

# ===================== ПАРАМЕТРЫ =====================

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 10
    seed: int = 42
    # impurity(stats, group_stats) -> вектор нечистоты; None = Gini / дисперсия
    impurity: Optional[Callable] = None
    min_samples_split: int = 2

    def __post_init__(self):
        if self.n_trees < 1:
            raise UsageError(f"n_trees должен быть >= 1, получено {self.n_trees}")
        if self.max_depth < 1:
            raise UsageError(f"max_depth должен быть >= 1, получено {self.max_depth}")
        if self.min_samples_split < 2:
            raise UsageError("min_samples_split должен быть >= 2")

    def impurity_for(self, task: str) -> Callable:
        if self.impurity is not None:
            return self.impurity
        return gini_impurity if task == CLASSIFICATION else variance_impurity


def mean_bce(logits, y, rows=None):
    """Средняя бинарная кросс-энтропия по логитам и её градиент по логитам."""
    logits = np.asarray(logits, dtype=float)
    y = np.asarray(y, dtype=float)
    n = logits.shape[0]
    value = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    grad = (sigmoid(logits) - y) / n
    return value, grad


def per_sample_bce(logits, y) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    return np.logaddexp(0.0, logits) - np.asarray(y, dtype=float) * logits


@dataclass(frozen=True)
class MlpParams:
    hidden_dim: int = 64
    hidden_layers: int = 3
    dropout_rate: float = 0.2
    epochs: int = 100
    learning_rate: float = 0.001
    seed: int = 42
    # None = полный батч; число включает мини-батчи
    batch_size: Optional[int] = None
    # loss(logits, y, rows) -> (значение, градиент по логитам); rows - индексы батча в обучающей выборке
    loss: Callable = mean_bce
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise UsageError(f"dropout_rate должен лежать в [0, 1), получено {self.dropout_rate}")
        if not self.learning_rate > 0:
            raise UsageError(f"learning_rate должен быть > 0, получено {self.learning_rate}")
        if self.hidden_dim < 1 or self.hidden_layers < 0:
            raise UsageError("hidden_dim >= 1 и hidden_layers >= 0")
        if self.epochs < 0 or (self.batch_size is not None and self.batch_size < 1):
            raise UsageError("epochs >= 0 и batch_size >= 1 (или None)")

# ===================== МОДЕЛИ =====================

@dataclass(frozen=True, eq=False)
class FittedModel:
    """Общий интерфейс обученной модели. n_classes = 0 у регрессии."""

    task: str
    n_features: int
    n_classes: int

    kind = "base"

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise UsageError(
                f"Модель обучена на {self.n_features} признаках, получена матрица формы {X.shape}"
            )
        return X

    def class_scores(self, X) -> np.ndarray:
        raise NotImplementedError

    def regress(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X, environment=None) -> np.ndarray:
        if self.task == CLASSIFICATION:
            return scores_to_labels(self.class_scores(X))
        return self.regress(X)

    def _require_classification(self) -> None:
        if self.task != CLASSIFICATION:
            raise UsageError(f"class_scores доступны только для классификации, модель: {self.task}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
        }


@dataclass(frozen=True, eq=False)
class Tree:
    """Дерево в виде параллельных массивов; feature = -1 у листьев."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Индексы листьев для строк X (x <= threshold уходит влево)."""
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            current = node[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] >= 0
        return node

    @property
    def depth(self) -> int:
        depth = np.zeros(self.feature.size, dtype=int)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if depth.size else 0

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "value": self.value,
        }


@dataclass(frozen=True, eq=False)
class ForestModel(FittedModel):
    trees: tuple = ()

    kind = "forest"

    def class_scores(self, X) -> np.ndarray:
        self._require_classification()
        X = self._check_input(X)
        total = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            total += tree.value[tree.apply(X)]
        return total / len(self.trees)

    def regress(self, X) -> np.ndarray:
        X = self._check_input(X)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.value[tree.apply(X)]
        return total / len(self.trees)

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["trees"] = [tree.to_dict() for tree in self.trees]
        return data


@dataclass(frozen=True, eq=False)
class LinearModel(FittedModel):
    """
    Регрессия: coef (d,), intercept - число.
    Два класса: сигмоида от X @ coef + intercept (coef (d,)).
    Больше классов: softmax, coef (d, k), intercept (k,).
    prior задан, когда в обучающих данных был один класс.
    """

    coef: Optional[np.ndarray] = None
    intercept: Optional[np.ndarray] = None
    prior: Optional[np.ndarray] = None

    kind = "linear"

    def decision_function(self, X) -> np.ndarray:
        X = self._check_input(X)
        return X @ self.coef + self.intercept

    def class_scores(self, X) -> np.ndarray:
        self._require_classification()
        if self.prior is not None:
            X = self._check_input(X)
            return np.tile(self.prior, (X.shape[0], 1))
        z = self.decision_function(X)
        if self.n_classes == 2:
            p = sigmoid(z)
            return np.column_stack([1.0 - p, p])
        return softmax(z)

    def regress(self, X) -> np.ndarray:
        return self.decision_function(X)

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["coef"] = self.coef
        data["intercept"] = self.intercept
        data["prior"] = self.prior
        return data


@dataclass(frozen=True, eq=False)
class MlpModel(FittedModel):
    """Сеть с ReLU-скрытыми слоями и одним логитом положительного класса."""

    weights: tuple = ()

    kind = "mlp"

    def logits(self, X) -> np.ndarray:
        X = self._check_input(X)
        return forward(list(self.weights), X)[0]

    def class_scores(self, X) -> np.ndarray:
        p = sigmoid(self.logits(X))
        return np.column_stack([1.0 - p, p])

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["weights"] = list(self.weights)
        return data

# ===================== СЛУЧАЙНЫЙ ЛЕС =====================

class _TreeBuilder:
    """Жадный рост одного дерева на бутстреп-выборке."""

    def __init__(self, X, targets, row_stats, row_group_stats, task, n_classes,
                 impurity, max_depth, min_samples_split, n_candidates, rng):
        self.X = X
        self.targets = targets
        self.row_stats = row_stats
        self.row_group_stats = row_group_stats
        self.task = task
        self.n_classes = n_classes
        self.impurity = impurity
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.n_candidates = n_candidates
        self.rng = rng
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def build(self, rows: np.ndarray) -> Tree:
        self._grow(rows, 0)
        return Tree(
            feature=_frozen(self.feature, int),
            threshold=_frozen(self.threshold),
            left=_frozen(self.left, int),
            right=_frozen(self.right, int),
            value=_frozen(np.array(self.value)),
        )

    def _leaf_value(self, rows):
        y = self.targets[rows]
        if self.task == CLASSIFICATION:
            return np.bincount(y, minlength=self.n_classes) / rows.size
        return float(y.mean())

    def _is_pure(self, rows) -> bool:
        y = self.targets[rows]
        return bool(np.all(y == y[0]))

    def _grow(self, rows, depth) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(self._leaf_value(rows))

        if depth >= self.max_depth or rows.size < self.min_samples_split or self._is_pure(rows):
            return node

        split = self._best_split(rows)
        if split is None:
            return node
        feature, threshold = split
        go_left = self.X[rows, feature] <= threshold
        left_rows, right_rows = rows[go_left], rows[~go_left]
        if left_rows.size == 0 or right_rows.size == 0:
            return node

        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = self._grow(left_rows, depth + 1)
        self.right[node] = self._grow(right_rows, depth + 1)
        return node

    def _best_split(self, rows):
        best = None
        evaluated = 0
        for feature in self.rng.permutation(self.X.shape[1]):
            # Если среди первых кандидатов нет допустимого порога, смотрим дальше
            if evaluated >= self.n_candidates and best is not None:
                break
            evaluated += 1
            found = self._scan_feature(rows, int(feature))
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(feature), found[1])
        return None if best is None else best[1:]

    def _scan_feature(self, rows, feature):
        """Лучший порог по середине между соседними различными значениями."""
        x = self.X[rows, feature]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cuts = np.nonzero(xs[1:] > xs[:-1])[0]
        if cuts.size == 0:
            return None

        cumulative = np.cumsum(self.row_stats[rows[order]], axis=0)
        left = cumulative[cuts]
        right = cumulative[-1] - left

        group_left = group_right = None
        if self.row_group_stats is not None:
            group_cumulative = np.cumsum(self.row_group_stats[rows[order]], axis=0)
            group_left = group_cumulative[cuts]
            group_right = group_cumulative[-1] - group_left

        n_left = cuts + 1.0
        n_right = rows.size - n_left
        score = (
            n_left * self.impurity(left, group_left)
            + n_right * self.impurity(right, group_right)
        ) / rows.size

        best = int(np.argmin(score))
        threshold = 0.5 * (xs[cuts[best]] + xs[cuts[best] + 1])
        return float(score[best]), float(threshold)


def _bootstrap_probabilities(sample_weight, n: int):
    """None для равных весов, чтобы бутстреп совпадал с невзвешенным."""
    if sample_weight is None:
        return None
    w = np.asarray(sample_weight, dtype=float)
    if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise UsageError("sample_weight: нужен вектор длины n из неотрицательных конечных чисел с ненулевой суммой")
    if np.all(w == w[0]):
        return None
    return w / w.sum()


def fit_forest(
    data: Dataset,
    params: ForestParams = ForestParams(),
    task: str = CLASSIFICATION,
    *,
    sample_weight=None,
    groups=None,
) -> ForestModel:
    """
    Бэггинг деревьев: каждое дерево растёт на бутстреп-выборке,
    на каждом разбиении перебирается случайное подмножество признаков.

    groups - необязательная матрица принадлежности n×G; её счётчики по
    классам передаются в impurity вторым аргументом.
    """
    _check_task(task)
    X = data.features
    n, d = X.shape
    if n == 0:
        raise DataError("Пустые данные: лес обучить нельзя")

    if task == CLASSIFICATION:
        targets = _class_labels(data.labels)
        n_classes = int(targets.max()) + 1
        row_stats = np.eye(n_classes)[targets]
        n_candidates = math.ceil(math.sqrt(d))
        if np.unique(targets).size == 1:
            logger.warning(f"В обучающих данных один класс ({targets[0]}), лес будет константным")
    else:
        targets = np.asarray(data.labels, dtype=float)
        n_classes = 0
        row_stats = np.column_stack([np.ones(n), targets, targets * targets])
        n_candidates = max(1, math.ceil(d / 3))

    row_group_stats = None
    if groups is not None:
        membership = np.asarray(groups, dtype=float)
        if membership.ndim != 2 or membership.shape[0] != n:
            raise UsageError(f"Матрица групп формы {membership.shape} при {n} строках")
        row_group_stats = membership[:, :, None] * row_stats[:, None, :]

    impurity = params.impurity_for(task)
    probabilities = _bootstrap_probabilities(sample_weight, n)

    trees = []
    for sequence in np.random.SeedSequence(params.seed).spawn(params.n_trees):
        rng = np.random.default_rng(sequence)
        rows = rng.choice(n, size=n, replace=True, p=probabilities)
        builder = _TreeBuilder(
            X, targets, row_stats, row_group_stats, task, n_classes, impurity,
            params.max_depth, params.min_samples_split, n_candidates, rng,
        )
        trees.append(builder.build(rows))

    logger.debug(f"Лес: {params.n_trees} деревьев, {n} строк, {d} признаков, задача {task}")
    return ForestModel(task=task, n_features=d, n_classes=n_classes, trees=tuple(trees))

# ===================== ЛИНЕЙНЫЕ МОДЕЛИ =====================

def _softmax_logit_grad(dscores, P):
    """Градиент по логитам softmax при известном градиенте по вероятностям."""
    return P * (dscores - np.sum(dscores * P, axis=1, keepdims=True))


def _sigmoid_logit_grad(dscores, p):
    """Градиент по логиту при таблице [1 - p, p]."""
    return (dscores[:, 1] - dscores[:, 0]) * p * (1.0 - p)


def _fit_logistic(X, y, n_classes, penalty=None, learning_rate=0.5, tol=1e-8, max_iter=10_000):
    """
    Полнобатчевый градиентный спуск для логистической (softmax) регрессии.
    penalty(scores) -> (значение, градиент по таблице вероятностей).
    """
    n, d = X.shape
    binary = n_classes == 2
    coef = np.zeros(d) if binary else np.zeros((d, n_classes))
    intercept = 0.0 if binary else np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]

    previous = np.inf
    iteration = 0
    for iteration in range(max_iter):
        z = X @ coef + intercept
        if binary:
            p = sigmoid(z)
            scores = np.column_stack([1.0 - p, p])
            loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
            dz = (p - y) / n
        else:
            scores = softmax(z)
            loss = float(-np.mean(np.log(np.maximum(scores[np.arange(n), y], 1e-300))))
            dz = (scores - onehot) / n

        if penalty is not None:
            value, dscores = penalty(scores)
            loss += value
            if binary:
                dz = dz + _sigmoid_logit_grad(dscores, p)
            else:
                dz = dz + _softmax_logit_grad(dscores, scores)

        if abs(previous - loss) < tol:
            break
        previous = loss

        coef = coef - learning_rate * (X.T @ dz)
        intercept = intercept - learning_rate * dz.sum(axis=0)

    logger.debug(f"Логистическая регрессия: {iteration + 1} итераций, loss={previous:.6f}")
    return coef, intercept


def fit_linear(data: Dataset, task: str, seed: int = 0, *, penalty=None) -> LinearModel:
    """
    Регрессия - метод наименьших квадратов; классификация - логистическая
    регрессия градиентным спуском до изменения потерь < 1e-8.
    Спуск стартует с нулей, так что seed на результат не влияет.
    """
    _check_task(task)
    X = data.features
    n, d = X.shape
    if n == 0:
        raise DataError("Пустые данные: линейную модель обучить нельзя")

    if task == REGRESSION:
        design = np.column_stack([X, np.ones(n)])
        solution, *_ = np.linalg.lstsq(design, np.asarray(data.labels, dtype=float), rcond=None)
        return LinearModel(
            task=task, n_features=d, n_classes=0,
            coef=_frozen(solution[:-1]), intercept=_frozen(solution[-1]),
        )

    y = _class_labels(data.labels)
    n_classes = int(y.max()) + 1
    if np.unique(y).size == 1:
        logger.warning(f"В обучающих данных один класс ({y[0]}), модель вернёт априорные частоты")
        prior = np.bincount(y, minlength=n_classes) / n
        return LinearModel(task=task, n_features=d, n_classes=n_classes, prior=_frozen(prior))

    coef, intercept = _fit_logistic(X, y, n_classes, penalty=penalty)
    return LinearModel(
        task=task, n_features=d, n_classes=n_classes,
        coef=_frozen(coef), intercept=_frozen(intercept),
    )

# ===================== MLP =====================

def init_network(n_inputs: int, hidden_dim: int, hidden_layers: int, rng) -> list:
    """He-инициализация ReLU-слоёв, нулевые смещения."""
    weights = []
    fan_in = n_inputs
    for _ in range(hidden_layers):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, hidden_dim)))
        weights.append(np.zeros(hidden_dim))
        fan_in = hidden_dim
    weights.append(rng.normal(0.0, math.sqrt(1.0 / fan_in), size=(fan_in, 1)))
    weights.append(np.zeros(1))
    return weights


def forward(weights, X, masks=None):
    """Прямой проход: (логиты, кэш скрытых слоёв, последний скрытый слой)."""
    hidden = X
    cache = []
    n_hidden = (len(weights) - 2) // 2
    for layer in range(n_hidden):
        z = hidden @ weights[2 * layer] + weights[2 * layer + 1]
        activation = np.maximum(z, 0.0)
        if masks is not None:
            activation = activation * masks[layer]
        cache.append((hidden, z))
        hidden = activation
    logits = (hidden @ weights[-2] + weights[-1])[:, 0]
    return logits, cache, hidden


def network_gradients(weights, X, y, loss: Callable = mean_bce, rows=None, masks=None):
    """Значение потерь и градиенты по всем весам (обратное распространение)."""
    X = np.asarray(X, dtype=float)
    if rows is None:
        rows = np.arange(X.shape[0])
    logits, cache, last_hidden = forward(weights, X, masks)
    value, dlogits = loss(logits, y, rows)

    grads = [None] * len(weights)
    grads[-2] = last_hidden.T @ dlogits[:, None]
    grads[-1] = np.array([dlogits.sum()])
    upstream = dlogits[:, None] @ weights[-2].T
    for layer in reversed(range(len(cache))):
        hidden, z = cache[layer]
        if masks is not None:
            upstream = upstream * masks[layer]
        dz = upstream * (z > 0)
        grads[2 * layer] = hidden.T @ dz
        grads[2 * layer + 1] = dz.sum(axis=0)
        upstream = dz @ weights[2 * layer].T
    return value, grads


class Adam:
    """Адаптивный моментный спуск со стандартными коэффициентами."""

    def __init__(self, weights, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(w) for w in weights]
        self.v = [np.zeros_like(w) for w in weights]
        self.t = 0

    def step(self, weights, grads) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for i, grad in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            weights[i] = weights[i] - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _dropout_masks(rng, batch_rows: int, params: MlpParams):
    if params.dropout_rate == 0.0 or params.hidden_layers == 0:
        return None
    keep = 1.0 - params.dropout_rate
    return [
        (rng.random((batch_rows, params.hidden_dim)) < keep) / keep
        for _ in range(params.hidden_layers)
    ]


def fit_mlp(data: Dataset, params: MlpParams = MlpParams()) -> MlpModel:
    """
    Обучение MLP на бинарных метках с Adam; по умолчанию полным батчем.
    Инициализация, порядок батчей и маски dropout берутся из одного генератора.
    """
    X = data.features
    n, d = X.shape
    if n == 0:
        raise DataError("Пустые данные: MLP обучить нельзя")
    labels = np.asarray(data.labels, dtype=float)
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise UsageError("MLP обучается только на бинарных метках 0/1")

    rng = np.random.default_rng(params.seed)
    weights = init_network(d, params.hidden_dim, params.hidden_layers, rng)
    optimizer = Adam(weights, params.learning_rate, params.beta1, params.beta2, params.eps)
    batch_size = n if params.batch_size is None else min(params.batch_size, n)

    for epoch in range(params.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            masks = _dropout_masks(rng, rows.size, params)
            value, grads = network_gradients(weights, X[rows], labels[rows], params.loss, rows, masks)
            optimizer.step(weights, grads)
            epoch_loss += value * rows.size
        if epoch % 10 == 0 or epoch == params.epochs - 1:
            logger.debug(f"MLP эпоха {epoch + 1}/{params.epochs}: loss={epoch_loss / n:.6f}")

    return MlpModel(
        task=CLASSIFICATION, n_features=d, n_classes=2,
        weights=tuple(_frozen(w) for w in weights),
    )

# ===================== ОБЩИЙ ИНТЕРФЕЙС =====================

def class_scores(model: FittedModel, X) -> np.ndarray:
    """Таблица n×k вероятностей классов."""
    return model.class_scores(X)


def predict(model: FittedModel, X, environment=None) -> np.ndarray:
    """Метки (argmax, ничья - к меньшему индексу) или регрессионные предсказания."""
    return model.predict(X, environment=environment)


def save_model(model: FittedModel, path):
    """Сохраняет модель в версионированный JSON-документ."""
    payload = {"schema_version": MODEL_SCHEMA_VERSION, **model.to_dict()}
    target = save_json(payload, path)
    logger.info(f"✅ Модель {model.kind} сохранена: {target}")
    return target
