"""
Встраивание ограничений в обучение: штраф за нарушения и перевзвешивание,
логический слой, Rawlsian-нечистота леса, Rawlsian-потери сети
и ансамбль по средам.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from constraints import ConstraintSet, as_scores
from datagen import Dataset
from enforcers import apply_implication_transfer, apply_mutual_exclusion
from learners import (
    CLASSIFICATION,
    REGRESSION,
    FittedModel,
    ForestParams,
    MlpParams,
    fit_forest,
    fit_linear,
    fit_mlp,
    gini_impurity,
    mean_bce,
    per_sample_bce,
    sigmoid,
)
from metrics import group_membership
from utils import DataError, UsageError

logger = logging.getLogger(__name__)

LEARNERS = ("forest", "linear", "mlp")
_ALIASES = {"logistic": "linear"}
PROBABILITY_FLOOR = 1e-12


def learner_name(base: str) -> str:
    name = _ALIASES.get(base, base)
    if name not in LEARNERS:
        raise UsageError(f"Неизвестный базовый алгоритм '{base}', ожидается forest, logistic или mlp")
    return name


def _check_non_negative(name, value):
    if not math.isfinite(value) or value < 0:
        raise UsageError(f"{name} должен быть конечным и неотрицательным, получено {value}")


def _check_unit_closed(name, value):
    if not 0.0 <= value <= 1.0:
        raise UsageError(f"{name} должен лежать в [0, 1], получено {value}")

# ===================== КОНФИГУРАЦИИ =====================

@dataclass(frozen=True)
class ConstraintLossConfig:
    lam: float = 5.0
    alpha: float = 2.0
    rounds: int = 3

    def __post_init__(self):
        _check_non_negative("lambda", self.lam)
        _check_non_negative("alpha", self.alpha)
        if self.rounds < 1:
            raise UsageError(f"rounds должен быть >= 1, получено {self.rounds}")


@dataclass(frozen=True)
class RawlsianForestConfig:
    lam: float = 0.3
    minimax_weight: float = 0.7
    average_weight: float = 0.3
    min_group_size: int = 20

    def __post_init__(self):
        _check_unit_closed("lambda", self.lam)
        if abs(self.minimax_weight + self.average_weight - 1.0) > 1e-9:
            raise UsageError("minimax_weight + average_weight должны давать 1")


@dataclass(frozen=True)
class RawlsianLossConfig:
    lam: float = 0.7
    minimax_weight: float = 0.5
    average_weight: float = 0.3
    variance_weight: float = 0.2
    min_group_size: int = 20

    def __post_init__(self):
        _check_unit_closed("lambda", self.lam)
        total = self.minimax_weight + self.average_weight + self.variance_weight
        if abs(total - 1.0) > 1e-9:
            raise UsageError("Веса minimax, average и variance должны давать 1")

# ===================== ЛОГИЧЕСКИЙ СЛОЙ =====================

def logic_layer(scores, cs: ConstraintSet, tape: Optional[list] = None) -> np.ndarray:
    """Сначала проекция исключения, затем перенос по импликациям."""
    return apply_implication_transfer(apply_mutual_exclusion(scores, cs, tape), cs, tape)


def backpropagate_tape(tape: list, grad) -> np.ndarray:
    """Градиент по входу логического слоя по записанным операциям."""
    grad = np.array(grad, dtype=float)
    for op in reversed(tape):
        if op[0] == "scale":
            _, rows, cols, factor = op
            grad[rows, cols] *= factor
        elif op[0] == "zero":
            _, rows, cols = op
            grad[rows, cols] = 0.0
        elif op[0] == "transfer":
            _, rows, a, b, rho = op
            grad[rows, a] += rho * grad[rows, b]
    return grad


def violation_penalty(scores, cs: ConstraintSet):
    """
    V(x) = Σ min(p_a, p_b) по парам исключения, где обе вероятности выше tau,
    и субградиент dV/dP (на границе порога - 0).
    """
    table = as_scores(scores)
    cs.check_classes(table.shape[1])
    values = np.zeros(table.shape[0])
    grad = np.zeros_like(table)
    for a, b in cs.exclusions:
        active = (table[:, a] > cs.tau) & (table[:, b] > cs.tau)
        pick_a = table[:, a] <= table[:, b]
        values += np.where(active, np.minimum(table[:, a], table[:, b]), 0.0)
        grad[active & pick_a, a] += 1.0
        grad[active & ~pick_a, b] += 1.0
    return values, grad


def constraint_weights(violations, alpha: float) -> np.ndarray:
    """w_i = exp(-alpha · V(x_i))."""
    return np.exp(-alpha * np.asarray(violations, dtype=float))


def _binary_table(logits):
    p = sigmoid(logits)
    return p, np.column_stack([1.0 - p, p])


def _logit_grad(dtable, p):
    return (dtable[:, 1] - dtable[:, 0]) * p * (1.0 - p)


class ConstraintPenaltyLoss:
    """mean BCE + λ · mean V для бинарной сети."""

    def __init__(self, cs: ConstraintSet, lam: float):
        self.cs = cs
        self.lam = lam

    def __call__(self, logits, y, rows):
        value, grad = mean_bce(logits, y, rows)
        p, table = _binary_table(logits)
        violations, dtable = violation_penalty(table, self.cs)
        n = table.shape[0]
        value += self.lam * float(violations.mean())
        grad = grad + self.lam / n * _logit_grad(dtable, p)
        return value, grad


class LogicLayerLoss:
    """-log вероятности истинного класса после логического слоя."""

    def __init__(self, cs: ConstraintSet):
        self.cs = cs

    def __call__(self, logits, y, rows):
        p, table = _binary_table(logits)
        tape = []
        final = logic_layer(table, self.cs, tape)
        n = table.shape[0]
        idx = np.arange(n)
        labels = np.asarray(y).astype(int)
        q = final[idx, labels]
        safe = np.maximum(q, PROBABILITY_FLOOR)
        value = float(np.mean(-np.log(safe)))
        dfinal = np.zeros_like(final)
        dfinal[idx, labels] = np.where(q > PROBABILITY_FLOOR, -1.0 / (safe * n), 0.0)
        return value, _logit_grad(backpropagate_tape(tape, dfinal), p)


@dataclass(frozen=True, eq=False)
class LogicGuidedModel(FittedModel):
    """Базовая модель, у которой вероятности всегда проходят через логический слой."""

    base: Optional[FittedModel] = None
    constraints: ConstraintSet = ConstraintSet()

    kind = "logic-guided"

    def class_scores(self, X) -> np.ndarray:
        return logic_layer(self.base.class_scores(X), self.constraints)

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["constraints"] = self.constraints.to_dict()
        data["base"] = self.base.to_dict()
        return data

# ===================== ОБУЧЕНИЕ С ОГРАНИЧЕНИЯМИ =====================

def _plain_fit(name, data, params, seed):
    if name == "forest":
        return fit_forest(data, params or ForestParams(seed=seed), CLASSIFICATION)
    if name == "linear":
        return fit_linear(data, CLASSIFICATION, seed)
    return fit_mlp(data, params or MlpParams(seed=seed))


def constraint_aware_fit(
    base: str,
    data: Dataset,
    cs: ConstraintSet,
    config: ConstraintLossConfig = ConstraintLossConfig(),
    params=None,
    seed: int = 42,
) -> FittedModel:
    """
    Сети и логистическая регрессия учатся на L_base + λ · mean V.
    Лес: R раундов перевзвешивания w_i = exp(-α·V) и повторного обучения.
    """
    name = learner_name(base)

    if name == "forest":
        forest_params = params or ForestParams(seed=seed)
        model = fit_forest(data, forest_params, CLASSIFICATION)
        cs.check_classes(model.n_classes)
        for round_index in range(config.rounds):
            violations, _ = violation_penalty(model.class_scores(data.features), cs)
            weights = constraint_weights(violations, config.alpha)
            logger.info(
                f"Раунд {round_index + 1}/{config.rounds}: средний V={violations.mean():.4f}, "
                f"мин. вес {weights.min():.4f}"
            )
            model = fit_forest(data, forest_params, CLASSIFICATION, sample_weight=weights)
        return model

    if name == "linear":
        if config.lam == 0:
            return fit_linear(data, CLASSIFICATION, seed)
        n = data.n_rows

        def penalty(scores):
            violations, dscores = violation_penalty(scores, cs)
            return config.lam * float(violations.mean()), config.lam / n * dscores

        return fit_linear(data, CLASSIFICATION, seed, penalty=penalty)

    mlp_params = params or MlpParams(seed=seed)
    if config.lam == 0:
        return fit_mlp(data, mlp_params)
    cs.check_classes(2)
    return fit_mlp(data, replace(mlp_params, loss=ConstraintPenaltyLoss(cs, config.lam)))


def logic_guided_fit(base: str, data: Dataset, cs: ConstraintSet, params=None, seed: int = 42) -> FittedModel:
    """
    MLP: логический слой участвует и в обучении, и в предсказании.
    Лес и логистическая регрессия: обучение без изменений, слой оборачивает вывод.
    """
    name = learner_name(base)
    if cs.is_empty:
        return _plain_fit(name, data, params, seed)

    if name == "mlp":
        cs.check_classes(2)
        mlp_params = params or MlpParams(seed=seed)
        model = fit_mlp(data, replace(mlp_params, loss=LogicLayerLoss(cs)))
    else:
        model = _plain_fit(name, data, params, seed)
    cs.check_classes(model.n_classes)

    return LogicGuidedModel(
        task=CLASSIFICATION,
        n_features=model.n_features,
        n_classes=model.n_classes,
        base=model,
        constraints=cs,
    )

# ===================== RAWLSIAN-НЕЧИСТОТА =====================

@dataclass(frozen=True)
class RawlsianImpurity:
    """
    I_R = (1 - λ)·Gini + λ·[w_max·max_j Gini_j + w_avg·mean_j Gini_j];
    группы учитываются только при размере >= min_group_size в узле.
    """

    config: RawlsianForestConfig = RawlsianForestConfig()

    def __call__(self, class_counts, group_counts=None):
        overall = gini_impurity(class_counts)
        if group_counts is None or self.config.lam == 0:
            return overall

        group_counts = np.asarray(group_counts, dtype=float)
        sizes = group_counts.sum(axis=-1)
        qualifies = sizes >= self.config.min_group_size
        per_group = gini_impurity(group_counts)
        count = qualifies.sum(axis=-1)
        any_group = count > 0

        worst = np.where(qualifies, per_group, 0.0).max(axis=-1)
        mean = np.where(qualifies, per_group, 0.0).sum(axis=-1) / np.maximum(count, 1)
        group_term = self.config.minimax_weight * worst + self.config.average_weight * mean
        blended = (1.0 - self.config.lam) * overall + self.config.lam * group_term
        return np.where(any_group, blended, overall)


def rawlsian_impurity(class_counts, group_counts, config: RawlsianForestConfig = RawlsianForestConfig()):
    """I_R одного или нескольких узлов по счётчикам классов и групп."""
    return RawlsianImpurity(config)(class_counts, group_counts)


def _membership_for(data: Dataset, groups):
    if groups is None:
        raise UsageError("Для Rawlsian-обучения нужны чувствительные группы")
    keys, matrix = group_membership(groups)
    if matrix.shape[0] != data.n_rows:
        raise UsageError(f"Групп {matrix.shape[0]} строк при {data.n_rows} строках данных")
    return keys, matrix


def rawlsian_forest_fit(
    data: Dataset,
    groups,
    params: ForestParams = ForestParams(),
    config: RawlsianForestConfig = RawlsianForestConfig(),
) -> FittedModel:
    """Лес с нечистотой I_R; группы участвуют только в оценке разбиений, не в признаках."""
    keys, matrix = _membership_for(data, groups)
    logger.info(f"Rawlsian-лес: λ={config.lam}, групп {len(keys)}")
    return fit_forest(
        data,
        replace(params, impurity=RawlsianImpurity(config)),
        CLASSIFICATION,
        groups=matrix.astype(float),
    )

# ===================== RAWLSIAN-ПОТЕРИ =====================

def group_objective(group_losses, config: RawlsianLossConfig = RawlsianLossConfig()):
    """ψ = w_max·max L_g + w_avg·mean L_g + w_var·Var L_g и dψ/dL_g (дисперсия популяционная)."""
    losses = np.asarray(group_losses, dtype=float)
    count = losses.size
    worst = int(np.argmax(losses))
    mean = float(losses.mean())
    variance = float(np.mean((losses - mean) ** 2))
    value = (
        config.minimax_weight * float(losses[worst])
        + config.average_weight * mean
        + config.variance_weight * variance
    )
    grad = np.full(count, config.average_weight / count)
    grad[worst] += config.minimax_weight
    grad += config.variance_weight * 2.0 * (losses - mean) / count
    return value, grad


def rawlsian_loss_value(group_losses, base_loss: float, config: RawlsianLossConfig = RawlsianLossConfig()) -> float:
    """L_R = λ·ψ + (1 - λ)·L_BCE."""
    psi, _ = group_objective(group_losses, config)
    return config.lam * psi + (1.0 - config.lam) * base_loss


class RawlsianLoss:
    """
    L_R для батча. Групповые потери считаются по строкам батча; группы
    меньше min_group_size в батче пропускаются, без групп ψ = BCE.
    """

    def __init__(self, membership, config: RawlsianLossConfig = RawlsianLossConfig()):
        self.membership = np.asarray(membership, dtype=bool)
        self.config = config

    def __call__(self, logits, y, rows):
        base_value, base_grad = mean_bce(logits, y, rows)
        lam = self.config.lam

        member = self.membership[rows]
        sizes = member.sum(axis=0)
        keep = sizes >= self.config.min_group_size
        if keep.any():
            member = member[:, keep]
            sizes = sizes[keep]
            losses = per_sample_bce(logits, y)
            group_losses = (losses @ member) / sizes
            psi, dpsi = group_objective(group_losses, self.config)
            per_row = member @ (dpsi / sizes)
            psi_grad = per_row * (sigmoid(logits) - np.asarray(y, dtype=float))
        else:
            psi, psi_grad = base_value, base_grad

        value = lam * psi + (1.0 - lam) * base_value
        grad = lam * psi_grad + (1.0 - lam) * base_grad
        return value, grad


def rawlsian_mlp_fit(
    data: Dataset,
    groups,
    params: MlpParams = MlpParams(),
    config: RawlsianLossConfig = RawlsianLossConfig(),
) -> FittedModel:
    """Сеть на потерях L_R; группы входят только в потери, вход сети - только признаки."""
    keys, matrix = _membership_for(data, groups)
    logger.info(f"Rawlsian-сеть: λ={config.lam}, групп {len(keys)}")
    return fit_mlp(data, replace(params, loss=RawlsianLoss(matrix, config)))

# ===================== АНСАМБЛЬ ПО СРЕДАМ =====================

@dataclass(frozen=True, eq=False)
class EnvEnsembleModel(FittedModel):
    """Эксперты g_e по обучающим средам и мета-модель h(g_0(x), g_1(x), e)."""

    experts: tuple = ()
    meta: Optional[FittedModel] = None
    train_envs: tuple = ()

    kind = "env-ensemble"

    def meta_features(self, X, environment) -> np.ndarray:
        X = self._check_input(X)
        environment = np.asarray(environment, dtype=float)
        if environment.shape != (X.shape[0],):
            raise UsageError("Длина столбца сред не совпадает с числом строк")
        return np.column_stack([expert.predict(X) for expert in self.experts] + [environment])

    def predict(self, X, environment=None) -> np.ndarray:
        if environment is None:
            raise UsageError("Ансамблю по средам нужен номер среды для каждой строки")
        return self.meta.predict(self.meta_features(X, environment))

    def regress(self, X) -> np.ndarray:
        raise UsageError("Ансамблю по средам нужен номер среды для каждой строки")

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["train_envs"] = list(self.train_envs)
        data["experts"] = [expert.to_dict() for expert in self.experts]
        data["meta"] = self.meta.to_dict()
        return data


def _fit_regressor(data: Dataset, family: str, params):
    if family == "forest":
        return fit_forest(data, params or ForestParams(), REGRESSION)
    if family == "linear":
        return fit_linear(data, REGRESSION)
    raise UsageError(f"Семейство '{family}' не поддерживается, ожидается forest или linear")


def env_ensemble_fit(data: Dataset, train_envs=(0, 1), family: str = "linear", params=None) -> EnvEnsembleModel:
    """
    Эксперт на каждую обучающую среду, затем мета-модель того же семейства
    на (прогнозы экспертов, номер среды) по объединённым обучающим средам.
    """
    if data.environment is None:
        raise UsageError("В данных нет столбца сред")
    envs = tuple(sorted({int(e) for e in train_envs}))
    if len(envs) < 2:
        raise UsageError(f"Нужно хотя бы две обучающие среды, получено {envs}")

    experts = []
    for env in envs:
        rows = data.environment == env
        if not rows.any():
            raise DataError(f"В данных нет строк среды {env}")
        experts.append(_fit_regressor(data.subset(rows), family, params))

    pooled = data.subset(np.isin(data.environment, envs))
    model = EnvEnsembleModel(
        task=REGRESSION,
        n_features=data.n_features,
        n_classes=0,
        experts=tuple(experts),
        train_envs=envs,
    )
    meta_X = model.meta_features(pooled.features, pooled.environment)
    meta = _fit_regressor(Dataset(meta_X, pooled.labels), family, params)
    logger.info(f"Ансамбль по средам {envs}: {family}, мета-вход ширины {meta_X.shape[1]}")
    return replace(model, meta=meta)
