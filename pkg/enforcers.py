"""
Пост-обработка выходов обученной модели: проекция взаимного исключения,
перенос уверенности по импликациям, зажим контрфактов и калибровка
порогов для групп в худшем положении.

Функции исключения и переноса принимают необязательный tape: список,
куда пишутся выполненные операции для обратного прохода в intrinsic.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from constraints import ConstraintSet, RepairConfig, as_scores
from metrics import group_membership
from utils import UsageError

logger = logging.getLogger(__name__)

EPSILON = 1e-6
DEFAULT_THRESHOLD = 0.5
MAX_SWEEPS = 10

# ===================== ЛОГИЧЕСКИЕ ОГРАНИЧЕНИЯ =====================

def apply_mutual_exclusion(scores, cs: ConstraintSet, tape: Optional[list] = None) -> np.ndarray:
    """
    Для каждой пары {a, b}, где обе вероятности выше tau, меньшая умножается
    на (1 - rho); если она всё ещё выше tau, ставится tau - 1e-6.
    При равенстве уменьшается класс с большим индексом.
    """
    table = as_scores(scores).copy()
    cs.check_classes(table.shape[1])
    for a, b in cs.exclusions:
        rows = np.nonzero((table[:, a] > cs.tau) & (table[:, b] > cs.tau))[0]
        if rows.size == 0:
            continue
        p_a, p_b = table[rows, a], table[rows, b]
        cols = np.where(p_a < p_b, a, np.where(p_b < p_a, b, max(a, b)))
        reduced = table[rows, cols] * (1.0 - cs.rho)
        clamped = reduced > cs.tau
        table[rows, cols] = np.where(clamped, cs.tau - EPSILON, reduced)
        if tape is not None:
            tape.append(("scale", rows[~clamped], cols[~clamped], 1.0 - cs.rho))
            tape.append(("zero", rows[clamped], cols[clamped]))
    return table


def apply_implication_transfer(scores, cs: ConstraintSet, tape: Optional[list] = None) -> np.ndarray:
    """
    Для ребра a → b при p_a > tau и p_b < tau: p_b += min(rho * p_a, tau - p_b).
    Рёбра обрабатываются в порядке объявления, цепочки объявляются от корня.
    """
    table = as_scores(scores).copy()
    cs.check_classes(table.shape[1])
    for a, b in cs.implications:
        rows = np.nonzero((table[:, a] > cs.tau) & (table[:, b] < cs.tau))[0]
        if rows.size == 0:
            continue
        transfer = cs.rho * table[rows, a]
        # При насыщении ставим ровно tau, иначе сумма может недобрать ulp
        saturated = transfer >= cs.tau - table[rows, b]
        table[rows, b] = np.where(saturated, cs.tau, table[rows, b] + transfer)
        if tape is not None:
            tape.append(("transfer", rows[~saturated], a, b, cs.rho))
            tape.append(("zero", rows[saturated], np.full(int(saturated.sum()), b)))
    return table

# ===================== КОНТРФАКТЫ =====================

def repair_counterfactuals(factual, cf, config: RepairConfig) -> np.ndarray:
    """
    Зажим контрфактов в полосу factual ± tau_cf с сохранением знака отклонения.
    Значения внутри полосы не меняются.
    """
    factual = np.asarray(factual, dtype=float)
    cf = np.asarray(cf, dtype=float)
    if cf.ndim == 1:
        cf = cf[:, None]
    if factual.ndim != 1 or cf.ndim != 2 or cf.shape[0] != factual.shape[0]:
        raise UsageError(f"Форма контрфактов {cf.shape} не согласована с фактическими {factual.shape}")

    base = np.broadcast_to(factual[:, None], cf.shape)
    deviation = cf - base
    repaired = np.where(
        np.abs(deviation) <= config.tau_cf, cf, base + np.sign(deviation) * config.tau_cf
    )
    # Округление base ± tau может дать |Δ| чуть больше tau
    over = np.abs(repaired - base) > config.tau_cf
    while over.any():
        repaired[over] = np.nextafter(repaired[over], base[over])
        over = np.abs(repaired - base) > config.tau_cf
    return repaired


def treatment_design(features, treatment) -> np.ndarray:
    """Матрица признаков с номером лечения последним столбцом."""
    features = np.asarray(features, dtype=float)
    return np.column_stack([features, np.asarray(treatment, dtype=float)])


def counterfactual_matrix(model, features, treatment, n_treatments: int = 3):
    """
    Фактические предсказания и матрица n×(T-1) предсказаний при каждом
    альтернативном лечении в порядке возрастания номера.
    """
    features = np.asarray(features, dtype=float)
    treatment = np.asarray(treatment, dtype=int)
    n = features.shape[0]
    if treatment.shape != (n,):
        raise UsageError("Длина столбца лечения не совпадает с числом строк")
    if n and (treatment.min() < 0 or treatment.max() >= n_treatments):
        raise UsageError(f"Номера лечения должны лежать в [0, {n_treatments})")

    outcomes = np.column_stack([
        model.predict(treatment_design(features, np.full(n, t))) for t in range(n_treatments)
    ]) if n else np.zeros((0, n_treatments))
    factual = outcomes[np.arange(n), treatment]
    alternatives = np.arange(n_treatments)[None, :] != treatment[:, None]
    cf = outcomes[alternatives].reshape(n, n_treatments - 1)
    return factual, cf

# ===================== КАЛИБРОВКА ПОРОГОВ =====================

@dataclass(frozen=True)
class CalibrationConfig:
    min_group_size: int = 20
    validation_split: float = 0.20
    min_accuracy_retention: float = 0.90
    worst_off_fraction: float = 1.0 / 3.0
    max_worst_off_groups: int = 5
    threshold_step: float = 0.02
    minimax_weight: float = 0.70
    average_weight: float = 0.30
    per_group_mode: bool = False
    seed: int = 42

    def __post_init__(self):
        if abs(self.minimax_weight + self.average_weight - 1.0) > 1e-9:
            raise UsageError("minimax_weight + average_weight должны давать 1")
        if not 0.0 < self.threshold_step <= 0.5:
            raise UsageError(f"threshold_step должен лежать в (0, 0.5], получено {self.threshold_step}")
        if not 0.0 < self.min_accuracy_retention <= 1.0:
            raise UsageError("min_accuracy_retention должен лежать в (0, 1]")
        if not 0.0 < self.worst_off_fraction <= 1.0:
            raise UsageError("worst_off_fraction должен лежать в (0, 1]")
        if not 0.0 < self.validation_split < 1.0:
            raise UsageError("validation_split должен лежать в (0, 1)")
        if self.min_group_size < 1 or self.max_worst_off_groups < 1:
            raise UsageError("min_group_size и max_worst_off_groups должны быть >= 1")

    def grid(self) -> np.ndarray:
        """Сетка {step, 2·step, ...} строго внутри (0, 1)."""
        count = int(math.ceil(1.0 / self.threshold_step - 1e-9))
        points = np.round(np.arange(1, count) * self.threshold_step, 10)
        return points[(points > 0.0) & (points < 1.0)]


@dataclass(frozen=True)
class ThresholdPolicy:
    default_threshold: float = DEFAULT_THRESHOLD
    worst_off_groups: tuple = ()
    shared_worst_off_threshold: Optional[float] = None
    per_group_thresholds: Optional[dict] = None
    infeasible: bool = False
    baseline_accuracy: Optional[float] = None
    calibrated_accuracy: Optional[float] = None
    objective: Optional[float] = None

    def thresholds_for(self, keys) -> dict:
        """Порог для каждой худшей группы."""
        if self.infeasible:
            return {}
        if self.per_group_thresholds is not None:
            return dict(self.per_group_thresholds)
        return {key: self.shared_worst_off_threshold for key in self.worst_off_groups}

    def to_dict(self) -> dict:
        return {
            "default_threshold": self.default_threshold,
            "worst_off_groups": list(self.worst_off_groups),
            "shared_worst_off_threshold": self.shared_worst_off_threshold,
            "per_group_thresholds": self.per_group_thresholds,
            "infeasible": self.infeasible,
            "baseline_accuracy": self.baseline_accuracy,
            "calibrated_accuracy": self.calibrated_accuracy,
            "objective": self.objective,
        }


def select_worst_off_groups(keys, accuracies, sizes, config: CalibrationConfig) -> list:
    """
    Нижняя доля worst_off_fraction групп размера >= min_group_size по точности,
    не больше max_worst_off_groups и не меньше одной. Ничьи - по порядку ключей.
    """
    eligible = [i for i, size in enumerate(sizes) if size >= config.min_group_size]
    if not eligible:
        return []
    count = math.ceil(config.worst_off_fraction * len(eligible) - 1e-9)
    count = min(config.max_worst_off_groups, max(1, count))
    ranked = sorted(eligible, key=lambda i: (accuracies[i], i))
    return [keys[i] for i in ranked[:count]]


def baseline_group_accuracies(scores, labels, groups):
    """Ключи групп, матрица принадлежности, точность и размер групп при пороге 0.5."""
    p = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    keys, matrix = group_membership(groups)
    correct = (p > DEFAULT_THRESHOLD).astype(int) == y
    sizes = matrix.sum(axis=0)
    accuracies = [
        float(correct[matrix[:, j]].mean()) if sizes[j] else math.inf
        for j in range(len(keys))
    ]
    return keys, matrix, accuracies, [int(s) for s in sizes]


def _owner_thresholds(p, member_of, thresholds) -> np.ndarray:
    """Вектор порогов: строка берёт порог первой худшей группы, к которой принадлежит."""
    result = np.full(p.shape[0], DEFAULT_THRESHOLD)
    assigned = np.zeros(p.shape[0], dtype=bool)
    for j, threshold in enumerate(thresholds):
        rows = member_of[:, j] & ~assigned
        result[rows] = threshold
        assigned |= rows
    return result


class _Objective:
    """0.7·min + 0.3·mean точности худших групп при ограничении на общую точность."""

    def __init__(self, p, y, member_of, baseline_accuracy, config):
        self.p = p
        self.y = y
        self.member_of = member_of
        self.sizes = member_of.sum(axis=0)
        self.floor = config.min_accuracy_retention * baseline_accuracy - 1e-12
        self.config = config

    def __call__(self, thresholds):
        """(objective, общая точность) или None, если ограничение нарушено."""
        decisions = (self.p > _owner_thresholds(self.p, self.member_of, thresholds)).astype(int)
        correct = decisions == self.y
        accuracy = float(correct.mean())
        if accuracy < self.floor:
            return None
        group_acc = (self.member_of & correct[:, None]).sum(axis=0) / self.sizes
        value = (
            self.config.minimax_weight * float(group_acc.min())
            + self.config.average_weight * float(group_acc.mean())
        )
        return value, accuracy


def _better(candidate, threshold, best, best_threshold) -> bool:
    """Больше цель; затем ближе к 0.5; затем меньший порог."""
    if best is None:
        return True
    value, best_value = round(candidate, 12), round(best, 12)
    if value != best_value:
        return value > best_value
    distance = round(abs(threshold - DEFAULT_THRESHOLD), 10)
    best_distance = round(abs(best_threshold - DEFAULT_THRESHOLD), 10)
    if distance != best_distance:
        return distance < best_distance
    return threshold < best_threshold


def _search_coordinate(objective, thresholds, index, grid):
    best = best_threshold = best_accuracy = None
    for t in grid:
        trial = list(thresholds)
        trial[index] = float(t)
        result = objective(trial)
        if result is None:
            continue
        if _better(result[0], float(t), best, best_threshold):
            best, best_threshold, best_accuracy = result[0], float(t), result[1]
    return best, best_threshold, best_accuracy


def calibrate_rawlsian_thresholds(scores, labels, groups, config: CalibrationConfig = CalibrationConfig()) -> ThresholdPolicy:
    """
    Подбор порога(ов) для худших групп на калибровочной выборке по сетке,
    максимизируя 0.7·min + 0.3·mean их точности при общей точности
    не ниже min_accuracy_retention от исходной.
    """
    p = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape or len(groups) != y.shape[0]:
        raise UsageError("Оценки, метки и группы должны иметь одинаковую длину")

    keys, matrix, accuracies, sizes = baseline_group_accuracies(p, y, groups)
    baseline_accuracy = float(((p > DEFAULT_THRESHOLD).astype(int) == y).mean()) if y.size else float("nan")
    worst = select_worst_off_groups(keys, accuracies, sizes, config)
    if not worst:
        logger.warning(f"Ни одна группа не достигает размера {config.min_group_size}, калибровка невозможна")
        return ThresholdPolicy(infeasible=True, baseline_accuracy=baseline_accuracy)

    member_of = matrix[:, [keys.index(k) for k in worst]]
    objective = _Objective(p, y, member_of, baseline_accuracy, config)
    grid = config.grid()

    if not config.per_group_mode:
        best = best_threshold = best_accuracy = None
        for t in grid:
            result = objective([float(t)] * len(worst))
            if result is not None and _better(result[0], float(t), best, best_threshold):
                best, best_threshold, best_accuracy = result[0], float(t), result[1]
        if best is None:
            logger.warning("Ни одна точка сетки не удовлетворяет ограничению на точность")
            return ThresholdPolicy(worst_off_groups=tuple(worst), infeasible=True,
                                   baseline_accuracy=baseline_accuracy)
        logger.info(f"📊 Общий порог для {worst}: {best_threshold} (цель {best:.4f})")
        return ThresholdPolicy(
            worst_off_groups=tuple(worst),
            shared_worst_off_threshold=best_threshold,
            baseline_accuracy=baseline_accuracy,
            calibrated_accuracy=best_accuracy,
            objective=best,
        )

    # Покоординатный подъём по порогам групп в порядке G_w
    thresholds = [DEFAULT_THRESHOLD] * len(worst)
    current = objective(thresholds)
    if current is None:
        return ThresholdPolicy(worst_off_groups=tuple(worst), infeasible=True,
                               baseline_accuracy=baseline_accuracy)
    for sweep in range(MAX_SWEEPS):
        changed = False
        for index in range(len(worst)):
            best, best_threshold, best_accuracy = _search_coordinate(objective, thresholds, index, grid)
            # Порог меняется только при строгом росте цели
            if best is not None and round(best, 12) > round(current[0], 12):
                thresholds[index] = best_threshold
                current = (best, best_accuracy)
                changed = True
        logger.debug(f"Проход {sweep + 1}: пороги {thresholds}")
        if not changed:
            break

    per_group = {key: float(t) for key, t in zip(worst, thresholds)}
    logger.info(f"📊 Пороги по группам: {per_group}")
    return ThresholdPolicy(
        worst_off_groups=tuple(worst),
        per_group_thresholds=per_group,
        baseline_accuracy=baseline_accuracy,
        calibrated_accuracy=current[1],
        objective=current[0],
    )


def apply_threshold_policy(scores, groups, policy: ThresholdPolicy) -> np.ndarray:
    """Бинарные решения 1[p > τ_g]; вне худших групп - порог по умолчанию."""
    p = np.asarray(scores, dtype=float)
    thresholds = np.full(p.shape[0], policy.default_threshold)
    if not policy.infeasible and policy.worst_off_groups:
        keys, matrix = group_membership(groups)
        by_group = policy.thresholds_for(keys)
        assigned = np.zeros(p.shape[0], dtype=bool)
        for key in policy.worst_off_groups:
            if key not in keys:
                continue
            rows = matrix[:, keys.index(key)] & ~assigned
            thresholds[rows] = by_group[key]
            assigned |= rows
    return (p > thresholds).astype(int)
