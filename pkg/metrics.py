"""
Оценка: точность, MSE, отчёты по группам, диспропорции и дельты равенства.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, mean_squared_error

from learners import CLASSIFICATION, REGRESSION
from utils import UsageError

logger = logging.getLogger(__name__)

DEFAULT_MIN_GROUP_SIZE = 20


def evaluate(predictions, labels, task: str) -> float:
    """Точность для классификации, MSE для регрессии; NaN на пустой выборке."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise UsageError(f"Формы предсказаний {predictions.shape} и меток {labels.shape} не совпадают")
    if predictions.size == 0:
        return float("nan")
    if task == CLASSIFICATION:
        return float(accuracy_score(labels, predictions))
    if task == REGRESSION:
        return float(mean_squared_error(labels.astype(float), predictions.astype(float)))
    raise UsageError(f"Неизвестная задача '{task}'")

# ===================== ГРУППЫ =====================

def group_key(feature: str, value) -> str:
    return f"{feature}={value}"


def group_membership(groups: pd.DataFrame):
    """
    Маргинальные группы: по одной на пару (признак, значение).
    Возвращает (ключи 'feature=value', булева матрица n×G); порядок -
    по столбцам таблицы, внутри столбца по отсортированным значениям.
    """
    if groups is None:
        raise UsageError("Не заданы чувствительные признаки для групп")
    keys, columns = [], []
    for feature in groups.columns:
        values = groups[feature].astype(str).to_numpy()
        for value in sorted(set(values)):
            keys.append(group_key(feature, value))
            columns.append(values == value)
    if columns:
        matrix = np.column_stack(columns)
    else:
        matrix = np.zeros((len(groups), 0), dtype=bool)
    return keys, matrix

# ===================== ОТЧЁТЫ =====================

@dataclass(frozen=True)
class GroupStats:
    feature: str
    value: str
    size: int
    accuracy: float
    positive_rate: float
    small: bool

    @property
    def key(self) -> str:
        return group_key(self.feature, self.value)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "value": self.value,
            "size": self.size,
            "accuracy": self.accuracy,
            "positive_rate": self.positive_rate,
            "small": self.small,
        }


@dataclass(frozen=True)
class GroupReport:
    """Точность и доля положительных решений по группам плюс диспропорции по признакам."""

    groups: tuple
    disparities: dict
    overall_accuracy: float
    overall_positive_rate: float

    def by_key(self) -> dict:
        return {g.key: g for g in self.groups}

    def keys(self) -> list:
        return [g.key for g in self.groups]

    def to_rows(self) -> list:
        return [g.to_dict() for g in self.groups]


def group_report(decisions, labels, groups: pd.DataFrame, min_group_size: int = DEFAULT_MIN_GROUP_SIZE) -> GroupReport:
    """Отчёт по маргинальным группам; малые группы попадают в отчёт с флагом small."""
    decisions = np.asarray(decisions).astype(int)
    labels = np.asarray(labels).astype(int)
    if decisions.shape != labels.shape or len(groups) != labels.shape[0]:
        raise UsageError("Решения, метки и группы должны иметь одинаковую длину")

    correct = decisions == labels
    positive = decisions == 1
    keys, matrix = group_membership(groups)

    stats = []
    for j, key in enumerate(keys):
        feature, value = key.split("=", 1)
        member = matrix[:, j]
        size = int(member.sum())
        stats.append(GroupStats(
            feature=feature,
            value=value,
            size=size,
            accuracy=float(correct[member].mean()) if size else float("nan"),
            positive_rate=float(positive[member].mean()) if size else float("nan"),
            small=size < min_group_size,
        ))
        if size < min_group_size:
            logger.debug(f"Группа {key}: {size} строк, меньше порога {min_group_size}")

    disparities = {}
    for feature in groups.columns:
        accuracies = [g.accuracy for g in stats if g.feature == str(feature) and g.size]
        disparities[str(feature)] = float(max(accuracies) - min(accuracies)) if accuracies else 0.0

    n = labels.size
    return GroupReport(
        groups=tuple(stats),
        disparities=disparities,
        overall_accuracy=float(correct.mean()) if n else float("nan"),
        overall_positive_rate=float(positive.mean()) if n else float("nan"),
    )

# ===================== ДЕЛЬТЫ РАВЕНСТВА =====================

@dataclass(frozen=True)
class EquityDeltas:
    """None в процентных полях означает неопределённость (нулевой знаменатель)."""

    worst_off_rate_improvement_pct: Optional[float]
    gap_reduction_pct: Optional[float]
    overall_accuracy_delta: float
    worst_off_groups: tuple = ()
    best_off_groups: tuple = ()
    base_worst_off_rate: Optional[float] = None
    treated_worst_off_rate: Optional[float] = None
    base_gap: Optional[float] = None
    treated_gap: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "worst_off_rate_improvement_pct": self.worst_off_rate_improvement_pct,
            "gap_reduction_pct": self.gap_reduction_pct,
            "overall_accuracy_delta": self.overall_accuracy_delta,
            "worst_off_groups": list(self.worst_off_groups),
            "best_off_groups": list(self.best_off_groups),
            "base_worst_off_rate": self.base_worst_off_rate,
            "treated_worst_off_rate": self.treated_worst_off_rate,
            "base_gap": self.base_gap,
            "treated_gap": self.treated_gap,
        }


def _mean_rate(report: GroupReport, keys) -> Optional[float]:
    by_key = report.by_key()
    rates = [by_key[k].positive_rate for k in keys if k in by_key and by_key[k].size]
    if not rates:
        return None
    return float(np.mean(rates))


def select_best_off_groups(base: GroupReport, exclude, count: int) -> list:
    """
    Группы вне exclude с наибольшей базовой долей найма; берутся только те,
    чья доля выше средней по exclude, не больше count. Ничьи по порядку ключей.
    """
    excluded = list(exclude)
    order = {key: i for i, key in enumerate(base.keys())}
    floor = _mean_rate(base, excluded)
    candidates = [
        g for g in base.groups
        if g.key not in excluded and not g.small and g.size
        and (floor is None or g.positive_rate > floor)
    ]
    candidates.sort(key=lambda g: (-g.positive_rate, order[g.key]))
    return [g.key for g in candidates[:count]]


def equity_deltas(base: GroupReport, treated: GroupReport, worst_off, best_off=None) -> EquityDeltas:
    """
    Рост доли найма у худших групп и сокращение разрыва лучшие − худшие, в процентах.
    Средние по группам невзвешенные.
    """
    worst_off = list(worst_off)
    if best_off is None:
        best_off = select_best_off_groups(base, worst_off, len(worst_off))
    best_off = list(best_off)

    base_worst = _mean_rate(base, worst_off)
    treated_worst = _mean_rate(treated, worst_off)
    base_best = _mean_rate(base, best_off)
    treated_best = _mean_rate(treated, best_off)

    improvement = None
    if base_worst is not None and treated_worst is not None and base_worst != 0:
        improvement = (treated_worst - base_worst) / base_worst * 100.0

    base_gap = treated_gap = reduction = None
    if None not in (base_worst, base_best, treated_worst, treated_best):
        base_gap = base_best - base_worst
        treated_gap = treated_best - treated_worst
        if base_gap != 0:
            reduction = (base_gap - treated_gap) / base_gap * 100.0

    if improvement is None or reduction is None:
        logger.warning("Дельты равенства частично не определены (нулевая база или разрыв)")

    return EquityDeltas(
        worst_off_rate_improvement_pct=improvement,
        gap_reduction_pct=reduction,
        overall_accuracy_delta=float(treated.overall_accuracy - base.overall_accuracy),
        worst_off_groups=tuple(worst_off),
        best_off_groups=tuple(best_off),
        base_worst_off_rate=base_worst,
        treated_worst_off_rate=treated_worst,
        base_gap=base_gap,
        treated_gap=treated_gap,
    )
