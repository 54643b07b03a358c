"""
Логические ограничения над вероятностями классов и все меры их нарушения.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from utils import UsageError

logger = logging.getLogger(__name__)

# ===================== ТИПЫ =====================

def _pairs(items, kind: str) -> tuple:
    result = []
    for item in items:
        try:
            a, b = (int(v) for v in item)
        except (TypeError, ValueError):
            raise UsageError(f"{kind}: ожидается пара индексов классов, получено {item!r}")
        if a == b:
            raise UsageError(f"{kind}: пара ({a}, {b}) ссылается на один и тот же класс")
        if a < 0 or b < 0:
            raise UsageError(f"{kind}: отрицательный индекс класса в ({a}, {b})")
        result.append((a, b))
    return tuple(result)


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 < value < 1.0):
        raise UsageError(f"{name} должен лежать в (0, 1), получено {value}")
    return value


@dataclass(frozen=True)
class ConstraintSet:
    """
    Пары взаимного исключения {a, b} и импликации a → b
    с общим порогом активации tau и коэффициентом уменьшения rho.
    Импликации обрабатываются в порядке объявления.
    """

    exclusions: tuple = ()
    implications: tuple = ()
    tau: float = 0.4
    rho: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "exclusions", _pairs(self.exclusions, "exclusions"))
        object.__setattr__(self, "implications", _pairs(self.implications, "implications"))
        object.__setattr__(self, "tau", _check_unit("tau", self.tau))
        object.__setattr__(self, "rho", _check_unit("rho", self.rho))

    @property
    def is_empty(self) -> bool:
        return not self.exclusions and not self.implications

    def check_classes(self, n_classes: int) -> None:
        """Все индексы должны существовать в таблице из n_classes столбцов."""
        for a, b in self.exclusions + self.implications:
            if max(a, b) >= n_classes:
                raise UsageError(
                    f"Ограничение ({a}, {b}) ссылается на класс вне таблицы из {n_classes} классов"
                )

    def to_dict(self) -> dict:
        return {
            "exclusions": [list(p) for p in self.exclusions],
            "implications": [list(p) for p in self.implications],
            "tau": self.tau,
            "rho": self.rho,
        }


@dataclass(frozen=True)
class RepairConfig:
    """Порог минимального изменения для контрфактических предсказаний."""

    tau_cf: float = 1.5

    def __post_init__(self):
        value = float(self.tau_cf)
        if not math.isfinite(value) or value <= 0:
            raise UsageError(f"tau_cf должен быть положительным, получено {self.tau_cf}")
        object.__setattr__(self, "tau_cf", value)

# ===================== МЕРЫ НАРУШЕНИЙ =====================

def as_scores(scores) -> np.ndarray:
    """Таблица n×k вероятностей классов как float-массив."""
    table = np.asarray(scores, dtype=float)
    if table.ndim != 2:
        raise UsageError(f"Ожидается таблица n×k, получено ndim={table.ndim}")
    return table


def violation_score(row, pair, tau: float) -> float:
    """min(p_a, p_b), если обе вероятности строго выше tau, иначе 0."""
    a, b = pair
    p_a, p_b = float(row[a]), float(row[b])
    if p_a > tau and p_b > tau:
        return min(p_a, p_b)
    return 0.0


def exclusion_violations(scores, cs: ConstraintSet) -> np.ndarray:
    """Булев вектор: в строке хотя бы одна пара исключения выше tau."""
    table = as_scores(scores)
    cs.check_classes(table.shape[1])
    mask = np.zeros(table.shape[0], dtype=bool)
    for a, b in cs.exclusions:
        mask |= (table[:, a] > cs.tau) & (table[:, b] > cs.tau)
    return mask


def implication_violations(scores, cs: ConstraintSet) -> np.ndarray:
    """Булев вектор: есть ребро a → b с p_a > tau и p_b < tau."""
    table = as_scores(scores)
    cs.check_classes(table.shape[1])
    mask = np.zeros(table.shape[0], dtype=bool)
    for a, b in cs.implications:
        mask |= (table[:, a] > cs.tau) & (table[:, b] < cs.tau)
    return mask


def exclusion_violation_rate(scores, cs: ConstraintSet) -> float:
    mask = exclusion_violations(scores, cs)
    return float(mask.mean()) if mask.size else 0.0


def implication_violation_rate(scores, cs: ConstraintSet) -> float:
    mask = implication_violations(scores, cs)
    return float(mask.mean()) if mask.size else 0.0


def counterfactual_violation_rate(factual, cf, config: RepairConfig) -> float:
    """Доля строк, где хоть одно контрфактическое предсказание отходит от фактического больше чем на tau_cf."""
    factual = np.asarray(factual, dtype=float)
    cf = np.asarray(cf, dtype=float)
    if cf.ndim == 1:
        cf = cf[:, None]
    if factual.ndim != 1 or cf.shape[0] != factual.shape[0]:
        raise UsageError(
            f"Форма контрфактов {cf.shape} не согласована с фактическими {factual.shape}"
        )
    if factual.size == 0 or cf.shape[1] == 0:
        return 0.0
    deviation = np.abs(cf - factual[:, None]).max(axis=1)
    return float(np.mean(deviation > config.tau_cf))


def env_mse_variance(per_env_mse) -> float:
    """Популяционная дисперсия MSE по отложенным средам."""
    values = np.asarray(per_env_mse, dtype=float)
    if values.size == 0:
        return 0.0
    return float(np.var(values))
