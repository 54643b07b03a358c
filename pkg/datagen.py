"""
Синтетические генераторы данных для семи сценариев экспериментов.

Каждый генератор детерминирован по seed и возвращает Dataset
со стандартизованными признаками (нулевое среднее, единичная дисперсия).
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from utils import DataError, UsageError

logger = logging.getLogger(__name__)

SENSITIVE_COLUMNS = ("gender", "ethnicity", "ses")
GENDERS = ("male", "female", "nonbinary")
ETHNICITIES = ("A", "B", "C", "D")
SES_LEVELS = ("low", "mid", "high")

# Классы иерархического сценария: 0 = лёгкие симптомы, 1 = грипп, 2 = пневмония
HIERARCHY_CLASSES = ("mild", "flu", "pneumonia")
# Распределение меток по зонам тяжести: s < 1, 1 <= s < 2, s >= 2
HIERARCHY_ZONE_PROBS = np.array([
    [1.00, 0.00, 0.00],
    [0.40, 0.60, 0.00],
    [0.35, 0.30, 0.35],
])

TREATMENT_PROBS = (0.25, 0.50, 0.25)
N_ENVIRONMENTS = 4

# experience, education, test, skills, internship
HIRING_FEATURES = ("experience", "education", "test_score", "skills", "internship")
MERIT_WEIGHTS = np.array([0.8, 0.6, 1.0, 0.7, 0.4])
HIRING_POSITIVE_QUANTILE = 0.70

_FEATURE_COLUMN = re.compile(r"^f(\d+)$")

# ===================== ТИПЫ =====================

@dataclass(frozen=True)
class Dataset:
    """Табличный набор: признаки, метки и необязательные служебные столбцы."""

    features: np.ndarray
    labels: np.ndarray
    treatment: Optional[np.ndarray] = None
    environment: Optional[np.ndarray] = None
    sensitive: Optional[pd.DataFrame] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim != 2:
            raise DataError(f"Матрица признаков должна быть двумерной, получено ndim={features.ndim}")
        if not np.all(np.isfinite(features)):
            raise DataError("Признаки содержат NaN или бесконечность")
        n = features.shape[0]

        labels = np.asarray(self.labels)
        if labels.shape != (n,):
            raise DataError(f"Длина меток {labels.shape} не совпадает с числом строк {n}")

        for name in ("treatment", "environment"):
            column = getattr(self, name)
            if column is None:
                continue
            column = np.asarray(column)
            if column.shape != (n,):
                raise DataError(f"Столбец {name} длины {column.shape} при {n} строках")
            object.__setattr__(self, name, column.astype(int))

        if self.sensitive is not None:
            if len(self.sensitive) != n:
                raise DataError(f"Таблица чувствительных признаков: {len(self.sensitive)} строк при {n}")
            object.__setattr__(self, "sensitive", self.sensitive.reset_index(drop=True))

        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        """Подвыборка по индексам или булевой маске."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.nonzero(rows)[0]
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            treatment=None if self.treatment is None else self.treatment[rows],
            environment=None if self.environment is None else self.environment[rows],
            sensitive=None if self.sensitive is None else self.sensitive.iloc[rows],
        )

    def to_frame(self) -> pd.DataFrame:
        """Таблица в формате CSV-экспорта: f0..f{d-1}, label, treatment, env, gender, ethnicity, ses."""
        frame = pd.DataFrame(
            self.features, columns=[f"f{j}" for j in range(self.n_features)]
        )
        frame["label"] = self.labels
        if self.treatment is not None:
            frame["treatment"] = self.treatment
        if self.environment is not None:
            frame["env"] = self.environment
        if self.sensitive is not None:
            for column in SENSITIVE_COLUMNS:
                if column in self.sensitive.columns:
                    frame[column] = self.sensitive[column].to_numpy()
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "Dataset":
        """Собирает Dataset из таблицы; имена столбцов без учёта регистра и пробелов."""
        columns = {str(c).strip().lower(): c for c in frame.columns}

        feature_cols = sorted(
            (int(m.group(1)), original)
            for name, original in columns.items()
            if (m := _FEATURE_COLUMN.match(name))
        )
        if not feature_cols:
            raise DataError("Не найдено ни одного столбца признаков f0..f{d-1}")
        indices = [i for i, _ in feature_cols]
        if indices != list(range(len(indices))):
            raise DataError(f"Столбцы признаков идут с пропусками: {indices}")
        if "label" not in columns:
            raise DataError("Не найден столбец 'label'")

        try:
            features = frame[[c for _, c in feature_cols]].to_numpy(dtype=float)
        except (TypeError, ValueError) as e:
            raise DataError(f"Нечисловые значения в признаках: {e}") from e

        labels = frame[columns["label"]].to_numpy()
        if labels.dtype == object:
            raise DataError("Столбец 'label' должен быть числовым")

        def _optional_int(name):
            if name not in columns:
                return None
            values = frame[columns[name]]
            if values.isna().any():
                raise DataError(f"Пропуски в столбце '{name}'")
            try:
                as_float = values.to_numpy(dtype=float)
            except (TypeError, ValueError) as e:
                raise DataError(f"Нечисловые значения в '{name}': {e}") from e
            if not np.all(as_float == np.round(as_float)):
                raise DataError(f"Столбец '{name}' должен содержать целые числа")
            return as_float.astype(int)

        sensitive = None
        present = [c for c in SENSITIVE_COLUMNS if c in columns]
        if present:
            sensitive = pd.DataFrame(
                {c: frame[columns[c]].astype(str).str.strip().to_numpy() for c in present}
            )

        return cls(
            features=features,
            labels=labels,
            treatment=_optional_int("treatment"),
            environment=_optional_int("env"),
            sensitive=sensitive,
        )


@dataclass(frozen=True)
class BiasSpec:
    """
    Штрафы δ(s) к латентному баллу найма, в стандартных отклонениях.
    Хранится величина штрафа: балл уменьшается на δ, так что сдвиг
    «female −0.5» записывается как {"female": 0.5}. Отрицательное δ
    поднимает балл. При пересечении групп штрафы суммируются.
    """

    penalties: Mapping[str, float] = field(default_factory=lambda: {
        "female": 0.5,
        "nonbinary": 0.8,
        "D": 0.8,
        "C": 0.3,
        "low": 0.5,
    })

    def __post_init__(self):
        clean = {}
        for value, delta in dict(self.penalties).items():
            delta = float(delta)
            if not np.isfinite(delta):
                raise UsageError(f"Штраф для '{value}' должен быть конечным, получено {delta}")
            clean[str(value)] = delta
        object.__setattr__(self, "penalties", clean)

    def penalty(self, value: str) -> float:
        return self.penalties.get(value, 0.0)

# ===================== ВСПОМОГАТЕЛЬНЫЕ ФУНКЦИИ =====================

def _check_count(n, name: str = "n") -> int:
    if isinstance(n, bool) or int(n) != n:
        raise UsageError(f"{name} должен быть целым, получено {n!r}")
    if n < 0:
        raise UsageError(f"{name} должен быть неотрицательным, получено {n}")
    return int(n)


def standardize(X: np.ndarray) -> np.ndarray:
    """Стандартизация по столбцам; столбцы с нулевым разбросом только центрируются."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return X
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return (X - X.mean(axis=0)) / std

# ===================== ГЕНЕРАТОРЫ =====================

def gen_exclusion_dataset(seed: int, n: int, ambiguous_frac: float = 0.15) -> Dataset:
    """
    Договор (0) против патента (1): два гауссовых кластера плюс доля
    «смешанных» документов из середины, где классы неразличимы.
    """
    n = _check_count(n)
    if not 0.0 <= ambiguous_frac <= 1.0:
        raise UsageError(f"ambiguous_frac должен лежать в [0, 1], получено {ambiguous_frac}")

    rng = np.random.default_rng(seed)
    n_ambiguous = int(round(n * ambiguous_frac))
    n_clean = n - n_ambiguous

    centers = np.array([[-1.5, -0.5], [1.5, 0.5]])
    clean_labels = np.arange(n_clean) % 2
    clean = centers[clean_labels] + rng.normal(0.0, 1.0, size=(n_clean, 2))

    ambiguous = rng.normal(0.0, 0.35, size=(n_ambiguous, 2))
    ambiguous_labels = rng.integers(0, 2, size=n_ambiguous)

    X = np.vstack([clean, ambiguous])
    y = np.concatenate([clean_labels, ambiguous_labels]).astype(int)
    order = rng.permutation(n)

    logger.debug(f"Исключение: {n} строк, из них смешанных {n_ambiguous}")
    return Dataset(standardize(X[order]), y[order])


def gen_hierarchy_dataset(seed: int, n: int) -> Dataset:
    """Лёгкие симптомы / грипп / пневмония по скрытой тяжести s ~ U(0, 3)."""
    n = _check_count(n)
    rng = np.random.default_rng(seed)

    severity = rng.uniform(0.0, 3.0, size=n)
    marker = severity + rng.normal(0.0, 0.15, size=n)
    secondary = 0.5 * severity + rng.normal(0.0, 1.0, size=n)

    zone = np.digitize(severity, [1.0, 2.0])
    cumulative = np.cumsum(HIERARCHY_ZONE_PROBS[zone], axis=1)
    u = rng.random(n)
    labels = (u[:, None] > cumulative).sum(axis=1).astype(int)

    X = np.column_stack([marker, secondary])
    return Dataset(standardize(X), labels)


def gen_treatment_dataset(seed: int, n: int) -> Dataset:
    """
    Пациенты (age, severity, comorbidity), лечение t ∈ {0, 1, 2},
    непрерывный исход с эффектом лечения, растущим с тяжестью.
    """
    n = _check_count(n)
    rng = np.random.default_rng(seed)

    age, severity, comorbidity = rng.normal(size=(3, n))
    treatment = rng.choice(3, size=n, p=TREATMENT_PROBS)

    outcome = (
        0.8 * age
        + 1.2 * severity
        - 0.5 * comorbidity
        + 0.3 * severity * comorbidity
        + treatment * (1.1 + 0.4 * severity)
        + rng.normal(0.0, 0.5, size=n)
    )

    X = np.column_stack([age, severity, comorbidity])
    return Dataset(standardize(X), outcome, treatment=treatment)


def gen_environment_dataset(
    seed: int,
    n_per_env: int,
    shift_scale: float = 1.5,
    slope_scale: float = 0.5,
    noise: float = 0.5,
) -> Dataset:
    """
    Четыре среды с общим механизмом y = f(x) и сдвигом/наклоном,
    растущими с номером среды.
    """
    n_per_env = _check_count(n_per_env, "n_per_env")
    rng = np.random.default_rng(seed)

    environment = np.repeat(np.arange(N_ENVIRONMENTS), n_per_env)
    X = rng.normal(size=(environment.size, 3))
    y = (
        1.5 * X[:, 0] - X[:, 1] + 0.5 * X[:, 2]
        + shift_scale * environment
        + slope_scale * environment * X[:, 0]
        + noise * rng.normal(size=environment.size)
    )
    return Dataset(standardize(X), y, environment=environment)


def gen_hiring_dataset(seed: int, n: int, bias: Optional[BiasSpec] = None) -> Dataset:
    """
    Кандидаты с пятью признаками заслуг и тремя чувствительными атрибутами.
    Метка 1 у 30% лучших по латентному баллу после вычета штрафов δ(s).
    Признаки от чувствительных атрибутов не зависят.
    """
    n = _check_count(n)
    bias = bias or BiasSpec()
    rng = np.random.default_rng(seed)

    gender = rng.choice(GENDERS, size=n, p=(0.45, 0.45, 0.10))
    ethnicity = rng.choice(ETHNICITIES, size=n, p=(0.4, 0.3, 0.2, 0.1))
    ses = rng.choice(SES_LEVELS, size=n, p=(0.30, 0.45, 0.25))

    experience = rng.gamma(2.0, 2.0, size=n)
    education = rng.integers(1, 5, size=n).astype(float)
    test_score = rng.normal(70.0, 10.0, size=n)
    skills = rng.normal(0.0, 1.0, size=n)
    internship = (rng.random(n) < 0.35).astype(float)
    X = standardize(np.column_stack([experience, education, test_score, skills, internship]))

    latent = X @ MERIT_WEIGHTS + rng.normal(0.0, 0.6, size=n)
    if n > 1:
        latent = standardize(latent[:, None])[:, 0]

    penalty = np.zeros(n)
    for column in (gender, ethnicity, ses):
        penalty += np.array([bias.penalty(str(v)) for v in column], dtype=float)
    latent = latent - penalty

    cut = np.quantile(latent, HIRING_POSITIVE_QUANTILE) if n else 0.0
    labels = (latent > cut).astype(int)

    sensitive = pd.DataFrame({"gender": gender, "ethnicity": ethnicity, "ses": ses})
    logger.debug(f"Найм: {n} кандидатов, доля положительных {labels.mean() if n else 0:.3f}")
    return Dataset(X, labels, sensitive=sensitive)

# ===================== ЭКСПОРТ И ЗАГРУЗКА =====================

def save_dataset(dataset: Dataset, path) -> Path:
    """CSV (числа с 17 значащими цифрами) или .xlsx через openpyxl."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame = dataset.to_frame()
    try:
        if target.suffix.lower() == ".xlsx":
            frame.to_excel(target, index=False, engine="openpyxl")
        else:
            frame.to_csv(target, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise UsageError(f"Не удалось записать {target}: {e}") from e
    logger.info(f"✅ Набор данных сохранён: {target} ({dataset.n_rows} строк)")
    return target


def load_dataset(path) -> Dataset:
    """Загружает набор, ранее выгруженный save_dataset."""
    source = Path(path)
    if not source.exists():
        raise DataError(f"Файл данных не найден: {source}")
    try:
        if source.suffix.lower() == ".xlsx":
            frame = pd.read_excel(source, engine="openpyxl")
        else:
            frame = pd.read_csv(source, float_precision="round_trip")
    except (ValueError, OSError, pd.errors.ParserError) as e:
        raise DataError(f"Не удалось прочитать {source}: {e}") from e
    logger.info(f"📊 Загружено {len(frame)} строк из {source}")
    return Dataset.from_frame(frame)
