"""
Настройки экспериментов.

Переменные окружения (.env) читаются один раз при импорте; файл --config
разбирается тем же python-dotenv, что и .env.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from dotenv import dotenv_values, load_dotenv

from utils import UsageError

load_dotenv()

logger = logging.getLogger(__name__)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Некорректное значение {name}='{raw}', используется {default}")
        return default


LOG_FILE = os.getenv("PHIML_LOG_FILE", "experiments.log")
LOG_LEVEL = os.getenv("PHIML_LOG_LEVEL", "INFO").strip().upper() or "INFO"
if LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
    logger.warning(f"Некорректный PHIML_LOG_LEVEL='{LOG_LEVEL}', используется INFO")
    LOG_LEVEL = "INFO"

DEFAULT_SEED = _env_int("PHIML_SEED", 42)
RESULTS_DIR = os.getenv("PHIML_RESULTS_DIR", "results")

# ===================== ДОПУСТИМЫЕ КОМБИНАЦИИ =====================

SCENARIOS = (
    "exclusion", "hierarchy", "constraint-loss", "logic-arch",
    "counterfactual", "env-ensemble", "hiring",
)
MODELS = ("forest", "linear", "mlp")
MODES = ("baseline", "posthoc", "intrinsic")

SUPPORTED = {
    "exclusion": {m: ("baseline", "posthoc") for m in ("forest", "linear", "mlp")},
    "hierarchy": {m: ("baseline", "posthoc") for m in ("forest", "linear")},
    "constraint-loss": {m: ("baseline", "intrinsic") for m in ("forest", "linear", "mlp")},
    "logic-arch": {m: ("baseline", "intrinsic") for m in ("forest", "linear")},
    "counterfactual": {m: ("baseline", "posthoc") for m in ("forest", "linear")},
    "env-ensemble": {m: ("baseline", "intrinsic") for m in ("forest", "linear")},
    "hiring": {
        "forest": ("baseline", "posthoc", "intrinsic"),
        "linear": ("baseline", "posthoc"),
        "mlp": ("baseline", "posthoc", "intrinsic"),
    },
}

# Ключи --param / --config и их типы
PARAM_TYPES = {
    "n": int,
    "n_per_env": int,
    "ambiguous_frac": float,
    "test_size": float,
    "tau": float,
    "rho": float,
    "tau_cf": float,
    "lam": float,
    "alpha": float,
    "rounds": int,
    "n_trees": int,
    "max_depth": int,
    "hidden_dim": int,
    "hidden_layers": int,
    "dropout_rate": float,
    "epochs": int,
    "learning_rate": float,
    "batch_size": int,
    "min_group_size": int,
    "validation_split": float,
    "min_accuracy_retention": float,
    "threshold_step": float,
    "per_group_mode": bool,
    "rawls_lambda": float,
}

RUN_KEYS = ("scenario", "model", "mode", "seed")


def valid_combinations_text() -> str:
    """Список всех поддерживаемых комбинаций для сообщений об ошибке."""
    lines = []
    for scenario, models in SUPPORTED.items():
        for model, modes in models.items():
            lines.append(f"  {scenario:<16} {model:<7} {'|'.join(modes)}")
    return "\n".join(lines)


def parse_param_value(key: str, raw) -> Any:
    """Приводит строковое значение параметра к типу из PARAM_TYPES."""
    if key not in PARAM_TYPES:
        known = ", ".join(sorted(PARAM_TYPES))
        raise UsageError(f"Неизвестный параметр '{key}'. Допустимые: {known}")
    kind = PARAM_TYPES[key]
    if not isinstance(raw, str):
        raw = str(raw)
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        value = kind(text)
    except ValueError:
        raise UsageError(f"Параметр '{key}': не удалось разобрать '{raw}' как {kind.__name__}")
    if kind is float and not math.isfinite(value):
        raise UsageError(f"Параметр '{key}' должен быть конечным числом")
    return value


def parse_param_flags(items) -> dict:
    """Разбирает повторяемый флаг --param KEY=VALUE."""
    overrides = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"Ожидается KEY=VALUE, получено '{item}'")
        key, raw = item.split("=", 1)
        key = key.strip().lower()
        overrides[key] = parse_param_value(key, raw)
    return overrides


def load_config_file(path) -> dict:
    """Читает key=value файл конфигурации."""
    if not os.path.exists(path):
        raise UsageError(f"Файл конфигурации не найден: {path}")
    values = dotenv_values(path)
    result = {}
    for key, value in values.items():
        if value is None:
            raise UsageError(f"В {path}: ключ '{key}' без значения")
        result[key.strip().lower()] = value.strip()
    logger.debug(f"Загружена конфигурация {path}: {sorted(result)}")
    return result

# ===================== КОНФИГУРАЦИЯ ЗАПУСКА =====================

@dataclass(frozen=True)
class RunConfig:
    """Один запуск сценария: (scenario, model, mode, seed) плюс переопределения."""

    scenario: str
    model: str
    mode: str
    seed: int = DEFAULT_SEED
    overrides: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SUPPORTED:
            raise UsageError(
                f"Неизвестный сценарий '{self.scenario}'. Допустимые комбинации:\n"
                f"{valid_combinations_text()}"
            )
        modes = SUPPORTED[self.scenario].get(self.model, ())
        if self.mode not in modes:
            raise UsageError(
                f"Комбинация ({self.scenario}, {self.model}, {self.mode}) не поддерживается. "
                f"Допустимые комбинации:\n{valid_combinations_text()}"
            )
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise UsageError(f"seed должен быть неотрицательным целым, получено {self.seed!r}")
        for key in self.overrides:
            if key not in PARAM_TYPES:
                raise UsageError(f"Неизвестный параметр '{key}'")
        object.__setattr__(self, "overrides", dict(self.overrides))

    def param(self, key: str, default):
        """Значение переопределения или значение по умолчанию."""
        return self.overrides.get(key, default)


def build_run_config(
    file_values: Optional[Mapping[str, str]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
    param_flags=None,
) -> RunConfig:
    """
    Собирает RunConfig.
    Приоритет: файл конфигурации < --param KEY=VALUE < отдельные флаги.
    """
    file_values = dict(file_values or {})
    run = {key: file_values.pop(key) for key in RUN_KEYS if key in file_values}
    overrides = {key: parse_param_value(key, raw) for key, raw in file_values.items()}
    overrides.update(parse_param_flags(param_flags))

    for key, value in (flag_values or {}).items():
        if value is not None:
            run[key] = value

    missing = [key for key in ("scenario", "model", "mode") if not run.get(key)]
    if missing:
        raise UsageError(f"Не заданы обязательные параметры: {', '.join(missing)}")

    seed = run.get("seed", DEFAULT_SEED)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise UsageError(f"seed должен быть целым числом, получено '{seed}'")

    return RunConfig(
        scenario=str(run["scenario"]).strip(),
        model=str(run["model"]).strip(),
        mode=str(run["mode"]).strip(),
        seed=seed,
        overrides=overrides,
    )
