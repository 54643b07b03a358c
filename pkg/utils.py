"""
Утилиты: ошибки экспериментов, детерминированная запись JSON, разбиение выборок.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

logger = logging.getLogger(__name__)

# ===================== ОШИБКИ =====================

class PhimlError(Exception):
    """Базовая ошибка эксперимента. exit_code становится кодом возврата CLI."""

    exit_code = 1


class UsageError(PhimlError):
    """Неверные аргументы, параметры или неподдерживаемая комбинация."""

    exit_code = 1


class DataError(PhimlError):
    """Пустые, битые или несогласованные данные."""

    exit_code = 2

# ===================== ФУНКЦИИ РАБОТЫ С JSON =====================

def _format_float(value: float) -> str:
    """17 значащих цифр: одинаковые числа всегда дают одинаковый текст."""
    if not math.isfinite(value):
        return "null"
    text = format(value, ".17g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def _is_scalar(obj) -> bool:
    return obj is None or isinstance(obj, (bool, int, float, str, np.generic))


def _encode(obj, level: int, indent: int) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), level, indent)

    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)

    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(key), ensure_ascii=False)}: {_encode(value, level + 1, indent)}"
            for key, value in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"

    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # Числовые массивы (деревья, веса) пишем в одну строку
        if all(_is_scalar(item) for item in obj):
            return "[" + ", ".join(_encode(item, level + 1, indent) for item in obj) + "]"
        items = [f"{pad}{_encode(item, level + 1, indent)}" for item in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"

    raise TypeError(f"Тип {type(obj).__name__} не сериализуется в JSON")


def to_json_text(payload, indent: int = 2) -> str:
    """Сериализует отчёт; порядок ключей сохраняется, NaN превращается в null."""
    return _encode(payload, 0, indent) + "\n"


def save_json(payload, path) -> Path:
    """Сохраняет JSON-документ, создавая родительские каталоги."""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', encoding='utf-8') as f:
            f.write(to_json_text(payload))
    except OSError as e:
        logger.error(f"Ошибка сохранения {target}: {e}")
        raise UsageError(f"Не удалось записать {target}: {e}") from e
    return target


def load_json(path) -> dict:
    """Загружает JSON-отчёт; битый или отсутствующий файл - ошибка данных."""
    source = Path(path)
    try:
        with open(source, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"Файл не найден: {source}") from e
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Ошибка загрузки {source}: {e}")
        raise DataError(f"Некорректный JSON в {source}: {e}") from e

# ===================== ФУНКЦИИ РАЗБИЕНИЯ =====================

def split_indices(labels, test_size: float, seed: int, stratify: bool = True):
    """
    Делит индексы 0..n-1 на обучающие и тестовые.
    Для классификации стратифицирует по меткам; если в каком-то классе
    меньше двух строк, откатывается к обычному случайному разбиению.
    """
    labels = np.asarray(labels)
    indices = np.arange(labels.shape[0])
    if indices.size < 2:
        raise DataError(f"Для разбиения нужно хотя бы 2 строки, получено {indices.size}")

    if stratify:
        try:
            train, test = train_test_split(
                indices, test_size=test_size, random_state=seed, stratify=labels
            )
            return np.sort(train), np.sort(test)
        except ValueError as e:
            logger.warning(f"Стратификация невозможна ({e}), делим без неё")

    train, test = train_test_split(indices, test_size=test_size, random_state=seed)
    return np.sort(train), np.sort(test)
