"""
Обработчики команд CLI (gen, run, report) и прогон сценариев экспериментов.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from config import RunConfig
from constraints import (
    ConstraintSet,
    RepairConfig,
    counterfactual_violation_rate,
    env_mse_variance,
    exclusion_violation_rate,
    implication_violation_rate,
)
from datagen import (
    Dataset,
    gen_environment_dataset,
    gen_exclusion_dataset,
    gen_hierarchy_dataset,
    gen_hiring_dataset,
    gen_treatment_dataset,
    load_dataset,
    save_dataset,
)
from enforcers import (
    CalibrationConfig,
    apply_implication_transfer,
    apply_mutual_exclusion,
    apply_threshold_policy,
    baseline_group_accuracies,
    calibrate_rawlsian_thresholds,
    counterfactual_matrix,
    repair_counterfactuals,
    select_worst_off_groups,
    treatment_design,
)
from intrinsic import (
    ConstraintLossConfig,
    RawlsianForestConfig,
    RawlsianLossConfig,
    constraint_aware_fit,
    env_ensemble_fit,
    logic_guided_fit,
    rawlsian_forest_fit,
    rawlsian_mlp_fit,
)
from learners import (
    CLASSIFICATION,
    REGRESSION,
    ForestParams,
    MlpParams,
    fit_forest,
    fit_linear,
    fit_mlp,
    save_model,
    scores_to_labels,
)
from metrics import equity_deltas, evaluate, group_report
from utils import DataError, UsageError, load_json, save_json, split_indices, to_json_text

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

DEFAULT_SIZES = {
    "exclusion": 500,
    "hierarchy": 500,
    "constraint-loss": 500,
    "logic-arch": 500,
    "counterfactual": 600,
    "env-ensemble": 250,
    "hiring": 1500,
}

# Среды для обучения и отложенные среды
TRAIN_ENVS = (0, 1)
TEST_ENVS = (2, 3)

# Импликации объявлены от корня: пневмония → грипп → лёгкие симптомы
HIERARCHY_IMPLICATIONS = ((2, 1), (1, 0))
# Пневмония и лёгкие симптомы не должны быть уверенными одновременно
HIERARCHY_EXCLUSIONS = ((0, 2),)
EXCLUSION_PAIRS = ((0, 1),)

SUMMARY_COLUMNS = [
    "scenario", "model", "mode", "seed",
    "accuracy", "mse",
    "violation_rate_before", "violation_rate_after",
    "env_mse_variance", "env_mse_mean",
    "disparity_gender", "disparity_ethnicity", "disparity_ses",
    "worst_off_rate_improvement_pct", "gap_reduction_pct", "overall_accuracy_delta",
]

# ===================== ДАННЫЕ =====================

def generate_dataset(scenario: str, seed: int, n=None, overrides=None) -> Dataset:
    """Набор данных сценария; для env-ensemble n означает число строк на среду."""
    overrides = overrides or {}
    if scenario not in DEFAULT_SIZES:
        raise UsageError(f"Неизвестный сценарий '{scenario}'")
    if n is None:
        n = overrides.get("n_per_env" if scenario == "env-ensemble" else "n", DEFAULT_SIZES[scenario])

    if scenario in ("exclusion", "constraint-loss"):
        return gen_exclusion_dataset(seed, n, overrides.get("ambiguous_frac", 0.15))
    if scenario in ("hierarchy", "logic-arch"):
        return gen_hierarchy_dataset(seed, n)
    if scenario == "counterfactual":
        return gen_treatment_dataset(seed, n)
    if scenario == "env-ensemble":
        return gen_environment_dataset(seed, n)
    return gen_hiring_dataset(seed, n)


def _require_columns(data: Dataset, scenario: str) -> None:
    if scenario == "counterfactual" and data.treatment is None:
        raise DataError("Для сценария counterfactual нужен столбец 'treatment'")
    if scenario == "env-ensemble" and data.environment is None:
        raise DataError("Для сценария env-ensemble нужен столбец 'env'")
    if scenario == "hiring" and data.sensitive is None:
        raise DataError("Для сценария hiring нужны столбцы gender, ethnicity, ses")
    if scenario not in ("counterfactual", "env-ensemble"):
        labels = np.asarray(data.labels, dtype=float)
        if labels.size and (np.any(labels < 0) or np.any(labels != np.round(labels))):
            raise DataError("Метки классификации должны быть неотрицательными целыми")
    if data.n_rows < 2:
        raise DataError(f"Слишком мало строк для эксперимента: {data.n_rows}")


def _split(data: Dataset, config: RunConfig, stratify: bool, test_size=None):
    test_size = config.param("test_size", 0.3) if test_size is None else test_size
    train, test = split_indices(data.labels, test_size, config.seed, stratify=stratify)
    return data.subset(train), data.subset(test)

# ===================== МОДЕЛИ =====================

def _forest_params(config: RunConfig) -> ForestParams:
    return ForestParams(
        n_trees=config.param("n_trees", 100),
        max_depth=config.param("max_depth", 10),
        seed=config.seed,
    )


def _mlp_params(config: RunConfig) -> MlpParams:
    return MlpParams(
        hidden_dim=config.param("hidden_dim", 64),
        hidden_layers=config.param("hidden_layers", 3),
        dropout_rate=config.param("dropout_rate", 0.2),
        epochs=config.param("epochs", 100),
        learning_rate=config.param("learning_rate", 0.001),
        batch_size=config.param("batch_size", None),
        seed=config.seed,
    )


def _params_for(config: RunConfig):
    if config.model == "forest":
        return _forest_params(config)
    if config.model == "mlp":
        return _mlp_params(config)
    return None


def _model_params_dict(config: RunConfig) -> dict:
    if config.model == "forest":
        p = _forest_params(config)
        return {"n_trees": p.n_trees, "max_depth": p.max_depth}
    if config.model == "mlp":
        p = _mlp_params(config)
        return {
            "hidden_dim": p.hidden_dim, "hidden_layers": p.hidden_layers,
            "dropout_rate": p.dropout_rate, "epochs": p.epochs,
            "learning_rate": p.learning_rate, "batch_size": p.batch_size,
        }
    return {}


def _fit_classifier(config: RunConfig, data: Dataset):
    if config.model == "forest":
        return fit_forest(data, _forest_params(config), CLASSIFICATION)
    if config.model == "linear":
        return fit_linear(data, CLASSIFICATION, config.seed)
    return fit_mlp(data, _mlp_params(config))


def _fit_regressor(config: RunConfig, data: Dataset):
    if config.model == "forest":
        return fit_forest(data, _forest_params(config), REGRESSION)
    return fit_linear(data, REGRESSION, config.seed)


def _constraint_set(config: RunConfig, exclusions=(), implications=()) -> ConstraintSet:
    return ConstraintSet(
        exclusions=exclusions,
        implications=implications,
        tau=config.param("tau", 0.4),
        rho=config.param("rho", 0.3),
    )

# ===================== СЦЕНАРИИ: ЛОГИЧЕСКИЕ ОГРАНИЧЕНИЯ =====================

def run_exclusion(config: RunConfig, data: Dataset):
    """Договор ⊥ патент: базовая модель и проекция исключения."""
    cs = _constraint_set(config, exclusions=EXCLUSION_PAIRS)
    train, test = _split(data, config, stratify=True)
    model = _fit_classifier(config, train)

    scores = model.class_scores(test.features)
    accuracy = evaluate(scores_to_labels(scores), test.labels, CLASSIFICATION)
    metrics = {
        "accuracy": accuracy,
        "violation_rate_before": exclusion_violation_rate(scores, cs),
    }
    if config.mode == "posthoc":
        repaired = apply_mutual_exclusion(scores, cs)
        metrics["accuracy_before"] = accuracy
        metrics["accuracy"] = evaluate(scores_to_labels(repaired), test.labels, CLASSIFICATION)
        metrics["violation_rate_after"] = exclusion_violation_rate(repaired, cs)

    params = {**_model_params_dict(config), "constraints": cs.to_dict()}
    return params, metrics, {}, model


def run_hierarchy(config: RunConfig, data: Dataset):
    """Пневмония → грипп → лёгкие симптомы: базовая модель и перенос уверенности."""
    cs = _constraint_set(config, implications=HIERARCHY_IMPLICATIONS)
    train, test = _split(data, config, stratify=True)
    model = _fit_classifier(config, train)

    scores = model.class_scores(test.features)
    accuracy = evaluate(scores_to_labels(scores), test.labels, CLASSIFICATION)
    metrics = {
        "accuracy": accuracy,
        "violation_rate_before": implication_violation_rate(scores, cs),
    }
    if config.mode == "posthoc":
        repaired = apply_implication_transfer(scores, cs)
        metrics["accuracy_before"] = accuracy
        metrics["accuracy"] = evaluate(scores_to_labels(repaired), test.labels, CLASSIFICATION)
        metrics["violation_rate_after"] = implication_violation_rate(repaired, cs)

    params = {**_model_params_dict(config), "constraints": cs.to_dict()}
    return params, metrics, {}, model


def run_constraint_loss(config: RunConfig, data: Dataset):
    """Штраф за нарушения в обучении (лес - перевзвешивание)."""
    cs = _constraint_set(config, exclusions=EXCLUSION_PAIRS)
    loss_config = ConstraintLossConfig(
        lam=config.param("lam", 5.0),
        alpha=config.param("alpha", 2.0),
        rounds=config.param("rounds", 3),
    )
    train, test = _split(data, config, stratify=True)
    baseline = _fit_classifier(config, train)
    base_scores = baseline.class_scores(test.features)
    base_accuracy = evaluate(scores_to_labels(base_scores), test.labels, CLASSIFICATION)
    metrics = {
        "accuracy": base_accuracy,
        "violation_rate_before": exclusion_violation_rate(base_scores, cs),
    }
    model = baseline
    if config.mode == "intrinsic":
        model = constraint_aware_fit(config.model, train, cs, loss_config, _params_for(config), config.seed)
        scores = model.class_scores(test.features)
        metrics["accuracy_before"] = base_accuracy
        metrics["accuracy"] = evaluate(scores_to_labels(scores), test.labels, CLASSIFICATION)
        metrics["violation_rate_after"] = exclusion_violation_rate(scores, cs)

    params = {
        **_model_params_dict(config),
        "constraints": cs.to_dict(),
        "lambda": loss_config.lam,
        "alpha": loss_config.alpha,
        "rounds": loss_config.rounds,
    }
    return params, metrics, {}, model


def run_logic_arch(config: RunConfig, data: Dataset):
    """Логический слой поверх базовой модели."""
    cs = _constraint_set(config, exclusions=HIERARCHY_EXCLUSIONS, implications=HIERARCHY_IMPLICATIONS)
    train, test = _split(data, config, stratify=True)
    baseline = _fit_classifier(config, train)
    base_scores = baseline.class_scores(test.features)
    base_accuracy = evaluate(scores_to_labels(base_scores), test.labels, CLASSIFICATION)
    metrics = {
        "accuracy": base_accuracy,
        "violation_rate_before": implication_violation_rate(base_scores, cs),
        "exclusion_violation_rate_before": exclusion_violation_rate(base_scores, cs),
    }
    model = baseline
    if config.mode == "intrinsic":
        model = logic_guided_fit(config.model, train, cs, _params_for(config), config.seed)
        scores = model.class_scores(test.features)
        metrics["accuracy_before"] = base_accuracy
        metrics["accuracy"] = evaluate(scores_to_labels(scores), test.labels, CLASSIFICATION)
        metrics["violation_rate_after"] = implication_violation_rate(scores, cs)
        metrics["exclusion_violation_rate_after"] = exclusion_violation_rate(scores, cs)

    params = {**_model_params_dict(config), "constraints": cs.to_dict()}
    return params, metrics, {}, model

# ===================== СЦЕНАРИИ: ПРИЧИННОСТЬ И ИНВАРИАНТНОСТЬ =====================

def run_counterfactual(config: RunConfig, data: Dataset):
    """Контрфактические предсказания по лечению и их зажим."""
    repair = RepairConfig(tau_cf=config.param("tau_cf", 1.5))
    train, test = _split(data, config, stratify=False)
    design = Dataset(treatment_design(train.features, train.treatment), train.labels)
    model = _fit_regressor(config, design)

    factual, cf = counterfactual_matrix(model, test.features, test.treatment)
    mse = evaluate(factual, test.labels, REGRESSION)
    metrics = {
        "mse": mse,
        "factual_mse_before": mse,
        "violation_rate_before": counterfactual_violation_rate(factual, cf, repair),
    }
    if config.mode == "posthoc":
        repaired = repair_counterfactuals(factual, cf, repair)
        metrics["factual_mse_after"] = evaluate(factual, test.labels, REGRESSION)
        metrics["violation_rate_after"] = counterfactual_violation_rate(factual, repaired, repair)
        metrics["mean_abs_cf_change"] = float(np.mean(np.abs(repaired - cf))) if cf.size else 0.0

    params = {**_model_params_dict(config), "tau_cf": repair.tau_cf}
    return params, metrics, {}, model


def _env_mse(model, test: Dataset, needs_environment: bool) -> dict:
    per_env = {}
    for env in TEST_ENVS:
        part = test.subset(test.environment == env)
        if needs_environment:
            predictions = model.predict(part.features, environment=part.environment)
        else:
            predictions = model.predict(part.features)
        per_env[str(env)] = evaluate(predictions, part.labels, REGRESSION)
    values = list(per_env.values())
    return {
        "per_env": per_env,
        "variance": env_mse_variance(values),
        "mean": float(np.mean(values)),
    }


def run_env_ensemble(config: RunConfig, data: Dataset):
    """Объединённая модель против ансамбля экспертов по средам."""
    train = data.subset(np.isin(data.environment, TRAIN_ENVS))
    test = data.subset(np.isin(data.environment, TEST_ENVS))
    if train.n_rows == 0 or test.n_rows == 0:
        raise DataError("Нужны строки обучающих (0, 1) и отложенных (2, 3) сред")

    pooled = _fit_regressor(config, train)
    baseline_env = _env_mse(pooled, test, needs_environment=False)
    metrics = {
        "mse": evaluate(pooled.predict(test.features), test.labels, REGRESSION),
        "violation_rate_before": baseline_env["variance"],
        "env_mse": baseline_env,
    }
    model = pooled
    if config.mode == "intrinsic":
        model = env_ensemble_fit(train, TRAIN_ENVS, config.model, _params_for(config))
        ensemble_env = _env_mse(model, test, needs_environment=True)
        metrics["mse_before"] = metrics["mse"]
        metrics["mse"] = evaluate(
            model.predict(test.features, environment=test.environment), test.labels, REGRESSION
        )
        metrics["violation_rate_after"] = ensemble_env["variance"]
        metrics["env_mse_before"] = baseline_env
        metrics["env_mse"] = ensemble_env

    params = {**_model_params_dict(config), "train_envs": list(TRAIN_ENVS), "test_envs": list(TEST_ENVS)}
    return params, metrics, {}, model

# ===================== СЦЕНАРИЙ: СПРАВЕДЛИВЫЙ НАЙМ =====================

def run_hiring(config: RunConfig, data: Dataset):
    """
    Найм: базовая модель на 80% обучающей части, калибровка порогов на 20%,
    отчёты по группам и дельты равенства на тесте.
    """
    calibration = CalibrationConfig(
        min_group_size=config.param("min_group_size", 20),
        validation_split=config.param("validation_split", 0.20),
        min_accuracy_retention=config.param("min_accuracy_retention", 0.90),
        threshold_step=config.param("threshold_step", 0.02),
        per_group_mode=config.param("per_group_mode", False),
        seed=config.seed,
    )
    train, test = _split(data, config, stratify=True)
    fit_part, calib = _split(train, config, stratify=True, test_size=calibration.validation_split)

    baseline = _fit_classifier(config, fit_part)
    calib_scores = baseline.class_scores(calib.features)[:, 1]
    test_scores = baseline.class_scores(test.features)[:, 1]
    base_decisions = (test_scores > 0.5).astype(int)
    base_report = group_report(base_decisions, test.labels, test.sensitive, calibration.min_group_size)

    keys, _, accuracies, sizes = baseline_group_accuracies(calib_scores, calib.labels, calib.sensitive)
    worst = select_worst_off_groups(keys, accuracies, sizes, calibration)

    extras = {}
    model = baseline
    decisions = base_decisions
    if config.mode == "posthoc":
        policy = calibrate_rawlsian_thresholds(calib_scores, calib.labels, calib.sensitive, calibration)
        decisions = apply_threshold_policy(test_scores, test.sensitive, policy)
        extras["policy"] = policy.to_dict()
    elif config.mode == "intrinsic":
        if config.model == "forest":
            rawls = RawlsianForestConfig(
                lam=config.param("rawls_lambda", 0.3), min_group_size=calibration.min_group_size
            )
            model = rawlsian_forest_fit(fit_part, fit_part.sensitive, _forest_params(config), rawls)
        else:
            rawls = RawlsianLossConfig(
                lam=config.param("rawls_lambda", 0.7), min_group_size=calibration.min_group_size
            )
            model = rawlsian_mlp_fit(fit_part, fit_part.sensitive, _mlp_params(config), rawls)
        decisions = (model.class_scores(test.features)[:, 1] > 0.5).astype(int)
        extras["rawlsian_lambda"] = rawls.lam

    report = group_report(decisions, test.labels, test.sensitive, calibration.min_group_size)
    equity = equity_deltas(base_report, report, worst)

    metrics = {
        "accuracy": report.overall_accuracy,
        "accuracy_before": base_report.overall_accuracy,
        "positive_rate": report.overall_positive_rate,
        "positive_rate_before": base_report.overall_positive_rate,
        "violation_rate_before": None,
        "violation_rate_after": None,
        "disparities": report.disparities,
        "disparities_before": base_report.disparities,
    }
    extras.update({
        "groups": report.to_rows(),
        "groups_baseline": base_report.to_rows(),
        "equity": equity.to_dict(),
    })
    params = {
        **_model_params_dict(config),
        "min_group_size": calibration.min_group_size,
        "validation_split": calibration.validation_split,
        "min_accuracy_retention": calibration.min_accuracy_retention,
        "threshold_step": calibration.threshold_step,
        "per_group_mode": calibration.per_group_mode,
    }
    return params, metrics, extras, model


RUNNERS = {
    "exclusion": run_exclusion,
    "hierarchy": run_hierarchy,
    "constraint-loss": run_constraint_loss,
    "logic-arch": run_logic_arch,
    "counterfactual": run_counterfactual,
    "env-ensemble": run_env_ensemble,
    "hiring": run_hiring,
}

# ===================== КОМАНДЫ =====================

def cmd_gen(scenario: str, seed: int, n, out_path) -> Path:
    """Генерирует набор сценария и пишет его в CSV (или .xlsx)."""
    if not out_path:
        raise UsageError("Не указан --out для команды gen")
    data = generate_dataset(scenario, seed, n)
    return save_dataset(data, out_path)


def run_experiment(config: RunConfig, data: Dataset = None):
    """Прогоняет сценарий и возвращает (отчёт, обученная модель)."""
    if data is None:
        data = generate_dataset(config.scenario, config.seed, overrides=config.overrides)
    _require_columns(data, config.scenario)

    logger.info(f"🚀 Сценарий {config.scenario}: модель {config.model}, режим {config.mode}, seed {config.seed}")
    params, metrics, extras, model = RUNNERS[config.scenario](config, data)

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario": config.scenario,
        "model": config.model,
        "mode": config.mode,
        "seed": config.seed,
        "params": {**params, "n_rows": data.n_rows},
        "metrics": metrics,
        **extras,
    }
    before, after = metrics.get("violation_rate_before"), metrics.get("violation_rate_after")
    if before is not None:
        logger.info(f"📊 Нарушения: до {before:.4f}" + (f", после {after:.4f}" if after is not None else ""))
    return report, model


def cmd_run(config: RunConfig, out_path=None, data_path=None, save_model_path=None) -> dict:
    """Запуск сценария; отчёт пишется в out_path или печатается в stdout."""
    data = load_dataset(data_path) if data_path else None
    report, model = run_experiment(config, data)

    if out_path:
        save_json(report, out_path)
        logger.info(f"✅ Отчёт сохранён: {out_path}")
    else:
        print(to_json_text(report), end="")
    if save_model_path:
        save_model(model, save_model_path)
    return report


def summarize_report(report: dict) -> dict:
    """Одна строка сводной таблицы; неприменимые поля остаются пустыми."""
    metrics = report.get("metrics") or {}
    env = metrics.get("env_mse") or {}
    disparities = metrics.get("disparities") or {}
    equity = report.get("equity") or {}
    return {
        "scenario": report.get("scenario"),
        "model": report.get("model"),
        "mode": report.get("mode"),
        "seed": report.get("seed"),
        "accuracy": metrics.get("accuracy"),
        "mse": metrics.get("mse"),
        "violation_rate_before": metrics.get("violation_rate_before"),
        "violation_rate_after": metrics.get("violation_rate_after"),
        "env_mse_variance": env.get("variance"),
        "env_mse_mean": env.get("mean"),
        "disparity_gender": disparities.get("gender"),
        "disparity_ethnicity": disparities.get("ethnicity"),
        "disparity_ses": disparities.get("ses"),
        "worst_off_rate_improvement_pct": equity.get("worst_off_rate_improvement_pct"),
        "gap_reduction_pct": equity.get("gap_reduction_pct"),
        "overall_accuracy_delta": equity.get("overall_accuracy_delta"),
    }


def cmd_report(inputs, out_path) -> pd.DataFrame:
    """Сводная таблица по JSON-отчётам: CSV или .xlsx."""
    if not out_path:
        raise UsageError("Не указан --out для команды report")
    rows = []
    for path in inputs or ():
        report = load_json(path)
        if not isinstance(report, dict) or "scenario" not in report:
            raise DataError(f"{path} не похож на отчёт эксперимента")
        rows.append(summarize_report(report))

    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    target = Path(out_path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.suffix.lower() == ".xlsx":
        frame.to_excel(target, index=False, engine="openpyxl")
    else:
        frame.to_csv(target, index=False, float_format="%.17g", lineterminator="\n")
    logger.info(f"✅ Сводка по {len(rows)} отчётам: {target}")
    return frame
