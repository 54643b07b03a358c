#!/usr/bin/env python3
"""Тесты пост-обработки: исключение, импликации, контрфакты, калибровка порогов."""

import math
import os
import sys

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pandas as pd
import pytest

from constraints import (
    ConstraintSet,
    RepairConfig,
    counterfactual_violation_rate,
    exclusion_violation_rate,
    implication_violation_rate,
)
from enforcers import (
    CalibrationConfig,
    ThresholdPolicy,
    apply_implication_transfer,
    apply_mutual_exclusion,
    apply_threshold_policy,
    calibrate_rawlsian_thresholds,
    counterfactual_matrix,
    repair_counterfactuals,
    select_worst_off_groups,
)
from learners import softmax
from metrics import group_membership
from utils import UsageError

HIERARCHY = ConstraintSet(exclusions=[(0, 2)], implications=[(2, 1), (1, 0)])


@pytest.fixture
def random_scores():
    rng = np.random.default_rng(12)
    return softmax(2.0 * rng.normal(size=(500, 3)))


class TreatmentModel:
    """Исход = x0 + 10 · номер лечения."""

    def predict(self, X):
        return X[:, 0] + 10.0 * X[:, -1]

# ===================== ИСКЛЮЧЕНИЕ =====================

def test_exclusion_worked_examples():
    cs = ConstraintSet(exclusions=[(0, 1)])
    repaired = apply_mutual_exclusion(np.array([[0.9, 0.8], [0.6, 0.5], [0.7, 0.7], [0.9, 0.1]]), cs)
    assert repaired[0].tolist() == pytest.approx([0.9, 0.399999], abs=1e-12)
    assert repaired[1].tolist() == pytest.approx([0.6, 0.35])
    # ничья: уменьшается класс с большим индексом
    assert repaired[2].tolist() == pytest.approx([0.7, 0.399999], abs=1e-12)
    assert repaired[3].tolist() == [0.9, 0.1]


def test_exclusion_properties(random_scores):
    cs = ConstraintSet(exclusions=[(0, 1), (1, 2), (0, 2)], tau=0.3)
    assert exclusion_violation_rate(random_scores, cs) > 0
    repaired = apply_mutual_exclusion(random_scores, cs)
    assert exclusion_violation_rate(repaired, cs) == 0.0
    assert np.array_equal(repaired.argmax(axis=1), random_scores.argmax(axis=1))
    assert np.all(repaired <= random_scores)


def test_exclusion_idempotent_and_local():
    rng = np.random.default_rng(21)
    for _ in range(100):
        table = rng.random((40, 4))
        cs = ConstraintSet(exclusions=[(0, 1), (1, 2)], tau=float(rng.choice([0.3, 0.4, 0.5])))
        once = apply_mutual_exclusion(table, cs)
        assert np.array_equal(apply_mutual_exclusion(once, cs), once)
        assert np.array_equal(once[:, 3], table[:, 3])
        assert exclusion_violation_rate(once, cs) == 0.0


def test_exclusion_does_not_mutate_input():
    scores = np.array([[0.9, 0.8]])
    apply_mutual_exclusion(scores, ConstraintSet(exclusions=[(0, 1)]))
    assert scores.tolist() == [[0.9, 0.8]]


def test_exclusion_empty_table():
    assert apply_mutual_exclusion(np.zeros((0, 2)), ConstraintSet(exclusions=[(0, 1)])).shape == (0, 2)

# ===================== ИМПЛИКАЦИИ =====================

def test_transfer_worked_examples():
    cs = ConstraintSet(implications=[(0, 1)])
    repaired = apply_implication_transfer(np.array([[0.7, 0.2], [0.45, 0.10], [0.3, 0.1]]), cs)
    assert repaired[0, 1] == 0.4
    assert repaired[1, 1] == pytest.approx(0.235)
    assert repaired[2].tolist() == [0.3, 0.1]


def test_transfer_idempotent_on_closed_rows():
    cs = ConstraintSet(implications=[(0, 1)])
    once = apply_implication_transfer(np.array([[0.7, 0.2]]), cs)
    twice = apply_implication_transfer(once, cs)
    assert np.array_equal(once, twice)


def test_transfer_properties(random_scores):
    before = implication_violation_rate(random_scores, HIERARCHY)
    assert before > 0
    repaired = apply_implication_transfer(random_scores, HIERARCHY)
    assert implication_violation_rate(repaired, HIERARCHY) <= before
    assert np.all(repaired >= random_scores)
    assert np.all(repaired <= np.maximum(random_scores, HIERARCHY.tau))


def test_transfer_chain_order():
    # 2 → 1 поднимает p_1 до tau, но не выше, поэтому ребро 1 → 0 не срабатывает
    repaired = apply_implication_transfer(np.array([[0.05, 0.2, 0.9]]), HIERARCHY)
    assert repaired[0].tolist() == [0.05, 0.4, 0.9]


def test_constraint_outside_table():
    with pytest.raises(UsageError):
        apply_implication_transfer(np.full((1, 2), 0.5), HIERARCHY)

# ===================== КОНТРФАКТЫ =====================

def test_repair_worked_examples():
    repaired = repair_counterfactuals([5.0, 5.0, 5.0], [8.0, 2.0, 6.5], RepairConfig(tau_cf=2.0))
    assert repaired[:, 0].tolist() == [7.0, 3.0, 6.5]


def test_repair_properties():
    rng = np.random.default_rng(3)
    factual = rng.normal(size=200) * 3
    cf = factual[:, None] + rng.normal(size=(200, 2)) * 4
    config = RepairConfig(tau_cf=1.5)
    assert counterfactual_violation_rate(factual, cf, config) > 0
    repaired = repair_counterfactuals(factual, cf, config)
    assert counterfactual_violation_rate(factual, repaired, config) == 0.0
    inside = np.abs(cf - factual[:, None]) <= 1.5
    assert np.array_equal(repaired[inside], cf[inside])
    assert np.all(np.sign(repaired - factual[:, None]) == np.sign(cf - factual[:, None]))


def test_repair_idempotent_and_exact_inside_band():
    rng = np.random.default_rng(22)
    for _ in range(100):
        factual = rng.normal(size=30) * 5
        cf = factual[:, None] + rng.normal(size=(30, 2)) * 3
        config = RepairConfig(tau_cf=float(rng.uniform(0.1, 3.0)))
        once = repair_counterfactuals(factual, cf, config)
        twice = repair_counterfactuals(factual, once, config)
        assert np.array_equal(twice, once)
        inside = np.abs(cf - factual[:, None]) <= config.tau_cf
        assert np.array_equal(once[inside], cf[inside])
        assert np.all(np.abs(once - factual[:, None]) <= config.tau_cf)


def test_repair_shape_mismatch():
    with pytest.raises(UsageError):
        repair_counterfactuals([1.0], [[1.0], [2.0]], RepairConfig())


def test_counterfactual_matrix_order():
    features = np.array([[1.0], [2.0]])
    factual, cf = counterfactual_matrix(TreatmentModel(), features, np.array([1, 0]))
    assert factual.tolist() == [11.0, 2.0]
    assert cf.tolist() == [[1.0, 21.0], [12.0, 22.0]]


def test_counterfactual_matrix_bad_treatment():
    with pytest.raises(UsageError):
        counterfactual_matrix(TreatmentModel(), np.zeros((1, 1)), np.array([3]))

# ===================== КАЛИБРОВКА =====================

@pytest.fixture
def calibration_example():
    groups = pd.DataFrame({"g": ["A", "A", "B", "B"]})
    scores = np.array([0.6, 0.2, 0.35, 0.1])
    labels = np.array([1, 0, 1, 0])
    return scores, labels, groups


def test_grid():
    grid = CalibrationConfig().grid()
    assert grid[0] == 0.02 and grid[-1] == 0.98
    assert len(grid) == 49
    assert 0.34 in grid.tolist()


def test_shared_threshold_worked_example(calibration_example):
    scores, labels, groups = calibration_example
    policy = calibrate_rawlsian_thresholds(scores, labels, groups, CalibrationConfig(min_group_size=1))
    assert policy.worst_off_groups == ("g=B",)
    assert policy.shared_worst_off_threshold == 0.34
    assert policy.objective == pytest.approx(1.0)
    assert policy.baseline_accuracy == 0.75
    assert policy.calibrated_accuracy == 1.0
    assert apply_threshold_policy(scores, groups, policy).tolist() == [1, 0, 1, 0]


def test_per_group_mode(calibration_example):
    scores, labels, groups = calibration_example
    config = CalibrationConfig(min_group_size=1, per_group_mode=True)
    policy = calibrate_rawlsian_thresholds(scores, labels, groups, config)
    assert policy.per_group_thresholds == {"g=B": 0.34}
    assert policy.thresholds_for(["g=A", "g=B"]) == {"g=B": 0.34}
    assert policy.to_dict()["shared_worst_off_threshold"] is None


def test_no_eligible_groups_is_infeasible(calibration_example):
    scores, labels, groups = calibration_example
    policy = calibrate_rawlsian_thresholds(scores, labels, groups, CalibrationConfig(min_group_size=20))
    assert policy.infeasible
    assert apply_threshold_policy(scores, groups, policy).tolist() == [1, 0, 0, 0]


def test_accuracy_retention_holds():
    rng = np.random.default_rng(8)
    n = 600
    groups = pd.DataFrame({
        "gender": rng.choice(["m", "f", "x"], size=n),
        "ses": rng.choice(["low", "mid", "high"], size=n),
    })
    labels = (rng.random(n) < 0.3).astype(int)
    scores = np.clip(0.3 * labels + rng.normal(0.35, 0.2, size=n), 0.0, 1.0)
    for per_group_mode in (False, True):
        config = CalibrationConfig(per_group_mode=per_group_mode)
        policy = calibrate_rawlsian_thresholds(scores, labels, groups, config)
        assert not policy.infeasible
        assert policy.calibrated_accuracy >= 0.9 * policy.baseline_accuracy - 1e-12
        decisions = apply_threshold_policy(scores, groups, policy)
        assert np.mean(decisions == labels) == pytest.approx(policy.calibrated_accuracy)


def exhaustive_shared_threshold(scores, labels, groups, config):
    """Перебор всех порогов сетки простыми циклами: (худшие группы, порог, цель)."""
    keys, matrix = group_membership(groups)
    n = len(labels)
    base_correct = [int(scores[i] > 0.5) == labels[i] for i in range(n)]
    base_accuracy = sum(base_correct) / n
    members = {j: [i for i in range(n) if matrix[i, j]] for j in range(len(keys))}
    eligible = [j for j in members if len(members[j]) >= config.min_group_size]
    if not eligible:
        return [], None, None
    accuracy_of = {j: sum(base_correct[i] for i in members[j]) / len(members[j]) for j in eligible}
    count = min(config.max_worst_off_groups, max(1, math.ceil(config.worst_off_fraction * len(eligible) - 1e-9)))
    worst = sorted(eligible, key=lambda j: (accuracy_of[j], j))[:count]
    in_worst = [any(matrix[i, j] for j in worst) for i in range(n)]

    best = None
    for k in range(1, round(1 / config.threshold_step)):
        t = round(k * config.threshold_step, 10)
        correct = [int(scores[i] > (t if in_worst[i] else 0.5)) == labels[i] for i in range(n)]
        if sum(correct) / n < config.min_accuracy_retention * base_accuracy - 1e-12:
            continue
        group_acc = [sum(correct[i] for i in members[j]) / len(members[j]) for j in worst]
        value = config.minimax_weight * min(group_acc) + config.average_weight * sum(group_acc) / len(group_acc)
        rank = (round(value, 12), -round(abs(t - 0.5), 10), -t)
        if best is None or rank > best[0]:
            best = (rank, t, value)
    return [keys[j] for j in worst], best[1], best[2]


def test_shared_threshold_matches_exhaustive_search():
    rng = np.random.default_rng(31)
    config = CalibrationConfig(min_group_size=3, threshold_step=0.1)
    for _ in range(100):
        n = int(rng.integers(12, 40))
        groups = pd.DataFrame({
            "g": rng.choice(["A", "B", "C"], size=n),
            "h": rng.choice(["X", "Y"], size=n),
        })
        labels = (rng.random(n) < 0.4).astype(int)
        # две цифры после запятой: часть оценок совпадает с точками сетки
        scores = np.round(rng.random(n), 2)
        worst, threshold, value = exhaustive_shared_threshold(scores, labels, groups, config)
        policy = calibrate_rawlsian_thresholds(scores, labels, groups, config)
        if not worst:
            assert policy.infeasible
            continue
        assert list(policy.worst_off_groups) == worst
        assert policy.shared_worst_off_threshold == threshold
        assert policy.objective == pytest.approx(value, abs=1e-12)


def test_select_worst_off_groups_cap_and_ties():
    keys = [f"g={i}" for i in range(20)]
    accuracies = [0.5] * 20
    sizes = [30] * 19 + [5]
    worst = select_worst_off_groups(keys, accuracies, sizes, CalibrationConfig())
    assert worst == ["g=0", "g=1", "g=2", "g=3", "g=4"]


def test_policy_without_groups_uses_default():
    decisions = apply_threshold_policy([0.5, 0.51], pd.DataFrame({"g": ["A", "B"]}), ThresholdPolicy())
    assert decisions.tolist() == [0, 1]


@pytest.mark.parametrize("kwargs", [
    {"threshold_step": 0.0},
    {"minimax_weight": 0.5},
    {"min_accuracy_retention": 1.5},
    {"validation_split": 1.0},
    {"min_group_size": 0},
])
def test_calibration_config_validation(kwargs):
    with pytest.raises(UsageError):
        CalibrationConfig(**kwargs)
