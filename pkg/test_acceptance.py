#!/usr/bin/env python3
"""Сквозные проверки сценариев с seed 42 на конфигурации по умолчанию."""

import os
import sys
from statistics import median

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import pytest

from config import RunConfig
from handlers import run_experiment

SEED = 42


def metrics_of(scenario, model, mode, seed=SEED, **overrides):
    report, _ = run_experiment(RunConfig(scenario, model, mode, seed, overrides))
    return report["metrics"], report


@pytest.mark.parametrize("model", ["forest", "linear"])
def test_exclusion_repair(model):
    m, _ = metrics_of("exclusion", model, "posthoc")
    assert m["violation_rate_before"] > 0.05
    assert m["violation_rate_after"] == 0.0
    assert abs(m["accuracy"] - m["accuracy_before"]) <= 0.02


@pytest.mark.parametrize("model", ["forest", "linear"])
def test_hierarchy_repair(model):
    m, _ = metrics_of("hierarchy", model, "posthoc")
    assert m["violation_rate_before"] > 0.10
    assert m["violation_rate_after"] <= 0.5 * m["violation_rate_before"]
    assert abs(m["accuracy"] - m["accuracy_before"]) <= 0.02


def test_constraint_aware_forest():
    m, _ = metrics_of("constraint-loss", "forest", "intrinsic")
    assert m["violation_rate_before"] - m["violation_rate_after"] >= 0.02
    assert m["accuracy"] - m["accuracy_before"] >= -0.01


def test_logic_guided_forest():
    m, _ = metrics_of("logic-arch", "forest", "intrinsic")
    assert m["exclusion_violation_rate_after"] == 0.0
    assert m["violation_rate_after"] <= 0.6 * m["violation_rate_before"]


@pytest.mark.parametrize("model", ["forest", "linear"])
def test_counterfactual_repair(model):
    m, _ = metrics_of("counterfactual", model, "posthoc")
    assert 0.10 < m["violation_rate_before"] < 0.70
    assert m["violation_rate_after"] == 0.0
    assert m["factual_mse_before"] == m["factual_mse_after"]


@pytest.mark.parametrize("model, overrides", [("linear", {}), ("forest", {"n_trees": 30})])
def test_env_ensemble_over_five_seeds(model, overrides):
    base_var, ens_var, base_mean, ens_mean = [], [], [], []
    for seed in range(SEED, SEED + 5):
        m, _ = metrics_of("env-ensemble", model, "intrinsic", seed, **overrides)
        base_var.append(m["env_mse_before"]["variance"])
        ens_var.append(m["env_mse"]["variance"])
        base_mean.append(m["env_mse_before"]["mean"])
        ens_mean.append(m["env_mse"]["mean"])
    assert median(ens_var) < median(base_var)
    assert median(ens_mean) <= 1.05 * median(base_mean)


def test_hiring_calibration_lifts_worst_off():
    _, report = metrics_of("hiring", "forest", "posthoc")
    policy = report["policy"]
    equity = report["equity"]
    assert not policy["infeasible"]
    assert policy["calibrated_accuracy"] >= 0.9 * policy["baseline_accuracy"] - 1e-12
    assert equity["base_gap"] > 0
    assert equity["worst_off_rate_improvement_pct"] > 20
    assert equity["gap_reduction_pct"] > 50
