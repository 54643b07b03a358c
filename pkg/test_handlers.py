#!/usr/bin/env python3
"""Тесты прогона сценариев целиком."""

import os
import sys

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from config import RunConfig
from handlers import SUMMARY_COLUMNS, generate_dataset, run_experiment, summarize_report
from utils import DataError, UsageError, to_json_text

SMALL_FOREST = {"n_trees": 10, "max_depth": 6}
SMALL_MLP = {"hidden_dim": 8, "hidden_layers": 1, "epochs": 5}


def run(scenario, model, mode, seed=42, **overrides):
    report, _ = run_experiment(RunConfig(scenario, model, mode, seed, overrides))
    return report


def test_report_header():
    report = run("exclusion", "linear", "baseline", n=200)
    assert list(report)[:6] == ["schema_version", "scenario", "model", "mode", "seed", "params"]
    assert report["schema_version"] == 1
    assert report["params"]["n_rows"] == 200
    assert "violation_rate_after" not in report["metrics"]


def test_exclusion_posthoc_removes_violations():
    metrics = run("exclusion", "forest", "posthoc", n=300, **SMALL_FOREST)["metrics"]
    assert metrics["violation_rate_after"] == 0.0
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert "accuracy_before" in metrics


def test_exclusion_mlp_posthoc():
    metrics = run("exclusion", "mlp", "posthoc", n=200, **SMALL_MLP)["metrics"]
    assert metrics["violation_rate_after"] == 0.0


def test_hierarchy_posthoc_does_not_increase_violations():
    metrics = run("hierarchy", "linear", "posthoc", n=400)["metrics"]
    assert metrics["violation_rate_after"] <= metrics["violation_rate_before"]


def test_constraint_loss_intrinsic_runs():
    report = run("constraint-loss", "linear", "intrinsic", n=300, lam=10.0)
    assert report["params"]["lambda"] == 10.0
    assert {"accuracy", "accuracy_before", "violation_rate_after"} <= set(report["metrics"])


def test_logic_arch_intrinsic_has_no_exclusion_violations():
    metrics = run("logic-arch", "forest", "intrinsic", n=300, **SMALL_FOREST)["metrics"]
    assert metrics["exclusion_violation_rate_after"] == 0.0


@pytest.mark.parametrize("model,overrides", [("linear", {}), ("forest", SMALL_FOREST)])
def test_counterfactual_posthoc(model, overrides):
    metrics = run("counterfactual", model, "posthoc", n=300, **overrides)["metrics"]
    assert metrics["violation_rate_after"] == 0.0
    assert metrics["factual_mse_before"] == metrics["factual_mse_after"]
    assert metrics["mean_abs_cf_change"] >= 0.0


def test_env_ensemble_lowers_variance():
    metrics = run("env-ensemble", "linear", "intrinsic", n_per_env=250)["metrics"]
    assert sorted(metrics["env_mse"]["per_env"]) == ["2", "3"]
    assert metrics["env_mse"]["variance"] < metrics["env_mse_before"]["variance"]
    assert metrics["violation_rate_after"] == metrics["env_mse"]["variance"]


def test_hiring_posthoc_retains_accuracy():
    report = run("hiring", "forest", "posthoc", n_trees=20, max_depth=8)
    policy = report["policy"]
    assert not policy["infeasible"]
    assert policy["calibrated_accuracy"] >= 0.9 * policy["baseline_accuracy"] - 1e-12
    assert report["metrics"]["violation_rate_before"] is None
    assert set(report["metrics"]["disparities"]) == {"gender", "ethnicity", "ses"}
    assert report["equity"]["worst_off_groups"]
    assert len(report["groups"]) == len(report["groups_baseline"]) == 10


def test_hiring_per_group_mode():
    report = run("hiring", "linear", "posthoc", per_group_mode=True)
    assert report["policy"]["shared_worst_off_threshold"] is None
    assert set(report["policy"]["per_group_thresholds"]) == set(report["policy"]["worst_off_groups"])


@pytest.mark.parametrize("model,overrides", [("forest", SMALL_FOREST), ("mlp", SMALL_MLP)])
def test_hiring_intrinsic_runs(model, overrides):
    report = run("hiring", model, "intrinsic", n=600, **overrides)
    assert "rawlsian_lambda" in report
    assert "policy" not in report


def test_hiring_mlp_trains_full_batch_by_default():
    report = run("hiring", "mlp", "intrinsic", n=600, **SMALL_MLP)
    assert report["params"]["batch_size"] is None
    override = run("hiring", "mlp", "intrinsic", n=600, batch_size=64, **SMALL_MLP)
    assert override["params"]["batch_size"] == 64


def test_runs_are_deterministic():
    first = to_json_text(run("hiring", "forest", "posthoc", n=600, **SMALL_FOREST))
    second = to_json_text(run("hiring", "forest", "posthoc", n=600, **SMALL_FOREST))
    assert first == second


def test_missing_columns_are_data_errors():
    data = generate_dataset("exclusion", 42, 50)
    with pytest.raises(DataError):
        run_experiment(RunConfig("counterfactual", "linear", "posthoc"), data)
    with pytest.raises(DataError):
        run_experiment(RunConfig("hiring", "linear", "posthoc"), data)


def test_unsupported_combination():
    with pytest.raises(UsageError):
        RunConfig("hierarchy", "mlp", "posthoc")


def test_summarize_report_fills_blanks():
    row = summarize_report(run("counterfactual", "linear", "baseline", n=100))
    assert list(row) == SUMMARY_COLUMNS
    assert row["accuracy"] is None
    assert np.isfinite(row["mse"])
