#!/usr/bin/env python3
"""Диагностика: прогоняет все сценарии с seed 42 и проверяет ключевые свойства."""

import os
import sys
from pathlib import Path
from statistics import median

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import RESULTS_DIR, RunConfig
from handlers import run_experiment
from utils import save_json

SEED = 42


def _run(scenario, model, mode, seed=SEED, **overrides):
    report, _ = run_experiment(RunConfig(scenario, model, mode, seed, overrides))
    save_json(report, Path(RESULTS_DIR) / "acceptance" / f"{scenario}_{model}_{mode}_{seed}.json")
    return report["metrics"], report


def _line(ok: bool, text: str) -> bool:
    print(f"   {'✅' if ok else '❌'} {text}")
    return ok


def check_exclusion():
    print("\n1. 📄 Исключение договор/патент...")
    results = []
    for model in ("forest", "linear"):
        m, _ = _run("exclusion", model, "posthoc")
        results.append(_line(m["violation_rate_before"] > 0.05, f"{model}: до {m['violation_rate_before']:.3f} > 0.05"))
        results.append(_line(m["violation_rate_after"] == 0.0, f"{model}: после {m['violation_rate_after']:.3f} == 0"))
        delta = abs(m["accuracy"] - m["accuracy_before"])
        results.append(_line(delta <= 0.02, f"{model}: изменение точности {delta:.3f} <= 0.02"))
    return all(results)


def check_hierarchy():
    print("\n2. 🩺 Иерархия симптомов...")
    results = []
    for model in ("forest", "linear"):
        m, _ = _run("hierarchy", model, "posthoc")
        before, after = m["violation_rate_before"], m["violation_rate_after"]
        results.append(_line(before > 0.10, f"{model}: до {before:.3f} > 0.10"))
        results.append(_line(after <= 0.5 * before, f"{model}: после {after:.3f} <= половины"))
        delta = abs(m["accuracy"] - m["accuracy_before"])
        results.append(_line(delta <= 0.02, f"{model}: изменение точности {delta:.3f} <= 0.02"))
    return all(results)


def check_constraint_loss():
    print("\n3. ⚖️ Обучение со штрафом за нарушения...")
    m, _ = _run("constraint-loss", "forest", "intrinsic")
    drop = m["violation_rate_before"] - m["violation_rate_after"]
    acc = m["accuracy"] - m["accuracy_before"]
    ok = _line(drop >= 0.02, f"падение нарушений {drop:.3f} >= 0.02")
    return _line(acc >= -0.01, f"изменение точности {acc:.3f} >= -0.01") and ok


def check_logic_arch():
    print("\n4. 🧠 Логический слой...")
    m, _ = _run("logic-arch", "forest", "intrinsic")
    ok = _line(m["exclusion_violation_rate_after"] == 0.0, "нарушений исключения нет")
    before, after = m["violation_rate_before"], m["violation_rate_after"]
    return _line(after <= 0.6 * before, f"импликации {before:.3f} → {after:.3f} (падение >= 40%)") and ok


def check_counterfactual():
    print("\n5. 💊 Контрфактические предсказания...")
    results = []
    for model in ("forest", "linear"):
        m, _ = _run("counterfactual", model, "posthoc")
        results.append(_line(0.10 < m["violation_rate_before"] < 0.70, f"{model}: до {m['violation_rate_before']:.3f}"))
        results.append(_line(m["violation_rate_after"] == 0.0, f"{model}: после ремонта 0"))
        results.append(_line(m["factual_mse_before"] == m["factual_mse_after"], f"{model}: MSE не изменилась"))
    return all(results)


def check_env_ensemble():
    print("\n6. 🌍 Ансамбль по средам (5 seed)...")
    results = []
    for model in ("linear", "forest"):
        base_var, ens_var, base_mean, ens_mean = [], [], [], []
        for seed in range(SEED, SEED + 5):
            overrides = {"n_trees": 30} if model == "forest" else {}
            m, _ = _run("env-ensemble", model, "intrinsic", seed, **overrides)
            base_var.append(m["env_mse_before"]["variance"])
            ens_var.append(m["env_mse"]["variance"])
            base_mean.append(m["env_mse_before"]["mean"])
            ens_mean.append(m["env_mse"]["mean"])
        results.append(_line(median(ens_var) < median(base_var),
                             f"{model}: медиана Var {median(base_var):.3f} → {median(ens_var):.3f}"))
        results.append(_line(median(ens_mean) <= 1.05 * median(base_mean),
                             f"{model}: медиана MSE {median(base_mean):.3f} → {median(ens_mean):.3f}"))
    return all(results)


def check_hiring():
    print("\n7. 🤝 Rawlsian-калибровка найма...")
    m, report = _run("hiring", "forest", "posthoc")
    policy = report["policy"]
    equity = report["equity"]
    results = []
    if policy["infeasible"]:
        results.append(_line(False, "калибровка невыполнима"))
    else:
        retained = policy["calibrated_accuracy"] >= 0.9 * policy["baseline_accuracy"] - 1e-12
        results.append(_line(retained, f"удержание точности {policy['calibrated_accuracy']:.3f}"))
        print(f"   📊 Порог для {policy['worst_off_groups']}: {policy['shared_worst_off_threshold']}")
    improvement = equity["worst_off_rate_improvement_pct"]
    gap = equity["gap_reduction_pct"]
    results.append(_line(improvement is not None and improvement > 20, f"рост найма худших групп: {improvement}"))
    results.append(_line(gap is not None and gap > 50, f"сокращение разрыва: {gap}"))
    return all(results)


def main():
    print("🔧 ПРОВЕРКА СЦЕНАРИЕВ")
    print("=" * 60)
    checks = [
        check_exclusion, check_hierarchy, check_constraint_loss, check_logic_arch,
        check_counterfactual, check_env_ensemble, check_hiring,
    ]
    passed = 0
    for check in checks:
        try:
            if check():
                passed += 1
        except Exception as e:
            print(f"   ❌ {check.__name__}: {e}")

    print("\n" + "=" * 60)
    print(f"🎉 Пройдено {passed} из {len(checks)}")
    return 0 if passed == len(checks) else 1


if __name__ == '__main__':
    sys.exit(main())
