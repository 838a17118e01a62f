import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from acoilab.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main, run
from acoilab.config import ConfigError, config_hash, load_config
from acoilab.oracles import relative_value_iteration
from acoilab.presets import build_preset
from acoilab.records import format_cell, read_csv


def _run(tmp_path, cfg, command, *extra, name="run"):
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / f"{name}_out"
    code, rec = run([command, "--config", str(path), "--out", str(out), *extra])
    return code, rec, out


SINGLE = {"model": {"preset": "single_state"}, "schedule": {"alphas": [0.5], "floor": 0.0}}
TWO_CYCLE = {"model": {"preset": "two_cycle"}, "schedule": {"n": 30}}
SABOTAGE = {"model": {"preset": "dam_a_default",
                      "overrides": {"inflow_params": [0.0, 1.0, 0.0], "outflow_params": [0.0, 1.0]}}}


# ---------------------------------------------------------------------------
# config parsing


def test_config_hash_is_canonical():
    a = {"model": {"preset": "two_cycle"}, "schedule": {"alpha0": 0.9, "n": 5}}
    b = {"schedule": {"n": 5, "alpha0": 0.9}, "model": {"preset": "two_cycle"}}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "horizon": 8})


@pytest.mark.parametrize("raw, path", [
    ({"modle": {}}, "modle"),
    ({"model": {"preset": "two_cycle"}, "schedule": {"alpha": [0.5]}}, "schedule.alpha"),
    ({"model": {"preset": "two_cycle"}, "tolerance": {"acoi": 1e-3, "bogus": 1}}, "tolerance.bogus"),
    ({"model": {"preset": "no_such"}}, "model.preset"),
    ({"model": {"preset": "dam_a_default", "overrides": {"kapa": 1}}}, "model.overrides"),
    ({"model": {"preset": "two_cycle"}, "checks": ["majorisation"]}, "checks[0]"),
    ({"model": {"preset": "two_cycle"}, "schedule": {"alphas": [0.9, 1.0]}}, "schedule.alphas"),
    ({"model": {"preset": "two_cycle"}, "schedule": {"alphas": [0.99, 0.9]}}, "schedule.alphas"),
    ({"model": {"preset": "two_cycle"}, "output": {"formats": ["xml"]}}, "output.formats"),
    ({"schedule": {}}, "model"),
])
def test_config_errors_name_field(raw, path):
    with pytest.raises(ConfigError) as exc:
        load_config(raw)
    assert exc.value.path == path


def test_config_defaults():
    cfg = load_config({"model": {"preset": "two_cycle"}})
    assert len(cfg.alphas) == 21 and cfg.alphas[0] == 0.9
    assert cfg.alphas[-1] == pytest.approx(1 - 0.1 * 2.0**-20, abs=1e-15)
    assert cfg.epsilons == (0.1, 0.01)


# ---------------------------------------------------------------------------
# exit-code contract


def test_solve_single_state(tmp_path):
    code, rec, out = _run(tmp_path, SINGLE, "solve-discounted")
    assert code == EXIT_OK
    header, rows = read_csv(out / "value_functions.csv")
    assert header == ["state", "center", "v_alpha_0"]
    assert float(rows[0][2]) == pytest.approx(6.0, abs=1e-12)


def test_solve_alpha_one_is_config_error(tmp_path, capsys):
    cfg = {"model": {"preset": "single_state"}, "schedule": {"alphas": [0.5, 1.0]}}
    code, rec, _ = _run(tmp_path, cfg, "solve-discounted")
    assert code == EXIT_CONFIG and rec is None
    assert "schedule.alphas" in capsys.readouterr().err


def test_solve_dam_value_bound(tmp_path):
    cfg = {"model": {"preset": "dam_a_default"}, "schedule": {"alphas": [0.99], "floor": 0.0}}
    code, rec, _ = _run(tmp_path, cfg, "solve-discounted")
    assert code == EXIT_OK
    row = rec.outputs["per_alpha"][0]
    assert row["value_bound_margin"] >= 0 and row["recomputed_residual"] <= 1e-9


def test_vanishing_two_cycle(tmp_path):
    code, rec, out = _run(tmp_path, TWO_CYCLE, "vanishing-discount")
    assert code == EXIT_OK
    assert rec.outputs["rho_star"] == pytest.approx(2.0, abs=1e-9)
    _, rows = read_csv(out / "envelopes.csv")
    assert min(float(r[4]) for r in rows) >= -1e-9


def test_vanishing_dam_matches_rvi(tmp_path):
    code, rec, _ = _run(tmp_path, {"model": {"preset": "dam_a_default"}}, "vanishing-discount")
    assert code == EXIT_OK
    rvi = relative_value_iteration(build_preset("dam_a_default"))
    assert abs(rec.outputs["rho_star"] - rvi.gain) <= 1e-3


def test_vanishing_sabotage_exit_3(tmp_path):
    code, rec, _ = _run(tmp_path, SABOTAGE, "vanishing-discount")
    assert code == EXIT_FAILURE
    assert rec.status == "failed" and "negative mean" in rec.outputs["error"]


def test_vanishing_failed_prerequisite(tmp_path):
    cfg = {"model": {"preset": "disconnected_pair"}, "checks": ["h_family_bounded"]}
    code, rec, _ = _run(tmp_path, cfg, "vanishing-discount")
    assert code == EXIT_FAILURE
    code, rec, _ = _run(tmp_path, cfg, "vanishing-discount", "--override-checks", name="override")
    assert rec.override_checks and rec.outputs["overridden_checks"] == ["h_family_bounded"]


def test_verify_dam_passes(tmp_path):
    cfg = {"model": {"preset": "dam_a_default"},
           "checks": ["uc_model", "drift_exponential", "h_family_bounded", "compact_action_inf",
                      "majorization", "uniform_integrability"]}
    code, rec, out = _run(tmp_path, cfg, "verify")
    assert code == EXIT_OK
    _, rows = read_csv(out / "assumption_report.csv")
    assert [r[1] for r in rows] == ["pass"] * 6


def test_verify_gaussian_majorization_fails(tmp_path):
    cfg = {"model": {"preset": "gaussian_mean_a"}, "checks": ["majorization"],
           "check_options": {"majorization": {"refinements": [{"refine": 2}, {"refine": 4}]}}}
    code, rec, _ = _run(tmp_path, cfg, "verify")
    assert code == EXIT_FAILURE
    entry = rec.outputs["report"]["entries"][0]
    assert entry["status"] == "fail"
    masses = entry["constants"]["continuum_masses"]
    assert masses[0] < masses[1] < masses[2]


def test_verify_empty_checks(tmp_path):
    code, rec, _ = _run(tmp_path, {"model": {"preset": "two_cycle"}, "checks": []}, "verify")
    assert code == EXIT_CONFIG


def test_vanishing_schedule_shorter_than_window(tmp_path):
    cfg = {"model": {"preset": "two_cycle"}, "schedule": {"alphas": [0.99, 0.999]}}
    code, rec, _ = _run(tmp_path, cfg, "vanishing-discount")
    assert code == EXIT_CONFIG and "schedule.alphas" in rec.outputs["error"]


def test_verify_unknown_condition(tmp_path):
    code, _, _ = _run(tmp_path, {"model": {"preset": "two_cycle"}, "checks": ["acoe"]}, "verify")
    assert code == EXIT_CONFIG


def test_verify_unknown_check_option(tmp_path):
    cfg = {"model": {"preset": "two_cycle"}, "checks": ["condition_B"],
           "check_options": {"condition_B": {"varient": "liminf"}}}
    code, rec, _ = _run(tmp_path, cfg, "verify")
    assert code == EXIT_CONFIG and "check_options.condition_B.varient" in rec.outputs["error"]


def test_minimum_pair_stay_cheap(tmp_path):
    cfg = {"model": {"preset": "stay_cheap"}, "seeds": [{"policy": [0, 0], "start": 0}]}
    code, rec, _ = _run(tmp_path, cfg, "minimum-pair")
    assert code == EXIT_OK
    assert rec.outputs["pair_cost"] == pytest.approx(1.0, abs=1e-12)
    assert rec.outputs["oracle"]["regime"] == "exhaustive"


def test_minimum_pair_lq_reference_seed(tmp_path):
    code, rec, _ = _run(tmp_path, {"model": {"preset": "lq_default"}, "policy": "reference"}, "minimum-pair")
    assert code == EXIT_OK
    assert rec.outputs["pair_cost"] <= rec.outputs["seed_costs"][0] + 1e-9
    assert rec.outputs["invariance_residual"] <= 1e-9


def test_minimum_pair_no_finite_seed(tmp_path):
    cfg = {"model": {"grid": {"lo": 0.0, "hi": 2.0, "cells": 2}, "actions": [0.0],
                     "kernel": {"tensor": [[[0.0, 1.0]], [[0.0, 1.0]]]},
                     "cost": {"table": [[1.0], [float("inf")]]}},
           "seeds": [{"policy": "first", "start": 0}]}
    code, rec, _ = _run(tmp_path, cfg, "minimum-pair")
    assert code == EXIT_FAILURE


def test_evaluate_two_cycle_trend(tmp_path):
    code, rec, out = _run(tmp_path, {**TWO_CYCLE, "horizon": 1024, "start": 0}, "evaluate")
    assert code == EXIT_OK
    _, rows = read_csv(out / "trend.csv")
    trend = [float(r[1]) for r in rows]
    assert abs(trend[-1] - 2.0) <= 1e-12
    assert abs(trend[-1] - 2.0) <= abs(trend[0] - 2.0)


def test_evaluate_zero_cost(tmp_path):
    code, rec, _ = _run(tmp_path, {"model": {"preset": "zero_cost"}}, "evaluate")
    assert code == EXIT_OK and rec.outputs["trend_final"] == 0.0


def test_evaluate_acoi_policy_on_dam(tmp_path):
    cfg = {"model": {"preset": "dam_a_default"}, "policy": "acoi"}
    code, rec, _ = _run(tmp_path, cfg, "evaluate")
    assert code == EXIT_OK
    assert rec.outputs["limit_gain"] <= rec.outputs["optimality_bound"]
    assert rec.outputs["trend_final"] <= rec.outputs["optimality_bound"] + 1e-3


def test_evaluate_inadmissible_policy_file(tmp_path):
    pol = tmp_path / "policy.yaml"
    pol.write_text("[1, 1]\n")
    code, rec, _ = _run(tmp_path, {"model": {"preset": "stay_cheap"}}, "evaluate", "--policy", str(pol))
    assert code == EXIT_CONFIG
    assert "policy[1]" in rec.outputs["error"]


def test_missing_config_file(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


# ---------------------------------------------------------------------------
# records


def test_determinism_across_runs_and_threads(tmp_path):
    cfg = {"model": {"preset": "dam_a_default"}}
    outs = []
    for i, threads in enumerate(("1", "1", "4")):
        code, rec, out = _run(tmp_path, cfg, "vanishing-discount", "--threads", threads, name=f"r{i}")
        assert code == EXIT_OK
        outs.append((rec.to_json(include_clock=False), {p.name: p.read_bytes() for p in out.glob("*.csv")}))
    assert outs[0] == outs[1] == outs[2]
    assert json.loads(outs[0][0])["run_id"].startswith("vanishing-discount-")


def test_csv_format(tmp_path):
    code, rec, out = _run(tmp_path, TWO_CYCLE, "vanishing-discount")
    files = sorted(out.glob("*.csv"))
    assert files
    for p in files:
        raw = p.read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")
        header, rows = read_csv(p)
        assert all(len(r) == len(header) for r in rows)
        for r in rows:
            for cell in r:
                try:
                    x = float(cell)
                except ValueError:
                    continue
                if any(ch in cell for ch in ".en") and np.isfinite(x):
                    assert cell == "%.17g" % x
    record = json.loads((out / "record.json").read_text())
    assert record["config_hash"] == rec.config_hash and record["exit_code"] == 0


def test_format_cell():
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell(True) == "true"
    assert format_cell(3) == "3"
    assert format_cell(None) == ""


# ---------------------------------------------------------------------------
# shipped sample configs

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("command, name, expected", [
    ("vanishing-discount", "dam_vanishing", EXIT_OK),
    ("vanishing-discount", "two_cycle", EXIT_OK),
    ("verify", "gaussian_verify", EXIT_FAILURE),
    ("minimum-pair", "lq_minimum_pair", EXIT_OK),
    ("vanishing-discount", "custom_model", EXIT_OK),
    ("evaluate", "custom_model", EXIT_OK),
])
def test_sample_configs(tmp_path, command, name, expected):
    code, rec = run([command, "--config", str(CONFIG_DIR / f"{name}.yaml"), "--out", str(tmp_path)])
    assert code == expected
    assert (tmp_path / "record.json").exists()


def test_load_config_from_long_text():
    text = "# " + "x" * 400 + "\nmodel:\n  preset: two_cycle\n"
    assert load_config(text).model == {"preset": "two_cycle"}
