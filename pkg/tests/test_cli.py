import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from discount_pg import oracle
from discount_pg.config import ConfigError, load_config, parse_config
from discount_pg.experiment_cli import AGGREGATE_COLUMNS, CSV_COLUMNS, main
from discount_pg.linear_system import read_system

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden"


def plant_cfg(**over):
    cfg = yaml.safe_load((CONFIGS / "plant_2d.yaml").read_text())
    cfg.update(trials=1, plots=False)
    cfg.update(over)
    return cfg


def write_cfg(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def rows(path, drop_wall=True):
    with open(path) as fh:
        out = list(csv.reader(fh))
    return [r[:-1] for r in out] if drop_wall else out


class TestStabilize:
    def test_plant_2d(self, tmp_path):
        out = tmp_path / "out"
        assert main(["stabilize", write_cfg(tmp_path, plant_cfg()), "--out-dir", str(out)]) == 0
        s = json.loads((out / "summary.json").read_text())
        for key in ("outcome", "iterations_used", "total_trajectories", "final_gamma", "final_rho", "config_digest", "seed"):
            assert key in s
        assert s["outcome"] == "Stabilized"
        assert s["iterations_used"] < 250
        assert s["final_gamma"] >= 1 and s["final_rho"] < 1
        table = rows(out / "iterations.csv", drop_wall=False)
        assert tuple(table[0]) == CSV_COLUMNS
        assert len(table) - 1 == s["iterations_used"]
        # the terminal pass takes no gradient step
        assert table[-1][4] == "" and table[-2][4] != ""
        K = np.array(s["K"])
        assert oracle.spectral_radius(np.array([[4, 3], [3, 1.5]]) - np.array([[2], [2]]) @ K) == pytest.approx(s["final_rho"])

    def test_bad_gamma0(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["stabilize", str(CONFIGS / "plant_2d_bad_gamma0.yaml"), "--out-dir", str(out), "--no-plots"]) == 2
        s = json.loads((out / "summary.json").read_text())
        assert s["outcome"] == "Failed"
        assert "initial discount" in s["reason"]
        assert "initial discount" in capsys.readouterr().out

    @pytest.mark.parametrize(
        "text",
        [
            "gamma0: [",
            "- just\n- a list\n",
            yaml.safe_dump(plant_cfg(gamma0=2.0)),
            yaml.safe_dump(plant_cfg(etaa=1e-3)),
            yaml.safe_dump(plant_cfg(N="many")),
            yaml.safe_dump(plant_cfg(cost={"Q": [1, 1], "R": [[2.0]]})),
            yaml.safe_dump(plant_cfg(system={"A": [[1.0]]})),
            yaml.safe_dump(plant_cfg(mode="quantum")),
            yaml.safe_dump(plant_cfg(distribution={"kind": "truncated_gaussian", "bound": 1.0})),
        ],
    )
    def test_malformed_config(self, tmp_path, text):
        path = tmp_path / "bad.yaml"
        path.write_text(text)
        out = tmp_path / "out"
        assert main(["stabilize", str(path), "--out-dir", str(out)]) == 1
        assert json.loads((out / "summary.json").read_text())["outcome"] == "ConfigError"

    def test_missing_file(self, tmp_path):
        assert main(["stabilize", str(tmp_path / "nope.yaml"), "--out-dir", str(tmp_path)]) == 1

    def test_model_based(self, tmp_path):
        out = tmp_path / "mb"
        assert main(["stabilize", str(CONFIGS / "plant_2d_model_based.yaml"), "--out-dir", str(out), "--no-plots"]) == 0
        s = json.loads((out / "summary.json").read_text())
        assert s["iterations_used"] <= 50
        assert s["total_trajectories"] == 0

    def test_figure_written(self, tmp_path):
        out = tmp_path / "fig"
        cfg = plant_cfg(mode="model_based", plots=True)
        assert main(["stabilize", write_cfg(tmp_path, cfg), "--out-dir", str(out)]) == 0
        assert (out / "discount.png").stat().st_size > 1000

    def test_seed_override_before_or_after_command(self, tmp_path):
        path = write_cfg(tmp_path, plant_cfg())
        main(["--seed", "7", "stabilize", path, "--out-dir", str(tmp_path / "a")])
        main(["stabilize", path, "--seed", "7", "--out-dir", str(tmp_path / "b")])
        main(["stabilize", path, "--out-dir", str(tmp_path / "c")])
        a, b, c = (json.loads((tmp_path / d / "summary.json").read_text()) for d in "abc")
        assert a["seed"] == b["seed"] == 7 and c["seed"] == 0
        assert a["config_digest"] == b["config_digest"] != c["config_digest"]
        assert rows(tmp_path / "a" / "iterations.csv") == rows(tmp_path / "b" / "iterations.csv")
        assert rows(tmp_path / "a" / "iterations.csv") != rows(tmp_path / "c" / "iterations.csv")


def test_csv_schema_golden(tmp_path):
    """Header and first rows of a model-based run (deterministic up to rounding)."""
    out = tmp_path / "mb"
    main(["stabilize", str(CONFIGS / "plant_2d_model_based.yaml"), "--out-dir", str(out), "--no-plots"])
    got = rows(out / "iterations.csv", drop_wall=False)
    want = rows(GOLDEN / "iterations_model_based.csv", drop_wall=False)
    assert got[0] == want[0] == list(CSV_COLUMNS)
    for g, w in zip(got[1:], want[1:]):
        assert g[0] == w[0]
        for a, b in zip(g[1:-1], w[1:-1]):
            assert (a == "") == (b == "")
            if a:
                assert float(a) == pytest.approx(float(b), rel=1e-9)


class TestBenchmark:
    def test_single_trial_matches_stabilize(self, tmp_path):
        path = write_cfg(tmp_path, plant_cfg())
        assert main(["stabilize", path, "--out-dir", str(tmp_path / "s")]) == 0
        assert main(["benchmark", path, "--out-dir", str(tmp_path / "b")]) == 0
        assert rows(tmp_path / "s" / "iterations.csv") == rows(tmp_path / "b" / "trial_000" / "iterations.csv")
        assert (tmp_path / "b" / "aggregate.csv").exists()
        agg = json.loads((tmp_path / "b" / "aggregate.json").read_text())
        assert agg["trials"] == 1 and agg["success_rate"] == 1.0

    def test_parallel_is_bit_identical(self, tmp_path):
        path = write_cfg(tmp_path, plant_cfg(trials=3))
        assert main(["benchmark", path, "--out-dir", str(tmp_path / "one"), "--threads", "1"]) == 0
        assert main(["benchmark", path, "--out-dir", str(tmp_path / "two"), "--threads", "2"]) == 0
        for t in range(3):
            a = rows(tmp_path / "one" / f"trial_{t:03d}" / "iterations.csv")
            b = rows(tmp_path / "two" / f"trial_{t:03d}" / "iterations.csv")
            assert a == b
        assert rows(tmp_path / "one" / "aggregate.csv", False) == rows(tmp_path / "two" / "aggregate.csv", False)
        # different trials draw different randomness
        assert rows(tmp_path / "one" / "trial_000" / "iterations.csv") != rows(tmp_path / "one" / "trial_001" / "iterations.csv")

    def test_accounting_and_bands(self, tmp_path):
        out = tmp_path / "b"
        assert main(["benchmark", write_cfg(tmp_path, plant_cfg(trials=3, plots=True)), "--out-dir", str(out)]) == 0
        agg = json.loads((out / "aggregate.json").read_text())
        per = [json.loads((out / f"trial_{t:03d}" / "summary.json").read_text()) for t in range(3)]
        assert agg["total_trajectories"] == sum(s["total_trajectories"] for s in per)
        assert agg["rollouts_n_plus_m"] == sum(s["rollouts_n_plus_m"] for s in per)
        for s in per:
            # no retries happened: N per cost estimate plus 2M per descent
            assert s["total_trajectories"] == s["iterations_used"] * 50 + (s["iterations_used"] - 1) * 20
        table = rows(out / "aggregate.csv", False)
        assert tuple(table[0]) == AGGREGATE_COLUMNS
        longest = max(s["iterations_used"] for s in per)
        assert len(table) - 1 == longest
        last = table[-1]
        assert int(last[-1]) == sum(s["iterations_used"] == longest for s in per)
        assert (out / "discount_band.png").exists()

    def test_partial_failure_threshold(self, tmp_path):
        cfg = plant_cfg(trials=2, gamma0=0.5, mode="model_based")
        assert main(["benchmark", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path / "a")]) == 2
        cfg["success_fraction"] = 0.0
        assert main(["benchmark", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path / "b")]) == 0
        agg = json.loads((tmp_path / "b" / "aggregate.json").read_text())
        assert agg["stabilized"] == 0 and agg["iterations"] is None
        assert all("initial discount" in t["reason"] for t in agg["per_trial"])

    def test_random_systems_differ_per_trial(self, tmp_path):
        cfg = plant_cfg(
            trials=2,
            mode="model_based",
            system={"random": {"n": 3, "m": 2, "seed": 4}},
            cost={"Q": {"scaled_identity": 1.0}, "R": {"scaled_identity": 1.0}},
        )
        rc = parse_config(cfg)
        assert not np.array_equal(rc.system.build(0).A, rc.system.build(1).A)
        np.testing.assert_array_equal(rc.system.build(1).A, rc.system.build(1).A)
        assert main(["benchmark", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path / "r")]) == 0


class TestOracleCheck:
    def test_suites_pass(self, tmp_path, capsys):
        cfg = {
            "seed": 3,
            "suites": ["lyapunov_residual", "scaling_identity", "jstar_monotonicity", "discount_safety", "estimator_consistency", "noise_closed_form"],
            "instances": {"jstar_monotonicity": 10, "discount_safety": 200, "estimator_consistency": 20, "noise_closed_form": 20},
        }
        assert main(["oracle-check", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "oracle_check.json").read_text())
        assert [s["passed"] for s in report["suites"]] == [True] * 6
        assert capsys.readouterr().out.count("pass ") == 6

    def test_fault_injection_names_invariant(self, tmp_path, capsys):
        assert main(["oracle-check", str(CONFIGS / "oracle_check_fault.yaml"), "--out-dir", str(tmp_path)]) == 2
        assert "residual invariant" in capsys.readouterr().err

    @pytest.mark.parametrize("cfg", [{"suites": []}, {"suites": ["nope"]}, {"seed": 1}, {"suites": ["scaling_identity"], "extra": 1}])
    def test_config_errors(self, tmp_path, cfg):
        assert main(["oracle-check", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 1


class TestGenSystem:
    def test_round_trip_into_config(self, tmp_path):
        out = tmp_path / "sys.txt"
        assert main(["gen-system", "--n", "3", "--m", "2", "--a-std", "0.1", "--b-std", "1.0", "--seed", "5", "--out", str(out)]) == 0
        sys = read_system(out)
        assert (sys.n, sys.m) == (3, 2)
        cfg = plant_cfg(
            system={"file": "sys.txt"},
            cost={"Q": {"scaled_identity": 1.0}, "R": [[1.0, 0.0], [0.0, 1.0]]},
            mode="model_based",
        )
        rc = load_config(write_cfg(tmp_path, cfg))
        np.testing.assert_array_equal(rc.system.build(0).A, sys.A)

    def test_same_seed_same_file(self, tmp_path):
        for name in "ab":
            main(["gen-system", "--n", "4", "--m", "1", "--seed", "2", "--out", str(tmp_path / name)])
        assert (tmp_path / "a").read_text() == (tmp_path / "b").read_text()

    def test_bad_sizes(self, tmp_path):
        assert main(["gen-system", "--n", "0", "--m", "1", "--out", str(tmp_path / "x")]) == 1


def test_yaml_exponent_without_dot():
    # PyYAML reads 1e-3 as a string
    rc = parse_config(plant_cfg(eta="1e-3"))
    assert rc.stabilizer.eta == 1e-3


def test_integer_fields_reject_fractions():
    with pytest.raises(ConfigError):
        parse_config(plant_cfg(N=2.5))


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.yaml"):
        if "oracle_check" in path.name:
            continue
        load_config(path)
