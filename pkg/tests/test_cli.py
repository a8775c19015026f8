from __future__ import annotations

import json
import math

import numpy as np
import pytest

from annealgap.analysis import fit_gap_scaling
from annealgap.cli import UsageError, fmt, main, parse_pairs, parse_range, read_config_file
from annealgap.dynamics import landau_zener_probability
from annealgap.models import ec3_to_cost, random_ec3


def read_csv(path):
    lines = path.read_text().splitlines()
    config = json.loads(lines[0][2:])
    header = lines[1].split(",")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[2:] if not ln.startswith("#")]
    markers = [ln for ln in lines[2:] if ln.startswith("#")]
    return config, header, np.array(rows), markers


# -- helpers -----------------------------------------------------------------------


def test_formatting_round_trips():
    for x in (0.1, 1 / 3, -2.5e-300, 12.0):
        assert float(fmt(x)) == x
    assert fmt(3) == "3"
    assert fmt(math.nan) == "nan"


def test_parsers():
    assert parse_range("-0.5:0.5") == (-0.5, 0.5)
    assert parse_pairs("0-1,1-2") == [(0, 1), (1, 2)]
    with pytest.raises(UsageError):
        parse_range("1:0")


def test_config_file_reader(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nL = 6\ngamma = 0.4\n\npoints=5\n")
    assert read_config_file(cfg) == {"L": "6", "gamma": "0.4", "points": "5"}


# -- sweep ------------------------------------------------------------------------------


AFM = ["sweep", "--model", "afm-chain", "--L", "9", "--gamma", "0.3", "--param", "h",
       "--range", "-0.5:0.5", "--points", "101"]


def test_afm_sweep_rows_and_determinism(tmp_path):
    out1 = tmp_path / "a.csv"
    assert main(AFM + ["--out", str(out1)]) == 0
    first, first_side = out1.read_bytes(), out1.with_suffix(".json").read_bytes()
    assert main(AFM + ["--out", str(out1)]) == 0
    config, header, rows, markers = read_csv(out1)
    assert header == ["param", "E0", "E1", "gap", "v10"]
    assert rows.shape == (101, 5) and not markers
    assert config["L"] == 9 and config["range"] == "-0.5:0.5"
    assert out1.read_bytes() == first
    assert out1.with_suffix(".json").read_bytes() == first_side
    side = json.loads(first_side)
    assert set(side) >= {"config", "min_gap", "crossings", "version"}


def test_ec3_sweep_endpoint_matches_enumeration(tmp_path):
    out = tmp_path / "ec3.csv"
    assert main(["sweep", "--model", "ec3", "--n", "10", "--alpha", "0.6", "--seed", "3",
                 "--points", "11", "--out", str(out)]) == 0
    _, _, rows, _ = read_csv(out)
    cost, _ = ec3_to_cost(random_ec3(10, 0.6, 3))
    e = np.sort(cost.energies())
    assert rows[-1, 0] == 1.0
    assert rows[-1, 1] == pytest.approx(e[0], abs=1e-9)
    assert rows[-1, 3] == pytest.approx(e[1] - e[0], abs=1e-9)


def test_sweep_failure_marks_rows(tmp_path):
    out = tmp_path / "fail.csv"
    code = main(["sweep", "--model", "afm-chain", "--L", "8", "--points", "5", "--max-iter", "1",
                 "--tol", "1e-15", "--out", str(out)])
    assert code != 0
    _, _, rows, markers = read_csv(out)
    assert markers and markers[0].startswith("# FAILED")
    assert rows.shape[0] == 5 and np.isnan(rows[-1, 1])


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model = afm-chain\nL = 6\npoints = 7\ngamma = 0.4\n")
    out = tmp_path / "c.csv"
    assert main(["sweep", "--config", str(cfg), "--points", "9", "--out", str(out)]) == 0
    config, _, rows, _ = read_csv(out)
    assert rows.shape[0] == 9
    assert config["gamma"] == 0.4 and config["L"] == 6
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert main(["sweep", "--config", str(bad), "--out", str(out)]) != 0


def test_usage_errors_exit_nonzero(tmp_path):
    out = str(tmp_path / "x.csv")
    assert main(["sweep", "--model", "afm-chain", "--out", out]) != 0
    assert main(["sweep", "--model", "ising-file", "--out", out]) != 0


def test_ising_file_model(tmp_path):
    inst = tmp_path / "m.txt"
    inst.write_text("n 2\nh 0 1.0\nh 1 -1.0\n")
    out = tmp_path / "i.csv"
    assert main(["sweep", "--model", "ising-file", "--instance", str(inst), "--points", "3",
                 "--out", str(out)]) == 0
    _, _, rows, _ = read_csv(out)
    np.testing.assert_allclose(rows[:, 3], [2.0, math.sqrt(2.0), 2.0], atol=1e-9)


# -- crossings ------------------------------------------------------------------------------


def test_crossings_sidecar_schema(tmp_path):
    out = tmp_path / "lz.csv"
    assert main(["crossings", "--model", "lz", "--a", "3", "--b", "0.05", "--points", "41",
                 "--out", str(out)]) == 0
    doc = json.loads(out.with_suffix(".json").read_text())
    assert len(doc["crossings"]) == 1
    rep = doc["crossings"][0]
    assert set(rep) == {"param_star", "gap_star", "level_pair", "config_lower", "config_upper",
                        "hamming_d", "classification", "flags"}
    assert rep["hamming_d"] == 1 and rep["gap_star"] == pytest.approx(0.1, abs=1e-9)
    assert doc["min_gap"]["gap"] == pytest.approx(0.1, abs=1e-9)


def test_lbit_crossings_run(tmp_path):
    out = tmp_path / "lb.csv"
    assert main(["crossings", "--model", "lbit", "--n", "6", "--seed", "1", "--points", "21",
                 "--out", str(out)]) == 0
    _, _, rows, _ = read_csv(out)
    assert rows.shape[0] == 21 and rows[0, 0] == 0.0 and rows[-1, 0] == 0.5


# -- evolve -----------------------------------------------------------------------------------


def test_evolve_lz_preset(tmp_path):
    out = tmp_path / "ev.csv"
    assert main(["evolve", "--T", "50,100,200", "--out", str(out)]) == 0
    _, header, rows, _ = read_csv(out)
    assert header == ["T", "success_probability", "residual_energy", "norm_drift"]
    assert rows.shape[0] == 3
    for T, p in rows[:, :2]:
        assert abs(p - (1 - landau_zener_probability(10.0, 0.2, T))) <= 1e-3


def test_evolve_empty_list(tmp_path):
    out = tmp_path / "empty.csv"
    assert main(["evolve", "--T", "", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_evolve_rejects_lambda_models(tmp_path):
    assert main(["evolve", "--model", "afm-chain", "--L", "4", "--T", "1", "--out", str(tmp_path / "e.csv")]) != 0


# -- scale --------------------------------------------------------------------------------------


def test_scale_inject_matches_fit(tmp_path):
    table = tmp_path / "gaps.csv"
    sizes, gaps = [6, 8, 10, 12, 14], [0.31, 0.12, 0.061, 0.033, 0.02]
    table.write_text("size,gap\n" + "".join(f"{n},{g}\n" for n, g in zip(sizes, gaps)))
    out = tmp_path / "fit.json"
    assert main(["scale", "--inject", str(table), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["fit"] == json.loads(json.dumps(fit_gap_scaling(sizes, gaps).to_dict()))


def test_scale_needs_four_sizes(tmp_path):
    out = tmp_path / "s.json"
    assert main(["scale", "--model", "afm-chain", "--sizes", "4,6,8", "--out", str(out)]) != 0


def test_scale_afm_small(tmp_path):
    out = tmp_path / "s.json"
    assert main(["scale", "--model", "afm-chain", "--sizes", "4,6,8,10", "--points", "21",
                 "--threads", "2", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert sorted(doc["minima"]) == ["10", "4", "6", "8"]
    assert doc["fit"]["preferred"] == "exponential"


# -- ec3stats ----------------------------------------------------------------------------------


def test_ec3stats_rows(tmp_path):
    out = tmp_path / "ec3.csv"
    assert main(["ec3stats", "--n", "10", "--alphas", "0.3,0.6,1.0", "--instances", "30",
                 "--out", str(out)]) == 0
    _, header, rows, _ = read_csv(out)
    assert header == ["alpha", "P_sat", "stderr", "mean_max_distance_over_N"]
    assert rows.shape == (3, 4)
    assert rows[0, 1] >= rows[-1, 1]


def test_ec3stats_single_clause(tmp_path):
    out = tmp_path / "one.csv"
    assert main(["ec3stats", "--n", "4", "--alphas", "0.25", "--instances", "10", "--out", str(out)]) == 0
    assert read_csv(out)[2][0, 1] == 1.0


def test_ec3stats_budget(tmp_path):
    assert main(["ec3stats", "--n", "27", "--instances", "1", "--out", str(tmp_path / "x.csv")]) != 0
