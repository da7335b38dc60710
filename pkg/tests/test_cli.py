import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from driftcrb.cli import EXIT_CONFIG, EXIT_DOMAIN, EXIT_OK, EXIT_STRICT, config_hash, main, run

GOLDEN = Path(__file__).parent / "golden"


def load(name):
    return json.loads((GOLDEN / name).read_text())


def parse_csv(text):
    header = [line for line in text.splitlines() if line.startswith("#")]
    body = [line for line in text.splitlines() if not line.startswith("#")]
    rows = list(csv.reader(body))
    return header, rows[0], rows[1:]


def assert_cells_close(got, want):
    for a, b in zip(got, want):
        try:
            fa, fb = float(a), float(b)
        except ValueError:
            assert a == b
        else:
            assert fa == pytest.approx(fb, rel=1e-9, abs=1e-300) or (math.isnan(fa) and math.isnan(fb))


def assert_json_close(got, want):
    if isinstance(want, dict):
        assert got.keys() == want.keys()
        for k in want:
            assert_json_close(got[k], want[k])
    elif isinstance(want, list):
        assert len(got) == len(want)
        for a, b in zip(got, want):
            assert_json_close(a, b)
    elif isinstance(want, float):
        assert got == pytest.approx(want, rel=1e-9)
    else:
        assert got == want


# ------------------------------------------------------------ golden files


@pytest.mark.parametrize("command, name", [("crb", "crb_awgn"), ("crb", "crb_box_corner"),
                                           ("montecarlo", "montecarlo_awgn")])
def test_json_golden(command, name):
    code, text = run(command, load(f"{name}.json"))
    assert code == EXIT_OK
    assert_json_close(json.loads(text), json.loads((GOLDEN / f"{name}.out.json").read_text()))


@pytest.mark.parametrize("command, name", [("mre-map", "mre_map_small"), ("quantized", "quantized_small"),
                                           ("multisensor", "multisensor_small")])
def test_csv_golden(command, name):
    code, text = run(command, load(f"{name}.json"))
    assert code == EXIT_OK
    header, cols, rows = parse_csv(text)
    g_header, g_cols, g_rows = parse_csv((GOLDEN / f"{name}.out.csv").read_text())
    assert header == g_header and cols == g_cols and len(rows) == len(g_rows)
    for a, b in zip(rows, g_rows):
        assert_cells_close(a, b)


def test_csv_columns_documented():
    _, cols, _ = parse_csv(run("mre-map", load("mre_map_small.json"))[1])
    assert cols[:3] == ["rho", "gamma", "tau_mode"] and "N_epsilon" in cols and "reason" in cols
    _, cols, _ = parse_csv(run("quantized", load("quantized_small.json"))[1])
    assert {"bits", "modified_crb", "mc_variance", "ci_low", "ci_high", "clip_rate"} <= set(cols)


# ------------------------------------------------------------ command behaviour


def test_crb_awgn_exact_equals_closed():
    doc = json.loads(run("crb", load("crb_awgn.json"))[1])["result"]
    assert doc["exact"][0] == pytest.approx(0.01, rel=1e-14)
    assert doc["closed_second"][0] == pytest.approx(0.01, rel=1e-14)
    assert doc["closed_first"][0] == pytest.approx(0.01, rel=1e-14)


def test_crb_box_corner_accuracy():
    doc = json.loads(run("crb", load("crb_box_corner.json"))[1])["result"]
    assert doc["mre"]["closed_second"] < 0.05


def test_crb_uncalibrated_random_walk_exit():
    cfg = {"signal": {"P": 1}, "sensors": [{"sigma2": 1, "gamma": 0.1, "rho": 1.0, "tau": "inf"}], "N": 50}
    assert run("crb", cfg)[0] == EXIT_DOMAIN


def test_crb_strict_negative_variance():
    cfg = {"signal": {"P": 1}, "sensors": [{"sigma2": 100, "gamma": 2.4, "rho": 0.95, "tau": 1}], "N": 80}
    code, text = run("crb", cfg)
    assert code == EXIT_OK and json.loads(text)["result"]["negative_variance"]
    assert run("crb", cfg, strict=True)[0] == EXIT_STRICT


def test_crb_strict_epsilon_limit():
    cfg = {"signal": {"P": 2}, "sensors": [{"sigma2": 1, "gamma": 1, "rho": 0.97}], "N": 200, "epsilon": 0.01}
    assert run("crb", cfg, strict=True)[0] == EXIT_STRICT
    assert run("crb", cfg)[0] == EXIT_OK


def test_mre_map_drift_free_cell():
    cfg = {"signal": {"P": 0}, "grid": {"rho": [0.8], "gamma": [0]}, "variants": ["crb"]}
    _, _, rows = parse_csv(run("mre-map", cfg)[1])
    assert rows[0][4] == "2"


def test_mre_map_failed_cell_recorded():
    cfg = {"signal": {"P": 2}, "grid": {"rho": [0.97], "gamma": [1]}, "variants": ["crb"], "N_max": 64}
    code, text = run("mre-map", cfg)
    _, cols, rows = parse_csv(text)
    assert code == EXIT_OK and rows[0][cols.index("N_epsilon")] == "nan" and rows[0][cols.index("reason")]
    assert run("mre-map", cfg, strict=True)[0] == EXIT_STRICT


def test_quantized_signal_independent():
    base = load("quantized_small.json")
    shifted = dict(base, signal={"P": 1, "beta": [0.0, 0.0]}, quantizer={"U0": -600, "U1": 600, "bits": [5, 7]})
    _, cols, a = parse_csv(run("quantized", base)[1])
    _, _, b = parse_csv(run("quantized", shifted)[1])
    k = cols.index("modified_crb")
    assert [r[k] for r in a] == [r[k] for r in b]


def test_quantized_crb_decreases_with_bits():
    _, cols, rows = parse_csv(run("quantized", load("quantized_small.json"))[1])
    k = cols.index("modified_crb")
    p0 = [float(r[k]) for r in rows if r[1] == "0"]
    assert p0[0] > p0[1] > p0[2]


def test_montecarlo_awgn_interval():
    doc = json.loads(run("montecarlo", load("montecarlo_awgn.json"))[1])["result"]
    assert doc["ci_low"][0] <= 0.01 <= doc["ci_high"][0]


def test_multisensor_random_walk_flat_in_N():
    cfg = {"signal": {"P": 1, "beta": [400, 0.9]}, "box": {"rho": [1, 1], "sigma2": [72, 288], "gamma": [0.06, 0.24]},
           "M_list": [10], "N_list": [80, 160], "networks": 4, "trials": 200}
    _, cols, rows = parse_csv(run("multisensor", cfg)[1])
    v = {(r[cols.index("N")], r[cols.index("p")]): float(r[cols.index("avg_crb")]) for r in rows}
    assert v[("160", "0")] / v[("80", "0")] == pytest.approx(1.0, abs=0.1)
    assert {r[cols.index("tau_mode")] for r in rows} == {"1"}


# ------------------------------------------------------------ validation and exit codes


@pytest.mark.parametrize("command, cfg", [
    ("crb", {"signal": {"P": 0}, "sensors": [{"sigma2": 1, "gamma": 0, "rho": 0.5}], "N": 10, "bogus": 1}),
    ("crb", {"signal": {"P": 0}, "sensors": [{"sigma2": -1, "gamma": 0, "rho": 0.5}], "N": 10}),
    ("crb", {"signal": {"P": 0}, "sensors": [{"sigma2": 1, "gamma": 0, "rho": 1.5}], "N": 10}),
    ("crb", {"signal": {"P": 1, "beta": [1]}, "sensors": [{"sigma2": 1, "gamma": 0, "rho": 0.5}], "N": 10}),
    ("crb", {"signal": {"P": 0}, "sensors": [], "N": 10}),
    ("montecarlo", {"signal": {"P": 0}, "sensors": [{"sigma2": 1, "gamma": 0, "rho": 0.5}], "N": 10, "trials": 1}),
    ("montecarlo", {"signal": {"P": 0}, "N": 10, "trials": 100}),
    ("quantized", {"signal": {"P": 0}, "sensors": [{"sigma2": 1, "gamma": 0, "rho": 0.5}], "N": 10,
                   "quantizer": {"U0": 1, "U1": 0, "bits": 4}}),
    ("mre-map", {"signal": {"P": 0}, "grid": {"rho": [0.5]}}),
    ("multisensor", {"signal": {"P": 0}, "box": {"rho": [0.5, 0.9], "sigma2": [1, 2], "gamma": [0, 1]},
                     "M_list": [2], "N_list": [10], "trials": 50}),
])
def test_invalid_config_exit(command, cfg):
    assert run(command, cfg)[0] == EXIT_CONFIG


def test_config_hash_ignores_output_path():
    cfg = load("crb_awgn.json")
    assert config_hash(cfg) == config_hash(dict(cfg, output="elsewhere.json"))
    assert config_hash(cfg) != config_hash(dict(cfg, N=101))


def test_seed_override_recorded():
    code, text = run("montecarlo", dict(load("montecarlo_awgn.json"), trials=100), seed=42)
    assert json.loads(text)["meta"]["seed"] == 42


def test_main_writes_file_and_reruns_identically(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(load("montecarlo_awgn.json"), trials=500)))
    outs = [tmp_path / "a.json", tmp_path / "b.json"]
    for out in outs:
        assert main(["montecarlo", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_main_bad_json(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["crb", "--config", str(cfg)]) == EXIT_CONFIG
    assert main(["crb", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text((GOLDEN / "crb_awgn.json").read_text())
    proc = subprocess.run([sys.executable, "-m", "driftcrb.cli", "crb", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["result"]["exact"] == pytest.approx([0.01])
    proc = subprocess.run([sys.executable, "-m", "driftcrb.cli", "crb", "--config", str(cfg), "--seed", "-1"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
