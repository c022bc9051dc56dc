import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svfield.cli import execute, main, report_merge
from svfield.config import ConfigError, ExperimentConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_MA = """
experiment = "eta-estimate"
seed = 4

[tail]
alpha = 2.0
p_xi = 1.0

[kernel]
coefficients = [1.0, 0.5]

[geometry]
shape = "unit-box"
d = 1
c_n = 2000
t_n = 50

[plan]
replications = 60
thresholds = [0.5, 1.0]
"""


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _record(out):
    files = list(Path(out).glob("*.json"))
    assert len(files) == 1
    return json.loads(files[0].read_text())


def test_geometry_check_exact_tiling(tmp_path):
    assert main(["geometry-check", "--config", str(CONFIGS / "geometry_box.toml"), "--out", str(tmp_path)]) == 0
    rec = _record(tmp_path)
    assert rec["outputs"]["rows"][0]["ratio"] == 0.0


def test_eta_theory_record(tmp_path):
    assert main(["eta-theory", "--config", str(CONFIGS / "eta_theory_ma.toml"), "--out", str(tmp_path)]) == 0
    assert _record(tmp_path)["outputs"]["theta"] == 0.8


def test_unknown_key_exit_code(tmp_path, capsys):
    path = _write(tmp_path, 'experiment = "eta-theory"\n[tail]\nalpha_ = 2.0\n')
    assert main(["eta-theory", "--config", path, "--out", str(tmp_path)]) == 2
    assert "alpha_" in capsys.readouterr().err


def test_malformed_config_reports_line(tmp_path, capsys):
    path = _write(tmp_path, 'experiment = "eta-theory"\n[tail]\nalpha = = 2\n')
    assert main(["eta-theory", "--config", path]) == 2
    assert "line 3" in capsys.readouterr().err


def test_subcommand_mismatch(tmp_path):
    path = _write(tmp_path, SMALL_MA)
    assert main(["spectral", "--config", path, "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("text", [
    'experiment = "nope"',
    'experiment = "eta-estimate"\n[tail]\nalpha = -1.0\n',
    'experiment = "garch-index"\n',
    'experiment = "eta-theory"\nthreads = 0\n[garch]\nalpha0 = 0.1\nalpha1 = 0.1\nbeta1 = 0.8\n',
    'experiment = "eta-theory"\n[tail]\nalpha = "two"\n',
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(text)


def test_config_round_trip():
    for path in CONFIGS.glob("*.toml"):
        cfg = ExperimentConfig.load(path)
        again = ExperimentConfig.loads(cfg.dumps())
        assert again.data == cfg.data
        assert ExperimentConfig.loads(again.dumps()).dumps() == again.dumps()


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(0.5, 5), p=st.floats(0.01, 1.0), seed=st.integers(0, 2**31),
       coeffs=st.lists(st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=4))
def test_config_round_trip_property(alpha, p, seed, coeffs):
    cfg = ExperimentConfig({"experiment": "eta-theory", "seed": seed, "tail": {"alpha": alpha, "p_xi": p},
                            "kernel": {"coefficients": coeffs}})
    assert ExperimentConfig.loads(cfg.dumps()).data == cfg.data


def test_determinism_across_runs_and_threads(tmp_path):
    cfg = ExperimentConfig.loads(SMALL_MA)
    a = execute(cfg, str(tmp_path / "a"))
    b = execute(cfg, str(tmp_path / "b"))
    c = execute(cfg.with_overrides(threads=4), str(tmp_path / "c"))
    assert json.dumps(a["outputs"]) == json.dumps(b["outputs"]) == json.dumps(c["outputs"])
    assert (tmp_path / "a" / "eta-estimate-estimates.csv").read_text() == \
        (tmp_path / "c" / "eta-estimate-estimates.csv").read_text()


def test_overrides_and_strict(tmp_path):
    path = _write(tmp_path, SMALL_MA)
    out = tmp_path / "o"
    assert main(["eta-estimate", "--config", path, "--reps", "30", "--seed", "9", "--out", str(out)]) == 0
    rec = _record(out)
    assert rec["config"]["plan"]["replications"] == 30 and rec["config"]["seed"] == 9
    # spectral check at a tiny sample fails the 0.05 TV bar and --strict turns that into exit 3
    spec = _write(tmp_path, """
experiment = "spectral"
[tail]
alpha = 2.0
[kernel]
coefficients = [1.0, 0.5]
[geometry]
c_n = 2000
t_n = 10
[plan]
replications = 1
m = 1
quantile = 0.95
""", "spec.toml")
    status = main(["spectral", "--config", spec, "--out", str(tmp_path / "s"), "--strict"])
    rec = _record(tmp_path / "s")
    assert status == (3 if rec["passed"] is False else 0)


def test_simulate_exports_field(tmp_path):
    assert main(["simulate", "--config", str(CONFIGS / "simulate_ma2d.toml"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "simulate-field.csv").read_text().splitlines()
    assert lines[0] == "replication,v0,v1,y,z,x"
    assert len(lines) - 1 == 50 * 50


def test_clusters_and_limit_test_small(tmp_path):
    base = (CONFIGS / "limit_test_ma2d.toml").read_text().replace("c_n = 250", "c_n = 50") \
        .replace("t_n = 25", "t_n = 5").replace("replications = 2000", "replications = 40")
    path = _write(tmp_path, base)
    assert main(["limit-test", "--config", path, "--out", str(tmp_path / "l")]) == 0
    rec = _record(tmp_path / "l")
    assert rec["outputs"]["eta"] == pytest.approx(0.8)
    assert {r["rule"] for r in rec["outputs"]["reports"]} == {"box", "proximity"}
    cpath = _write(tmp_path, base.replace('"limit-test"', '"clusters"').replace('rules = ["box", "proximity"]\n', ""),
                   "c.toml")
    assert main(["clusters", "--config", cpath, "--out", str(tmp_path / "c"), "--strict"]) == 0
    header = (tmp_path / "c" / "clusters-clusters.csv").read_text().splitlines()[0]
    assert header == "replication,rule,gamma,region0,region1,region2"


def test_garch_index_command(tmp_path):
    path = _write(tmp_path, 'experiment = "garch-index"\n[garch]\nalpha0 = 0.1\nalpha1 = 0.1\nbeta1 = 0.85\n')
    assert main(["garch-index", "--config", path, "--out", str(tmp_path), "--strict"]) == 0
    assert _record(tmp_path)["outputs"]["alpha_hat"] == pytest.approx(4.5358868536, abs=1e-8)


def test_report_merge(tmp_path):
    with pytest.raises(ValueError):
        report_merge([])
    recs = []
    for m in (1, 5, 20):
        cfg = ExperimentConfig.loads((CONFIGS / "eta_theory_garch.toml").read_text()
                                     .replace("m = [1, 2, 5, 10, 20, 50]", f"m = {m}")
                                     .replace("samples = 200000", "samples = 50000"))
        recs.append(execute(cfg, str(tmp_path / f"m{m}")))
    merged = report_merge(recs)
    etas = [row["eta"] for row in merged]
    assert [row["m"] for row in merged] == [1, 5, 20]
    assert etas[0] >= etas[1] >= etas[2]
    assert report_merge(recs[:1]) == [{"record": 0, "seed": 3, **recs[0]["outputs"]["rows"][0]}]
    geo = execute(ExperimentConfig.load(CONFIGS / "geometry_box.toml"), str(tmp_path / "g"))
    with pytest.raises(ValueError):
        report_merge([recs[0], geo])
    paths = []
    for i, rec in enumerate(recs):
        p = tmp_path / f"r{i}.json"
        p.write_text(json.dumps(rec))
        paths.append(str(p))
    assert main(["report-merge", *paths, "--out", str(tmp_path / "merged")]) == 0
    assert (tmp_path / "merged" / "merged.csv").exists()
    assert main(["report-merge", "--out", str(tmp_path / "none")]) == 2
