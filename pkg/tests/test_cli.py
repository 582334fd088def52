"""Config parsing, CLI verbs, exit codes, artifacts and determinism."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from katolab.cli import main
from katolab.scenarios import ConfigError, load_scenario, override_key, parse_scenario

MINI = """
[scenario]
name = mini
T = 1.0
seed = 7
checks = kato, gauge
resolutions = 64

[geometry]
kind = conformal_circle
dimension = 1
extent = 2*pi

[regime]
type = manual
lambda = 1.0
beta = 0.6931471805599453
"""

MINI_SPHERE = """
[scenario]
name = minisphere
T = 1.0
seed = 7
checks = kato, gauge, be, bishop_gromov, doubling
resolutions = 96

[geometry]
kind = warped_product
dimension = 3
extent = pi
endpoints = pole, pole
profile = sin(r)

[regime]
type = d
gamma = 0.45
"""


def test_parse_minimal():
    scn = parse_scenario(MINI)
    assert scn.name == "mini"
    assert scn.extent == pytest.approx(2 * np.pi)
    assert scn.checks == ["kato", "gauge"]
    assert scn.regime.kind == "manual"


def test_parse_errors():
    with pytest.raises(ConfigError, match="missing"):
        parse_scenario("[scenario]\nname = x\nT = 1\nchecks = kato\n")
    with pytest.raises(ConfigError, match="unknown check"):
        parse_scenario(MINI.replace("kato, gauge", "kato, nonsense"))
    with pytest.raises(ConfigError, match="T"):
        parse_scenario(MINI.replace("T = 1.0", "T = banana"))
    with pytest.raises(ConfigError, match="gamma"):
        parse_scenario(MINI.replace("type = manual\nlambda = 1.0\nbeta = 0.6931471805599453",
                                    "type = d"))
    with pytest.raises(ConfigError, match="gauss2d"):
        parse_scenario(MINI.replace("checks = kato, gauge", "checks = gauss2d"))
    with pytest.raises(ConfigError, match="unknown tolerance"):
        parse_scenario(MINI + "\n[tolerances]\nbogus = 1\n")


def test_override_key_roundtrip():
    text = override_key(MINI, "regime.beta", 0.5)
    scn = parse_scenario(text)
    assert scn.regime.beta == 0.5
    text2 = override_key(MINI, "geometry.param.amp", 0.1)
    scn2 = parse_scenario(text2)
    assert scn2.profile_params["amp"] == 0.1
    with pytest.raises(ConfigError):
        override_key(MINI, "noseparator", 1)


def test_profile_params_substitution(tmp_path):
    text = MINI_SPHERE.replace("profile = sin(r)", "profile = a*sin(r)\nparam.a = 1.0")
    scn = parse_scenario(text)
    spec = scn.geometry_spec(96)
    vals = spec.profile.value(np.array([0.3]))
    assert vals[0] == pytest.approx(np.sin(0.3))


def test_analyze_exit_codes(tmp_path):
    cfg = tmp_path / "mini.ini"
    cfg.write_text(MINI)
    out = tmp_path / "out"
    code = main(["analyze", "--config", str(cfg), "--out", str(out), "--no-figures"])
    assert code == 0
    report = json.loads((out / "mini" / "report.json").read_text())
    assert report["overall"] == "PASS"
    assert report["checks"]["kato"]["status"] == "PASS"
    assert "timings" in report

    code2 = main(["analyze", "--config", str(tmp_path / "nope.ini"), "--out", str(out)])
    assert code2 == 2

    bad = tmp_path / "bad.ini"
    bad.write_text(MINI.replace("checks = kato, gauge", "checks = bogus"))
    assert main(["analyze", "--config", str(bad), "--out", str(out)]) == 2


def test_analyze_artifacts_and_figures(tmp_path):
    cfg = tmp_path / "minisphere.ini"
    cfg.write_text(MINI_SPHERE)
    out = tmp_path / "out"
    code = main(["analyze", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    run_dir = out / "minisphere"
    for name in ("report.json", "payload.json", "eigenvalues.csv",
                 "kato_profile.csv", "gauge_phi.csv", "volume_ratio.csv",
                 "bg_pairs.csv", "kato.png", "gauge.png", "volumes.png"):
        assert (run_dir / name).exists(), name
    # csv is headed and rectangular
    lines = (run_dir / "kato_profile.csv").read_text().strip().splitlines()
    assert lines[0] == "t,k_t"
    assert all(len(l.split(",")) == 2 for l in lines[1:])


def test_determinism_byte_identical(tmp_path):
    cfg = tmp_path / "mini.ini"
    cfg.write_text(MINI_SPHERE)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["analyze", "--config", str(cfg), "--out", str(out),
                     "--no-figures"]) == 0
        outs.append((out / "minisphere" / "payload.json").read_bytes())
    assert outs[0] == outs[1]


def test_seed_changes_payload_but_not_certificates(tmp_path):
    cfg = tmp_path / "mini.ini"
    cfg.write_text(MINI_SPHERE)
    payloads = []
    for seed in ("1", "2"):
        out = tmp_path / ("s" + seed)
        assert main(["analyze", "--config", str(cfg), "--out", str(out),
                     "--seed", seed, "--no-figures"]) == 0
        payloads.append(json.loads((out / "minisphere" / "payload.json").read_text()))
    c1 = payloads[0]["checks"]["be"]["certificate"]
    c2 = payloads[1]["checks"]["be"]["certificate"]
    assert c1 == c2
    assert payloads[0]["provenance"]["seed"] != payloads[1]["provenance"]["seed"]


def test_env_var_out_dir(tmp_path, monkeypatch):
    cfg = tmp_path / "mini.ini"
    cfg.write_text(MINI)
    monkeypatch.setenv("KATOLAB_OUT", str(tmp_path / "envout"))
    assert main(["analyze", "--config", str(cfg), "--no-figures"]) == 0
    assert (tmp_path / "envout" / "mini" / "report.json").exists()


def test_skipped_hypothesis_is_exit_zero(tmp_path):
    text = MINI_SPHERE.replace("profile = sin(r)", "profile = sinh(r)")
    text = text.replace("extent = pi", "extent = 1.5")
    text = text.replace("endpoints = pole, pole", "endpoints = pole, reflecting")
    text = text.replace("dimension = 3", "dimension = 2")
    cfg = tmp_path / "hy.ini"
    cfg.write_text(text)
    out = tmp_path / "out"
    assert main(["analyze", "--config", str(cfg), "--out", str(out),
                 "--no-figures"]) == 0
    payload = json.loads((out / "minisphere" / "payload.json").read_text())
    assert payload["checks"]["gauge"]["status"] == "SKIPPED"
    assert "violated" in payload["checks"]["gauge"]["reason"]
    assert payload["checks"]["be"]["status"] == "SKIPPED"
    assert payload["overall"] == "PASS"


def test_sweep_gamma_formula_columns(tmp_path):
    cfg = tmp_path / "mini.ini"
    cfg.write_text(MINI_SPHERE.replace("resolutions = 96", "resolutions = 64"))
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", str(cfg), "--axis", "regime.gamma",
                 "--values", "0.2,0.45,0.7", "--out", str(out)])
    assert code == 0
    table = (out / "sweep_summary.csv").read_text().strip().splitlines()
    assert table[0].startswith("axis,value,overall")
    import csv as _csv
    import io
    import math

    rows = list(_csv.DictReader(io.StringIO("\n".join(table))))
    assert len(rows) == 3
    for row in rows:
        gamma = float(row["value"])
        lam = 0.5 * (1 + 1 / gamma)
        betaT = -math.log(0.5 * (1 - gamma))
        assert float(row["K"]) == pytest.approx(-2 * betaT / lam, rel=1e-12)
        assert float(row["N"]) == pytest.approx(3 + 2 * gamma / (1 - gamma), rel=1e-12)


def test_sweep_threads_match_serial(tmp_path):
    cfg = tmp_path / "mini.ini"
    cfg.write_text(MINI)
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    assert main(["sweep", "--config", str(cfg), "--axis", "scenario.seed",
                 "--values", "1,2", "--out", str(out1)]) == 0
    assert main(["sweep", "--config", str(cfg), "--axis", "scenario.seed",
                 "--values", "1,2", "--out", str(out2), "--threads", "2"]) == 0
    assert (out1 / "sweep_summary.csv").read_text() == (out2 / "sweep_summary.csv").read_text()


def test_list_checks(capsys):
    assert main(["list-checks"]) == 0
    out = capsys.readouterr().out
    for name in ("kato", "gauge", "bishop_gromov", "gauss2d"):
        assert name in out


def test_shipped_scenarios_parse():
    for name in ("flat_circle", "round_sphere", "dumbbell_dprime",
                 "dumbbell_dynkin", "dumbbell_sk", "torus_flat",
                 "torus_bumpy", "hyperbolic_cap"):
        scn = load_scenario(f"scenarios/{name}.ini")
        assert scn.checks
