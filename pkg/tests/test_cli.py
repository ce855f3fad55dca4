import json

import pytest
import yaml

from vdwlab.cli import SCENARIOS, default_config, list_scenarios, main, validate_config
from vdwlab.errors import ConfigError


def test_catalog_order_and_defaults():
    names = [e["name"] for e in list_scenarios()]
    assert names == ["sweep", "c6", "feshbach_check", "symmetry_check", "ims_check",
                     "stability_check", "property_e", "necessity", "bo_correction"]
    for name in names:
        assert validate_config(default_config(name)) == default_config(name)


@pytest.mark.parametrize("raw", [
    {"scenario": "nope"},
    {"scenario": "sweep", "extra": 1},
    {"scenario": "sweep", "system": {"grid": {"points": 1}}},
    {"scenario": "sweep", "system": {"grid": {"extent": [3, 1]}}},
    {"scenario": "sweep", "system": {"potential": {"softening": -1}}},
    {"scenario": "sweep", "system": {"charges": [1, 0]}},
    {"scenario": "sweep", "params": {"bogus": 3}},
    {"scenario": "sweep", "params": {"separations": [12, -1]}},
    {"scenario": "sweep", "seed": "x"},
])
def test_invalid_configs_are_rejected(raw):
    with pytest.raises(ConfigError):
        validate_config(raw)


def test_list_command(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in SCENARIOS)


def test_run_from_yaml_writes_report(tmp_path, capsys):
    cfg = {"scenario": "symmetry_check", "params": {"n_electrons": 2, "n_points": 3}}
    path = tmp_path / "sym.yaml"
    path.write_text(yaml.safe_dump(cfg))
    code = main(["run", str(path), "--out", str(tmp_path / "out")])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS symmetry_check" in out
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["passed"] and report["config"]["params"]["n_electrons"] == 2
    assert len(report["config_sha256"]) == 64


def test_run_feshbach_check_small(tmp_path):
    cfg = {"scenario": "feshbach_check", "params": {"n_matrices": 5},
           "system": {"grid": {"points": 61, "extent": [-15.0, 15.0]}, "separation": 10.0}}
    path = tmp_path / "f.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["run", str(path), "--out", str(tmp_path)]) == 0


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("scenario: sweep\nparams: {bogus: 1}\n")
    assert main(["run", str(path), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_failed_check_sets_exit_code(tmp_path):
    # a grid too coarse for the partition turns into a failed check, not a crash
    cfg = {"scenario": "ims_check", "system": {"grid": {"points": 21}}}
    path = tmp_path / "ims.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["run", str(path), "--out", str(tmp_path)]) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert any("error" in c for c in report["checks"])
    with pytest.raises(Exception):
        main(["run", str(path), "--out", str(tmp_path), "--strict"])
