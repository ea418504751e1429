import csv
import json
import subprocess
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from qupid.cli import bundle_csvs, main, validate_config
from qupid.config import ConfigError, build, config_hash, load_config, parse_angle, parse_matrix

CONFIGS = resources.files("qupid") / "configs"
FIG1 = str(CONFIGS / "fig1_gaussian_pi.json")


def _config(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return str(p)


def _fig1(**changes):
    cfg = json.loads(Path(FIG1).read_text())
    cfg["grid"]["N"] = 120
    for k, v in changes.items():
        cfg[k] = v
    return cfg


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.iterdir() if p.name.endswith(".json")))
def test_bundled_configs_validate(name, capsys):
    assert main(["validate", str(CONFIGS / name)]) == 0


def test_simulate_fig1_split(tmp_path, capsys):
    assert main(["simulate", FIG1, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "fig1_gaussian_pi_Z.csv")
    assert list(rows[0]) == ["time", "value_at_mean", "mean_estimate", "variance", "band_low", "band_high",
                             "contribution_omega_max", "contribution_delta"]
    last = rows[-1]
    amp, det = float(last["contribution_omega_max"]), float(last["contribution_delta"])
    assert amp / (amp + det) == pytest.approx(0.59, abs=0.05)
    assert float(last["time"]) == pytest.approx(6.0)


def test_zero_covariance_config(tmp_path):
    cfg = _fig1(distribution={"names": ["omega_max", "delta"], "sigmas": [0.0, 0.0]})
    assert main(["simulate", _config(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    for row in _rows(tmp_path / "fig1_gaussian_pi_Z.csv"):
        assert row["mean_estimate"] == row["value_at_mean"]
        assert float(row["variance"]) == 0.0
    assert main(["compare", _config(tmp_path, cfg), "--out", str(tmp_path), "--mc-samples", "4"]) == 0
    report = json.loads((tmp_path / "fig1_gaussian_pi_compare.json").read_text())
    assert report["agreement"]["Z"]["max_delta_over_sem"] == 0.0


def test_csv_number_format(tmp_path):
    main(["simulate", FIG1, "--out", str(tmp_path), "--dt-halve", "0"])
    text = (tmp_path / "fig1_gaussian_pi_Z.csv").read_text()
    value = text.splitlines()[-1].split(",")[2]
    assert float(value) == float("%.17g" % float(value))
    assert len(value.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) >= 15


def test_determinism_and_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", FIG1, "--out", str(a)])
    main(["simulate", FIG1, "--out", str(b)])
    csv_a = (a / "fig1_gaussian_pi_Z.csv").read_text()
    assert csv_a == (b / "fig1_gaussian_pi_Z.csv").read_text()
    bundle = json.loads((a / "fig1_gaussian_pi_simulate.json").read_text())
    assert bundle_csvs(bundle)["Z"] == csv_a
    other = json.loads((b / "fig1_gaussian_pi_simulate.json").read_text())
    assert bundle["metadata"]["config_hash"] == other["metadata"]["config_hash"]


def test_compare_is_deterministic(tmp_path):
    cfg = _config(tmp_path, _fig1())
    for d in ("a", "b"):
        main(["compare", cfg, "--out", str(tmp_path / d), "--mc-samples", "200", "--seed", "3"])
    a = (tmp_path / "a" / "fig1_gaussian_pi_Z_compare.csv").read_text()
    assert a == (tmp_path / "b" / "fig1_gaussian_pi_Z_compare.csv").read_text()


def test_config_hash_ignores_key_order():
    cfg = _fig1()
    shuffled = json.loads(json.dumps(dict(reversed(list(cfg.items())))))
    assert config_hash(cfg) == config_hash(shuffled)
    assert config_hash(cfg) != config_hash(_fig1(seed=99))


def test_dt_halve_refines_grid(tmp_path):
    main(["simulate", _config(tmp_path, _fig1()), "--out", str(tmp_path), "--dt-halve", "1"])
    assert len(_rows(tmp_path / "fig1_gaussian_pi_Z.csv")) == 241


def test_validate_asymmetric_covariance(tmp_path, capsys):
    cfg = _fig1(distribution={"names": ["omega_max", "delta"], "covariance": [[1e-3, 1e-4], [0.0, 1e-3]]})
    assert main(["validate", _config(tmp_path, cfg)]) != 0
    assert "not symmetric" in capsys.readouterr().out


def test_validate_calibration_failure(tmp_path, capsys):
    cfg = _fig1(pulse={"type": "gaussian", "rotation": "pi", "sigma": 0.2, "truncation": 3.0})
    assert main(["validate", _config(tmp_path, cfg)]) != 0
    assert "calibration failure" in capsys.readouterr().out


def test_validate_non_hermitian_operator(tmp_path, capsys):
    cfg = _fig1(observables=[{"type": "expectation", "label": "bad", "operator": [[0, 1], [0, 0]]}])
    assert main(["validate", _config(tmp_path, cfg)]) != 0
    assert "not Hermitian" in capsys.readouterr().out


def test_schema_errors_name_field_and_line(tmp_path, capsys):
    cfg = _fig1()
    cfg["grid"]["N"] = "many"
    path = _config(tmp_path, cfg)
    assert main(["simulate", path]) == 2
    err = capsys.readouterr().err
    assert "grid/N" in err and "line" in err
    problems, checks = validate_config(path)
    assert not checks["schema"] and problems
    bad = tmp_path / "broken.json"
    bad.write_text('{"schema_version": 1,\n "name": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(bad)


def test_unknown_and_duplicate_parameter_names(tmp_path):
    for names in (["omega_max", "omega_max"], ["omega_max", "gamma"]):
        cfg = _fig1(distribution={"names": names, "sigmas": [0.1, 0.1]})
        with pytest.raises(ConfigError):
            build(cfg)


def test_custom_model_config(tmp_path):
    cfg = {
        "schema_version": 1, "name": "custom_qutrit_decay",
        "model": {"type": "custom", "dim": 2, "drift": [{"pauli": "Z", "coeff": 0.5}],
                  "terms": [{"name": "rabi", "operator": "X", "nominal": 1.0}],
                  "dissipators": [{"name": "gamma", "operator": {"re": [[0, 1], [0, 0]]}, "rate": 0.1}]},
        "kind": "vectorized-density-matrix",
        "distribution": {"names": ["rabi", "gamma"], "relative_sigmas": [0.05, 0.2]},
        "grid": {"T": 2.0, "N": 40},
        "observables": [{"type": "expectation", "label": "Z", "operator": "Z"}],
        "sample_times": {"count": 5},
    }
    path = _config(tmp_path, cfg)
    assert main(["validate", path]) == 0
    assert main(["compare", path, "--out", str(tmp_path), "--mc-samples", "2000"]) == 0
    assert len(_rows(tmp_path / "custom_qutrit_decay_Z.csv" if False else
                     tmp_path / "custom_qutrit_decay_Z_compare.csv")) == 5


def test_correlated_contribution_columns(tmp_path):
    cfg = _fig1(distribution={"names": ["delta", "omega_max"],
                              "covariance": [[9e-4, 3e-4], [3e-4, 9e-4]]})
    main(["simulate", _config(tmp_path, cfg), "--out", str(tmp_path)])
    row = _rows(tmp_path / "fig1_gaussian_pi_Z.csv")[-1]
    keys = [k for k in row if k.startswith("contribution_")]
    assert keys == ["contribution_omega_max__omega_max", "contribution_omega_max__delta",
                    "contribution_delta__delta"]
    shift = float(row["mean_estimate"]) - float(row["value_at_mean"])
    assert sum(float(row[k]) for k in keys) == pytest.approx(shift, rel=1e-12)


def test_strict_typo_flag_only_for_spin_star(tmp_path, capsys):
    assert main(["simulate", FIG1, "--strict-paper-typo", "--out", str(tmp_path)]) == 2


def test_parsers():
    assert parse_angle("pi/2") == pytest.approx(np.pi / 2)
    assert parse_angle("3*pi/4") == pytest.approx(3 * np.pi / 4)
    assert parse_angle(1.5) == 1.5
    with pytest.raises(ConfigError):
        parse_angle("tau")
    np.testing.assert_array_equal(parse_matrix("XY"), np.kron([[0, 1], [1, 0]], [[0, -1j], [1j, 0]]))
    np.testing.assert_array_equal(parse_matrix({"re": [[1, 0], [0, 1]], "im": [[0, 1], [-1, 0]]}),
                                  [[1, 1j], [-1j, 1]])


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "qupid.cli", "validate", FIG1], capture_output=True, text=True)
    assert out.returncode == 0 and "schema" in out.stdout
