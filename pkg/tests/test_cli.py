import csv
import io
import json
import math

import pytest

from advreg import cli
from advreg.cli import CSV_COLUMNS, SCHEMA, config_from_dict, dump_config, run
from advreg.exceptions import ConfigError


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def small(**over):
    base = {"n": 200, "risk": {"replications": 2, "test_draws": 100}}
    base.update(over)
    return base


def csv_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


# -- configuration ---------------------------------------------------------------

def test_defaults_validate():
    cfg = config_from_dict({})
    assert cfg.n == 100 and cfg.estimator.kind == "pp"


@pytest.mark.parametrize(
    "data, field",
    [
        ({"truth": {"beta": 0}}, "truth.beta"),
        ({"truth": {"beta": -1.0}}, "truth.beta"),
        ({"estimator": {"kind": "adaptive", "degree": 1, "beta_max": 2.0}}, "estimator.degree"),
        ({"sweep": {"estimators": ["adaptive"]}, "estimator": {"degree": 1, "beta_max": 2.5}}, "estimator.degree"),
        ({"bogus": 1}, "bogus"),
        ({"truth": {"kind": "staircase", "r": 0.2}}, "truth.r"),
        ({"risk": {"q": 0.5}}, "risk.q"),
        ({"risk": {"q": "big"}}, "risk.q"),
        ({"n": 0}, "n"),
        ({"sweep": {"n": [100, "x"]}}, "sweep.n[1]"),
        ({"attack": {"kind": "identity", "r": 0.1}}, "attack.r"),
        ({"attack": {"kind": "lp_ball", "r": -0.1}}, "attack"),
        ({"format": "xml"}, "format"),
        ({"estimator": {"unknown": 3}}, "estimator.unknown"),
    ],
)
def test_validation_names_field(data, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert info.value.field == field


def test_adaptive_precondition_message():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"estimator": {"kind": "adaptive", "degree": 1, "beta_max": 2.0}})
    assert "floor(beta_max)" in str(info.value)


def test_dump_config_round_trip(tmp_path, capsys):
    data = small(truth={"kind": "staircase", "beta": 0.5, "r": 0.02},
                 attack={"kind": "soda", "r": 0.05}, sweep={"n": [64, 128], "q": ["inf", 2]})
    cfg = config_from_dict(data)
    again = config_from_dict(json.loads(dump_config(cfg)))
    assert again == cfg
    assert run(["dump-config", "--config", write_config(tmp_path, data)]) == 0
    assert config_from_dict(json.loads(capsys.readouterr().out)) == cfg


def test_bad_json_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "n": 10,\n  "d": \n}')
    assert run(["dump-config", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 4" in err


def test_missing_config_file(tmp_path, capsys):
    assert run(["fit", "--config", str(tmp_path / "nope.json")]) == 2


def test_flags_override_file(tmp_path, capsys):
    path = write_config(tmp_path, small(seed=1, format="csv"))
    assert run(["dump-config", "--config", path, "--seed", "9", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["seed"] == 9 and out["format"] == "json"


def test_negative_jobs_rejected(capsys):
    assert run(["dump-config", "--jobs", "0"]) == 2


# -- subcommands -----------------------------------------------------------------

def test_fit_minimal(tmp_path):
    out = tmp_path / "fit.csv"
    assert run(["fit", "--out", str(out), "--no-timestamp"]) == 0
    text = out.read_text()
    assert text.startswith(f"# {SCHEMA}\n")
    rows = csv_rows(text)
    assert len(rows) == math.ceil(1 / 100 ** (-1 / 3))  # default M = ceil(1/h)
    assert "theta_0" in rows[0]


def test_fit_json(tmp_path, capsys):
    assert run(["fit", "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["estimator"] == "pp" and doc["n"] == 100 and len(doc["cells"]) == doc["M"]


def test_adapt_reports_bandwidths(tmp_path, capsys):
    path = write_config(tmp_path, {"n": 150, "estimator": {"degree": 2, "beta_max": 2.0}})
    assert run(["adapt", "--config", path, "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["estimator"] == "adaptive" and doc["M"] == 150
    assert all(c["h"] in doc["grid"] for c in doc["cells"])


def test_adapt_precondition(tmp_path, capsys):
    path = write_config(tmp_path, {"estimator": {"degree": 1, "beta_max": 2.0}})
    assert run(["adapt", "--config", path]) == 2
    assert "estimator.degree" in capsys.readouterr().err


def test_evaluate_single_cell_matches_sweep(tmp_path, capsys):
    data = small(attack={"kind": "lp_ball", "r": 0.05})
    path = write_config(tmp_path, data)
    assert run(["evaluate", "--config", path, "--no-timestamp"]) == 0
    ev = csv_rows(capsys.readouterr().out)
    data["sweep"] = {"n": [200]}
    path2 = write_config(tmp_path, data, "sweep.json")
    assert run(["sweep", "--config", path2, "--no-timestamp"]) == 0
    sw = csv_rows(capsys.readouterr().out)
    assert len(ev) == len(sw) == 1
    assert ev[0]["risk_mean"] == sw[0]["risk_mean"]


def test_sweep_identity_columns_and_phase(tmp_path, capsys):
    path = write_config(tmp_path, small(sweep={"n": [64, 128, 256], "r": [0.0]}))
    assert run(["sweep", "--config", path, "--no-timestamp"]) == 0
    rows = csv_rows(capsys.readouterr().out)
    assert list(rows[0].keys()) == list(CSV_COLUMNS)
    assert [r["n"] for r in rows] == ["64", "128", "256"]
    assert rows[0]["slope_local"] == "" and rows[1]["slope_local"] != ""
    assert all(r["phase"] == "standard" for r in rows)
    assert all(r["wall_ms"] == "0.0" for r in rows)


def test_sweep_attack_dominated_phase(tmp_path, capsys):
    data = {"risk": {"replications": 3, "test_draws": 300}, "noise": {"scale": 0.1},
            "attack": {"kind": "lp_ball", "r": 0.3},
            "truth": {"kind": "holder_power", "beta": 1.0, "C": 2.0},
            "sweep": {"n": [512, 1024, 2048], "phase_band": 0.25}}
    path = write_config(tmp_path, data)
    assert run(["sweep", "--config", path, "--no-timestamp", "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["rows"][-1]["phase"] == "attack-dominated"
    assert len(doc["slices"]) == 1


def test_sweep_output_is_byte_identical(tmp_path):
    data = small(sweep={"n": [64, 128]}, attack={"kind": "soda", "r": 0.05})
    path = write_config(tmp_path, data)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["sweep", "--config", path, "--out", str(a), "--no-timestamp", "--jobs", "1"]) == 0
    assert run(["sweep", "--config", path, "--out", str(b), "--no-timestamp", "--jobs", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_timestamp_header_present_by_default(capsys):
    assert run(["evaluate", "--config", "/dev/null"]) == 2  # empty file is not JSON
    capsys.readouterr()
    assert run(["fit"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == f"# {SCHEMA}" and lines[1].startswith("# generated ")


def test_demo_lower_bound(tmp_path, capsys):
    data = {"n": 256, "risk": {"q": 1, "replications": 2, "test_draws": 200},
            "truth": {"kind": "staircase", "beta": 0.5, "C": 2.0, "r": 0.02},
            "attack": {"kind": "soda", "r": 0.02}, "lower_bound": {"L": 8, "count": 5, "quad": 4096}}
    path = write_config(tmp_path, data)
    assert run(["demo-lower-bound", "--config", path, "--format", "json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["G"] >= rep["kappa_r_pow"] * (1 - 1e-9) and rep["G_ge_kappa_r_pow"]
    assert rep["kappa_oracle"] > 0
    assert rep["packing"]["separated"] and rep["packing"]["min_hamming"] >= 1
    assert "pp" in rep["risk"]


def test_demo_lower_bound_identity_gives_zero(tmp_path, capsys):
    data = {"n": 128, "risk": {"q": 1, "replications": 1, "test_draws": 50},
            "truth": {"kind": "staircase", "beta": 0.5, "r": 0.02}, "lower_bound": {"quad": 512}}
    assert run(["demo-lower-bound", "--config", write_config(tmp_path, data), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["G"] == 0.0


def test_demo_lower_bound_needs_hard_instance(capsys):
    assert run(["demo-lower-bound"]) == 2


def test_resource_limit_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, small(estimator={"M": 20_000_000}))
    assert run(["evaluate", "--config", path]) == 4


def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    from advreg.exceptions import NumericalError

    def broken(*a, **k):
        raise NumericalError("forced")

    monkeypatch.setattr(cli, "fit_pp", broken)
    assert run(["evaluate", "--config", write_config(tmp_path, small())]) == 3
    assert "cell (estimator=pp" in capsys.readouterr().err


def test_main_exits_with_code():
    with pytest.raises(SystemExit) as info:
        cli.main(["dump-config", "--jobs", "0"])
    assert info.value.code == 2
