import json
from pathlib import Path

import pytest
import yaml

from varcurv.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main
from varcurv.config import ConfigError, apply_override, config_digest, load_config, resolve_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FAST_OU = ["--set", "params.T=200"]


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _manifest_hashes(d):
    return {f["file"]: f["hash"] for f in json.loads((d / "manifest.json").read_text())["files"]}


def test_defaults_fill_every_field():
    cfg = resolve_config({})
    assert cfg["experiment"] == "es_run" and cfg["seed"] == 0
    assert cfg["params"]["N"] == 32 and cfg["landscape"]["kind"] == "two_block"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as ei:
        resolve_config({"sed": 3})
    assert ei.value.key == "sed"
    with pytest.raises(ConfigError) as ei:
        resolve_config({"experiment": "ou_compare", "params": {"Nss": [8]}})
    assert ei.value.key == "params.Nss"
    with pytest.raises(ConfigError):
        resolve_config({"experiment": "fig99"})


@pytest.mark.parametrize("params,key", [({"N": 0}, "params.N"), ({"alpha": -0.1}, "params.alpha"),
                                        ({"antithetic": "yes"}, "params.antithetic"),
                                        ({"estimator": "adam"}, "params.estimator")])
def test_bad_values_name_the_key(params, key):
    with pytest.raises(ConfigError) as ei:
        resolve_config({"params": params})
    assert ei.value.key == key and key in str(ei.value)


def test_bad_landscape_reported():
    with pytest.raises(ConfigError) as ei:
        resolve_config({"landscape": {"d": 200}})
    assert ei.value.key == "landscape"


def test_yaml_error_names_line(tmp_path):
    p = _write(tmp_path, "bad.yaml", "experiment: es_run\nparams:\n  N: [1, 2\n  T: 3\n")
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.key.startswith("line ")


def test_override_parsing():
    cfg = apply_override({}, "params.Ns=[4, 8, 16]")
    assert cfg == {"params": {"Ns": [4, 8, 16]}}
    apply_override(cfg, "seed=7")
    assert cfg["seed"] == 7
    with pytest.raises(ConfigError):
        apply_override(cfg, "seed")


def test_digest_ignores_output_dir():
    a = resolve_config({"output_dir": "/x"})
    b = resolve_config({"output_dir": "/y"})
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(resolve_config({"seed": 1}))


def test_empty_config_runs(tmp_path, capsys):
    cfg = _write(tmp_path, "empty.yaml", "")
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--output-dir", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("# experiment es_run seed 0")
    assert (out / "manifest.json").exists() and (out / "resolved_config.yaml").exists()
    assert main(["verify", str(cfg), "--output-dir", str(out)]) == EXIT_OK
    assert "# PASS" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    cfg = _write(tmp_path, "n0.yaml", "params:\n  N: 0\n")
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "params.N" in capsys.readouterr().err
    cfg = _write(tmp_path, "typo.yaml", "experiment: es_run\nparms: {}\n")
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "parms" in capsys.readouterr().err
    cfg = _write(tmp_path, "syntax.yaml", "a: [1\n")
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_verify_missing_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, "c.yaml", "")
    assert main(["verify", str(cfg), "--output-dir", str(tmp_path / "nothing")]) == EXIT_CONFIG
    assert "run the experiment first" in capsys.readouterr().err


def test_ou_compare_verify_and_tamper(tmp_path, capsys):
    out = tmp_path / "ou"
    args = [str(CONFIGS / "ou_compare.yaml"), "--output-dir", str(out)] + FAST_OU
    assert main(["run"] + args) == EXIT_OK
    assert main(["verify"] + args) == EXIT_OK
    report = json.loads((out / "verify_report.json").read_text())
    assert report["status"] == "PASS" and all(c["passed"] for c in report["checks"])
    assert all("tolerance" in c for c in report["checks"])

    target = out / "simulated_N8.csv"
    lines = target.read_text().splitlines()
    fields = lines[60].split(",")
    fields[1] = repr(float(fields[1]) * 1.1)
    lines[60] = ",".join(fields)
    target.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["verify"] + args) == EXIT_VERIFY
    text = capsys.readouterr().out
    assert "FAIL" in text and "simulated_N8.csv" in text and "line 61" in text


def test_clss_fail_by_design(tmp_path, capsys):
    out = tmp_path / "cdw"
    args = [str(CONFIGS / "clss_double_well.yaml"), "--output-dir", str(out), "--set", "params.T=2000",
            "--set", "params.w=500"]
    assert main(["run"] + args) == EXIT_OK
    assert "FAIL" in capsys.readouterr().out
    assert main(["verify"] + args) == EXIT_OK
    assert json.loads((out / "verify_report.json").read_text())["status"] == "FAIL_BY_DESIGN"


def test_manifest_identical_across_workers(tmp_path):
    for w in (1, 3):
        assert main(["run", str(CONFIGS / "ou_compare.yaml"), "--output-dir", str(tmp_path / f"w{w}"),
                     "--workers", str(w)] + FAST_OU) == EXIT_OK
    assert _manifest_hashes(tmp_path / "w1") == _manifest_hashes(tmp_path / "w3")
    assert (tmp_path / "w1" / "manifest.json").read_bytes() == (tmp_path / "w3" / "manifest.json").read_bytes()


def test_resolved_config_round_trip(tmp_path):
    first = tmp_path / "a"
    assert main(["run", str(CONFIGS / "best_of_n.yaml"), "--output-dir", str(first), "--set", "params.S=3",
                 "--set", "params.M=60", "--set", "params.subset_samples=200", "--set", "params.bootstrap=100"]) == 0
    echoed = first / "resolved_config.yaml"
    assert "output_dir" not in yaml.safe_load(echoed.read_text())
    second = tmp_path / "b"
    assert main(["run", str(echoed), "--output-dir", str(second)]) == EXIT_OK
    assert _manifest_hashes(first) == _manifest_hashes(second)


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == EXIT_OK
    out = capsys.readouterr().out
    for kind in ("es_run", "ou_compare", "spectroscopy", "clss", "slq_metrics", "double_well", "best_of_n"):
        assert kind in out


@pytest.mark.parametrize("name,overrides", [
    ("spectroscopy", []),
    ("slq_metrics", ["params.seeds=2"]),
    ("clss", ["params.T=1500", "params.w=600", "params.R=16", "landscape.D=32", "landscape.d=8",
              "landscape.lam_lo=0.2"]),
    ("double_well_hopping", ["params.replicates=200"]),
    ("double_well_delocalized", ["params.replicates=500"]),
    ("best_of_n", ["params.S=4", "params.subset_samples=500", "params.bootstrap=200"]),
])
def test_every_kind_verifies(tmp_path, name, overrides):
    out = tmp_path / name
    args = [str(CONFIGS / f"{name}.yaml"), "--output-dir", str(out)]
    for o in overrides:
        args += ["--set", o]
    assert main(["run"] + args) == EXIT_OK
    assert main(["verify"] + args) == EXIT_OK
    report = json.loads((out / "verify_report.json").read_text())
    assert report["status"] == "PASS", [c for c in report["checks"] if not c["passed"]]
