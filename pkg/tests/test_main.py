import sys

import pytest

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from mcp_guardrails.main import main

CONFIG = """
scenario = "contamination-response"
seed = 21
replications = 2

[parameters]
beta = [1.0, 2.0]
intercept = true
domain_lower = [0.0]
domain_upper = [1.0]
magnitude = 5.0
propensity = 0.2
n = 200
upper = 2.0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "spike.toml"
    path.write_text(CONFIG, encoding="utf-8")
    return path


def _manifest(directory) -> dict:
    return tomllib.loads((directory / "spike.manifest.toml").read_text(encoding="utf-8"))


def test_run_writes_results(config_file, tmp_path, capsys):
    out = tmp_path / "out"

    code = main(["run", "--config", str(config_file), "--out", str(out)])

    assert code == 0
    assert (out / "spike.csv").exists()
    stdout = capsys.readouterr().out
    assert "expected_bias" in stdout
    assert f"csv: {out / 'spike.csv'}" in stdout
    assert _manifest(out)["seed"] == 21


def test_seed_flag_beats_environment(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("GUARDRAILS_SEED", "5")
    out = tmp_path / "out"

    main(["run", "--config", str(config_file), "--out", str(out)])
    assert _manifest(out)["seed"] == 5

    main(["run", "--config", str(config_file), "--out", str(out), "--seed", "0x10"])
    assert _manifest(out)["seed"] == 16


def test_replications_flag(config_file, tmp_path):
    out = tmp_path / "out"

    main(["run", "--config", str(config_file), "--out", str(out), "--replications", "1"])

    assert _manifest(out)["rows"] == 1


def test_invalid_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('scenario = "misspec"\nreplications = 0\n', encoding="utf-8")

    code = main(["run", "--config", str(path), "--out", str(tmp_path)])

    assert code == 2
    assert "replications must be ≥ 1" in capsys.readouterr().err
    assert not (tmp_path / "bad.csv").exists()


def test_missing_config_exits_2(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "absent.toml")])

    assert code == 2
    assert "cannot read scenario config" in capsys.readouterr().err


def test_invalid_environment_exits_2(config_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GUARDRAILS_THREADS", "zero")

    code = main(["run", "--config", str(config_file), "--out", str(tmp_path)])

    assert code == 2
    assert "GUARDRAILS_THREADS" in capsys.readouterr().err


def test_unknown_suite_exits_2(capsys):
    assert main(["verify", "auction"]) == 2
    assert "unknown suite" in capsys.readouterr().err


def test_command_required():
    with pytest.raises(SystemExit):
        main([])
