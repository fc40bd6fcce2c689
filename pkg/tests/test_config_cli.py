import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from mecpow.cli import main
from mecpow.config import ConfigError, load_config, validate_config
from mecpow.experiments import EXPERIMENTS, aggregate, run_experiment


# --- config ------------------------------------------------------------------

def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    cfg = validate_config(p)
    sp = cfg.system
    assert (sp.B, sp.r, sp.c, sp.h, sp.N) == (1e4, 2.0, 0.001, 12.0, 3)
    assert cfg.sizes == (100.0, 200.0, 300.0)
    assert validate_config(None).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("raw, key", [
    ({"c": -0.001}, "c"),
    ({"h": 40}, "h"),
    ({"B": "lots"}, "B"),
    ({"s": [100, 200], "N": 3}, "s"),
    ({"delta": 1.0}, "delta"),
    ({"G": 0}, "G"),
    ({"beta": 0}, "beta"),
    ({"sweep": {"param": "B"}}, "sweep"),
    ({"mode": "fast"}, "mode"),
    ({"seed": -1}, "seed"),
    ({"replications": 0}, "replications"),
    ({"bogus": 1}, "bogus"),
])
def test_rejections_name_the_key(raw, key):
    with pytest.raises(ConfigError, match=key):
        load_config(raw)


def test_sizes_extend_with_n():
    cfg = load_config({"N": 5})
    assert cfg.sizes == (100.0, 200.0, 300.0, 400.0, 500.0)
    assert load_config({"s": [5, 6]}).system.N == 2


def test_sweep_and_distribution():
    cfg = load_config({"sweep": {"param": "r", "start": 0, "stop": 10, "steps": 6},
                       "s_dist": {"low": 10, "high": 20}})
    assert cfg.sweep.values().tolist() == [0, 2, 4, 6, 8, 10]
    assert (cfg.s_low, cfg.s_high) == (10.0, 20.0)


def test_malformed_files(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("B: [unclosed\n")
    with pytest.raises(ConfigError):
        validate_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        validate_config(p)
    with pytest.raises(ConfigError):
        validate_config(tmp_path / "missing.yaml")


def test_config_round_trip(tmp_path):
    cfg = load_config({"B": 5000, "h": 10, "sweep": {"param": "B", "start": 1, "stop": 2}})
    p = tmp_path / "eff.yaml"
    cfg.dump(p)
    assert load_config(yaml.safe_load(p.read_text())).to_dict() == cfg.to_dict()


def test_aggregate():
    agg = aggregate([1.0, 2.0, 3.0])
    assert agg["mean"] == 2.0 and agg["var"] == pytest.approx(2 / 3) and agg["n"] == 3
    assert agg["ci95"] == pytest.approx(1.96 / np.sqrt(3))


# --- experiments -------------------------------------------------------------

@pytest.mark.parametrize("name", ["fig3", "fig4", "fig6", "fig7", "fig8"])
def test_fast_experiments_pass(name, tmp_path):
    report = run_experiment(name, load_config({}), tmp_path)
    assert report.passed, report.checks
    assert report.csv_paths and all(Path(p).exists() for p in report.csv_paths)
    summary = json.loads((tmp_path / f"{name}_summary.json").read_text())
    assert summary["passed"] is True
    assert (tmp_path / f"{name}_config.yaml").exists()


def test_experiments_are_byte_reproducible(tmp_path):
    cfg = {"seed": 3}
    a, b = tmp_path / "a", tmp_path / "b"
    ra = run_experiment("fig9", load_config(cfg), a)
    run_experiment("fig9", load_config(cfg), b)
    for p in ra.csv_paths:
        name = Path(p).name
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_unknown_experiment():
    with pytest.raises(KeyError):
        run_experiment("fig1", load_config({}), "unused")
    assert set(EXPERIMENTS) == {f"fig{i}" for i in range(2, 10)}


# --- CLI ---------------------------------------------------------------------

def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "fig5" in out and "fig9" in out


def test_cli_validate(tmp_path, capsys):
    p = tmp_path / "cfg.yaml"
    p.write_text("B: 20000\n")
    assert main(["validate", "--config", str(p)]) == 0
    assert "B: 20000.0" in capsys.readouterr().out
    assert (tmp_path / "cfg.effective.yaml").exists()
    p.write_text("c: -1\n")
    assert main(["validate", "--config", str(p)]) == 2
    assert "c" in capsys.readouterr().err


def test_cli_run_and_env_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MECPOW_OUT_DIR", str(tmp_path / "env-out"))
    assert main(["run", "fig4", "--seed", "7"]) == 0
    assert (tmp_path / "env-out" / "fig4_summary.json").exists()
    assert main(["run", "fig6", "--out", str(tmp_path / "x")]) == 0
    assert "[PASS]" in capsys.readouterr().out


def test_cli_usage_errors(capsys):
    assert main(["run", "fig42"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["run", "fig4", "--seed", "-3"]) == 2
    assert main(["validate", "--config", "/nonexistent/cfg.yaml"]) == 2


def test_cli_solve(tmp_path, capsys):
    cfg = tmp_path / "drop.yaml"
    cfg.write_text("B: 100\ns: [1, 500, 1000]\n")
    out = tmp_path / "sol.csv"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    assert "case 2" in capsys.readouterr().out
    rows = out.read_text().splitlines()
    assert rows[2].split(",")[3] == "60" and rows[3].split(",")[3] == "115"
    cfg.write_text("B: 100\nh: 20\ns: [1, 500, 1000]\n")
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 1


def test_cli_merge(tmp_path, capsys):
    src = tmp_path / "nonces.txt"
    src.write_text("1 2\n10 11 12 13 14 15\n")
    assert main(["merge", "--input", str(src), "--seed", "0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "position,user_id,nonce" and len(lines) == 9
    out = tmp_path / "wrr.csv"
    assert main(["merge", "--input", str(src), "--wrr", "1,3", "--out", str(out)]) == 0
    users = [row.split(",")[1] for row in out.read_text().splitlines()[1:]]
    assert users == ["0", "1", "1", "1", "0", "1", "1", "1"]
