import csv
import functools
import json

import numpy as np
import pytest

import efhc.verify
from efhc.cli import main
from efhc.config import (ConfigError, ExperimentConfig, config_from_dict, dump_config,
                         parse_config)
from efhc.mixing import MixingMatrix, link_indicators
from efhc.topology import read_edgelist

FAST = {"m": 5, "total_iterations": 30, "cadence": 10,
        "task": {"classes": 5, "n_features": 8, "per_class": 20, "test_per_class": 10,
                 "batch_size": 4},
        "topology": {"connectivity": 0.6}, "bandwidth": {"H": 0.4}}


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.json"
    path.write_text(json.dumps(FAST))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# config parsing

def test_empty_config_is_defaults(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("{}")
    cfg = parse_config(path)
    assert cfg == ExperimentConfig()
    assert (cfg.m, cfg.topology.connectivity, cfg.bandwidth.average) == (10, 0.4, 5000.0)
    assert (cfg.threshold.q, cfg.threshold.r, cfg.schedule.c, cfg.schedule.omega) == (2, 50, 0.5, 1)


def test_unknown_key_named(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"polciy": "ZT"}')
    with pytest.raises(ConfigError, match="polciy"):
        parse_config(path)


def test_nested_error_has_field_path():
    with pytest.raises(ConfigError, match=r"bandwidth\.H"):
        config_from_dict({"bandwidth": {"H": 1.5}})
    with pytest.raises(ConfigError, match=r"topology\.conectivity"):
        config_from_dict({"topology": {"conectivity": 0.5}})


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{m: 3")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        parse_config(bad)


def test_round_trip(tmp_path):
    cfg = config_from_dict(FAST).with_updates(**{"policy": "RG", "seeds.sgd": 4,
                                                 "threshold.r": None})
    path = tmp_path / "dump.json"
    path.write_text(dump_config(cfg))
    assert parse_config(path) == cfg


def test_shipped_configs_parse():
    from pathlib import Path
    configs = Path(__file__).resolve().parents[1] / "configs"
    names = sorted(p.name for p in configs.glob("*.json"))
    assert "default.json" in names
    for name in names:
        parse_config(configs / name)
    assert parse_config(configs / "default.json") == ExperimentConfig()


def test_consistency_rules():
    with pytest.raises(ConfigError, match="B2_budget"):
        config_from_dict({"enforce_B2": True})
    with pytest.raises(ConfigError, match="one center per device"):
        config_from_dict({"m": 2, "task": {"kind": "quadratic", "centers": [[0.0]]}})
    with pytest.raises(ConfigError, match="idx"):
        config_from_dict({"task": {"dataset": "idx"}})
    with pytest.raises(KeyError):
        ExperimentConfig().with_updates(**{"topology.nope": 1})


# run

def test_run_writes_outputs(tmp_path, fast_config):
    out = tmp_path / "a"
    assert main(["run", "--config", str(fast_config), "--out", str(out)]) == 0
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["k", "mean_accuracy", "global_loss", "consensus_max", "consensus_mean",
                       "score_iter", "score_cum", "n_broadcasts"]
    # the initial record plus one every cadence iterations
    assert len(rows) == 1 + 1 + 30 // 10
    summary = (out / "summary.txt").read_text()
    assert "final mean accuracy" in summary and "cumulative transmission score" in summary
    assert parse_config(out / "config.json") == config_from_dict(FAST)


def test_run_byte_identical(tmp_path, fast_config):
    for d in ("a", "b"):
        assert main(["run", "--config", str(fast_config), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()


def test_run_overrides(tmp_path, fast_config):
    out = tmp_path / "o"
    assert main(["run", "--config", str(fast_config), "--out", str(out), "--policy", "ZT",
                 "--seed", "3"]) == 0
    cfg = parse_config(out / "config.json")
    assert cfg.policy == "ZT" and set(cfg.seeds.model_dump().values()) == {3}


def test_run_edgelist_trace(tmp_path, fast_config):
    out = tmp_path / "e"
    assert main(["run", "--config", str(fast_config), "--out", str(out), "--edgelist"]) == 0
    with open(out / "topology.edgelist") as fh:
        snaps = read_edgelist(fh, 5)
    assert [s.iteration for s in snaps] == list(range(30))
    assert len({s.edges for s in snaps}) == 1


def test_run_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"polciy": "ZT"}')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "polciy" in capsys.readouterr().err


# sweep

def test_sweep_rows(tmp_path, fast_config):
    out = tmp_path / "s"
    assert main(["sweep", "--config", str(fast_config), "--out", str(out), "--runs", "1",
                 "--connectivity-grid", "0.5,0.6,0.8"]) == 0
    rows = read_csv(out / "sweep.csv")
    assert rows[0] == ["connectivity", "policy", "runs", "mean_accuracy_at_budget",
                       "mean_final_accuracy", "mean_score_cum"]
    assert len(rows) == 1 + 12
    assert {r[1] for r in rows[1:]} == {"EFHC", "ZT", "GT", "RG"}


def test_sweep_single_cell_matches_run(tmp_path, fast_config):
    assert main(["sweep", "--config", str(fast_config), "--out", str(tmp_path / "s"),
                 "--runs", "1", "--policy", "EFHC", "--connectivity-grid", "0.6"]) == 0
    assert main(["run", "--config", str(fast_config), "--out", str(tmp_path / "r")]) == 0
    sweep = read_csv(tmp_path / "s/sweep.csv")[1:]
    final = read_csv(tmp_path / "r/metrics.csv")[-1]
    assert len(sweep) == 1
    assert float(sweep[0][4]) == float(final[1])
    assert float(sweep[0][5]) == pytest.approx(float(final[6]))


def test_sweep_rejects_bad_grid_and_runs(tmp_path, fast_config):
    with pytest.raises(SystemExit):
        main(["sweep", "--config", str(fast_config), "--out", str(tmp_path),
              "--connectivity-grid", "0.5,abc"])
    assert main(["sweep", "--config", str(fast_config), "--out", str(tmp_path),
                 "--runs", "0"]) == 2


# verify

def test_verify_clean(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    for name in ("row-stochastic", "column-stochastic", "symmetric", "information-flow",
                 "bounded below"):
        assert name in text
    assert "[FAIL]" not in text
    assert (tmp_path / "verify.txt").exists()


def lopsided(snapshot, flags):
    # each row uses its own degree only, so P is row-stochastic but not symmetric
    links = link_indicators(snapshot, flags)
    d = snapshot.degrees.astype(float)
    P = np.where(links, (1.0 / (1.0 + d))[:, None], 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return MixingMatrix(P, snapshot.iteration, links)


def test_verify_catches_asymmetric_weights(monkeypatch, capsys):
    monkeypatch.setattr(efhc.verify, "run_all",
                        functools.partial(efhc.verify.run_all, builder=lopsided))
    assert main(["verify"]) != 0
    out = capsys.readouterr().out
    assert "[FAIL] symmetric mixing" in out
    assert "[PASS] row-stochastic mixing" in out
