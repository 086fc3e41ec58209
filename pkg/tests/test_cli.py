import csv
import json
import time

import numpy as np
import pytest

from lorentomo import __version__, cli, protocol
from lorentomo.cli import ConfigError, ExperimentConfig, load_config


def run(tmp_path, *argv):
    return cli.main([*argv, "--out", str(tmp_path)])


def test_defaults_resolve():
    cfg = load_config(None, {})
    assert (cfg.dim, cfg.rank, cfg.lambda0, cfg.n, cfg.trials) == (8, 8, 0.9999, 1e4, 200)
    ev = cfg.evolution_config()
    assert (ev.eps, ev.g, ev.period, ev.total_steps, ev.initial_weight) == (3e-5, 0.5, 1000, 5000, 0.999999)
    assert len({ev.hamiltonian_seed, ev.state_seed, ev.noise_seed}) == 3


def test_flags_override_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dim": 4, "trials": 7, "n": 500}))
    cfg = load_config(str(path), {"trials": 3})
    assert (cfg.dim, cfg.rank, cfg.trials, cfg.n) == (4, 4, 3, 500.0)


@pytest.mark.parametrize(
    "doc",
    [{"colour": 1}, {"trials": 0}, {"dim": 6}, {"lambda0": 1.5}, {"trials": 2.5}, {"eps": -1}, {"n": "lots"}],
)
def test_bad_config_exit_2(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    assert run(tmp_path, "static", "--config", str(path)) == 2


def test_unreadable_config(tmp_path):
    assert run(tmp_path, "static", "--config", str(tmp_path / "missing.json")) == 2
    with pytest.raises(ConfigError):
        load_config(None, {"master_seed": -1})


def test_bad_flag_value_exits_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        run(tmp_path, "static", "--trials", "many")
    assert info.value.code == 2


def _static(tmp_path, name, *extra):
    out = tmp_path / name
    rc = cli.main(["static", "--trials", "2", "--workers", "1", "--dim", "4", "--out", str(out), *extra])
    assert rc == 0
    return out


def test_static_deterministic(tmp_path):
    a = _static(tmp_path, "a", "--seed", "42")
    b = _static(tmp_path, "b", "--seed", "42")
    assert (a / "static_trials.csv").read_bytes() == (b / "static_trials.csv").read_bytes()
    c = _static(tmp_path, "c", "--seed", "43")
    assert (a / "static_trials.csv").read_bytes() != (c / "static_trials.csv").read_bytes()


def test_static_parallel_matches_serial(tmp_path):
    a = _static(tmp_path, "a")
    b = _static(tmp_path, "b", "--workers", "2")
    assert (a / "static_trials.csv").read_bytes() == (b / "static_trials.csv").read_bytes()


def test_static_outputs(tmp_path):
    out = _static(tmp_path, "s")
    rows = list(csv.DictReader(open(out / "static_trials.csv")))
    assert [r["trial"] for r in rows] == ["0", "1"]
    loss = float(rows[0]["loss"])
    assert 0 < loss < 1e-3
    doc = json.loads((out / "static_summary.json").read_text())
    assert doc["version"] == __version__ and doc["command"] == "static"
    assert doc["config"]["dim"] == 4 and doc["config"]["trials"] == 2
    assert len(doc["histogram_loss"]["counts"]) == 30
    assert sum(doc["histogram_loss"]["counts"]) == 2


def test_number_format_round_trips():
    for x in np.random.default_rng(0).standard_normal(200) * 10.0 ** np.arange(-100, 100):
        assert float(cli._num(x)) == x


def test_track_one_step(tmp_path):
    assert run(tmp_path, "track", "--steps", "1", "--dim", "4") == 0
    rows = list(csv.reader(open(tmp_path / "track_steps.csv")))
    assert rows[0] == cli.TRACK_COLUMNS
    assert len(rows) == 2
    doc = json.loads((tmp_path / "track_summary.json").read_text())
    assert doc["config"]["steps"] == 1 and doc["evolution"]["total_steps"] == 1
    assert doc["version"] == __version__


def test_track_short_run_summary(tmp_path):
    assert run(tmp_path, "track", "--steps", "30", "--dim", "4") == 0
    doc = json.loads((tmp_path / "track_summary.json").read_text())
    assert doc["steps"] == 30
    assert len(doc["histogram_backaction_fidelity"]["counts"]) == 30
    assert doc["mean_loss"] < 1e-4
    assert "loss_trend" in doc


def test_track_deterministic(tmp_path):
    run(tmp_path / "a", "track", "--steps", "4", "--dim", "4")
    run(tmp_path / "b", "track", "--steps", "4", "--dim", "4")
    assert (tmp_path / "a" / "track_steps.csv").read_bytes() == (tmp_path / "b" / "track_steps.csv").read_bytes()


def test_protocol_dump(tmp_path):
    assert run(tmp_path, "protocol", "--dim", "4") == 0
    doc = json.loads((tmp_path / "protocol_mub_4.json").read_text())
    X = protocol.InstrumentalMatrix.from_dict(doc["protocol"])
    np.testing.assert_array_equal(X.rows, protocol.mub_protocol(4).rows)
    assert run(tmp_path, "protocol", "--dim", "4", "--protocol", "lorentz") == 0
    doc = json.loads((tmp_path / "protocol_lorentz_4.json").read_text())
    assert doc["protocol"]["dim"] == 4 and "state" in doc


def test_verify_clean(tmp_path, capsys):
    start = time.perf_counter()
    assert run(tmp_path, "verify") == 0
    assert time.perf_counter() - start < 60
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_verify_corrupted_table(tmp_path, capsys):
    doc = protocol.mub_protocol(4).to_dict()
    doc["rows"][5][1] = [0.3, 0.0]  # breaks row 5 of the second basis
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert run(tmp_path, "verify", "--mub-table", str(path)) == 1
    out = capsys.readouterr().out
    assert "FAILED:" in out and "mub_orthonormal (s=4)" in out


def test_verify_unreadable_table(tmp_path):
    assert run(tmp_path, "verify", "--mub-table", str(tmp_path / "nope.json")) == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    from lorentomo.errors import NoConvergence

    def boom(*a, **k):
        raise NoConvergence("forced")

    monkeypatch.setattr(cli.estimator, "mle_reconstruct", boom)
    assert run(tmp_path, "static", "--trials", "1", "--workers", "1", "--dim", "2") == 3
    assert run(tmp_path, "track", "--steps", "2", "--dim", "2") == 3


def test_config_is_frozen():
    cfg = ExperimentConfig()
    with pytest.raises(Exception):
        cfg.dim = 3
