import csv
import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from arbfun import cli
from arbfun.cli import ConfigError, ExperimentConfig, ResultRow


def _small(eid, **kw):
    kw.setdefault("replicates", 2000)
    return cli.run(ExperimentConfig(eid, **kw))


# --- catalog ----------------------------------------------------------------

def test_list_contains_core_ids():
    text = cli.list_experiments()
    for eid in ("thm4-gamma", "thm5-oscillating", "thm9-chaos", "thm11-euler"):
        assert eid in text


def test_list_one_line_per_experiment_with_reference():
    lines = cli.list_experiments().splitlines()
    assert len(lines) == len(cli.EXPERIMENTS)
    for line in lines:
        eid, op, ref = line.split("\t")
        assert eid in cli.EXPERIMENTS and ref


def test_list_is_stable():
    assert cli.list_experiments() == cli.list_experiments()


def test_each_id_maps_to_one_operation():
    import importlib

    ops = [(e.module, e.operation) for e in cli.EXPERIMENTS.values()]
    for module, op in ops:
        assert callable(getattr(importlib.import_module(f"arbfun.{module}"), op))
    assert set(cli.MODULE_COMMANDS.values()) == {e.module for e in cli.EXPERIMENTS.values()}


def test_main_list(capsys):
    assert cli.main(["list"]) == 0
    assert capsys.readouterr().out == cli.list_experiments()


# --- config -----------------------------------------------------------------

def test_parse_ladder():
    assert cli.parse_ladder("16, 32,64") == (16, 32, 64)
    with pytest.raises(ConfigError):
        cli.parse_ladder("16,x")


@pytest.mark.parametrize("ladder", [(32, 16), (16, 16), (0, 4)])
def test_bad_ladder_rejected(ladder):
    with pytest.raises(ConfigError):
        ExperimentConfig("thm4-gamma", n_ladder=ladder).validate()


def test_grid_mult_floor_for_oscillation():
    with pytest.raises(ConfigError, match="grid_mult"):
        cli.run(ExperimentConfig("thm5-oscillating", grid_mult=8, replicates=10))
    ExperimentConfig("thm11-euler", grid_mult=8).validate(needs_oscillation=False)


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        cli.run(ExperimentConfig("thm99"))


def test_read_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nseed = 7\nn-ladder = 8, 16  # inline\nsystem = pendulum\ngate=3.5\n")
    assert cli.read_config(str(p)) == {"seed": 7, "n_ladder": "8, 16", "system": "pendulum", "gate": 3.5}


@pytest.mark.parametrize("body", ["seed 7\n", "colour = red\n", "seed = seven\n"])
def test_read_config_errors(tmp_path, body):
    p = tmp_path / "bad.cfg"
    p.write_text(body)
    with pytest.raises(ConfigError):
        cli.read_config(str(p))


def test_generic_system_exit_status(capsys):
    assert cli.main(["sde", "thm11-euler", "--system", "generic", "--replicates", "10"]) == 2
    assert "sqrt" in capsys.readouterr().err


def test_wrong_subcommand_for_id(capsys):
    assert cli.main(["chaos", "thm4-gamma"]) == 2
    assert "unknown experiment" in capsys.readouterr().err


def test_missing_config_file(capsys, tmp_path):
    assert cli.main(["graduation", "thm4-uniform", "--config", str(tmp_path / "none.cfg")]) == 2


# --- rows and CSV -----------------------------------------------------------

def test_row_z_score_and_gate():
    r = ResultRow("x", 4, "s", 1.5, 0.5, 1.0, "paper")
    assert r.z_score == pytest.approx(1.0)
    assert r.passed(4.0) and not r.passed(0.5)


def test_row_zero_se_exact_match():
    assert ResultRow("x", 1, "s", 0.0, 0.0, 0.0, "analytic-oracle").passed(4.0)
    assert not ResultRow("x", 1, "s", 1e-3, 0.0, 0.0, "analytic-oracle").passed(4.0)


def test_row_checks():
    assert ResultRow("x", 1, "s", 0.1, 0.0, 0.2, "paper", "below").passed(4)
    assert not ResultRow("x", 1, "s", 0.3, 0.0, 0.2, "paper", "below").passed(4)
    assert ResultRow("x", 1, "s", 0.5, 0.0, 0.4, "paper", "above").passed(4)
    assert ResultRow("x", 1, "s", 1e-16, 0.0, 0.0, "paper", "close", 1e-15).passed(4)
    assert ResultRow("x", 1, "s", 99.0, 0.0, 0.0, "paper", "info").passed(4)


def test_row_rejects_unknown_provenance():
    with pytest.raises(ValueError):
        ResultRow("x", 1, "s", 0.0, 1.0, 0.0, "folklore")


@given(st.floats(-1e6, 1e6), st.floats(1e-6, 1e3), st.floats(-1e6, 1e6))
def test_csv_round_trips_floats(est, se, target):
    row = ResultRow("e", 8, "stat,with comma", est, se, target, "simulation-oracle")
    rec = list(csv.reader(io.StringIO(cli.rows_to_csv([row]))))
    assert rec[0] == list(cli.COLUMNS)
    assert rec[1][2] == "stat,with comma"
    assert float(rec[1][3]) == est and float(rec[1][4]) == se and float(rec[1][5]) == target
    assert float(rec[1][7]) == row.z_score


def test_csv_blank_z_when_no_se():
    text = cli.rows_to_csv([ResultRow("e", 1, "s", 0.0, 0.0, 0.0, "paper")])
    assert text.splitlines()[1].endswith(",paper,")


# --- small runs -------------------------------------------------------------

@pytest.mark.parametrize("eid", ["thm4-uniform", "thm4-identities", "rajchman-decay", "thm9-chaos"])
def test_small_runs_schema(eid):
    rows, _ = _small(eid)
    assert rows
    for r in rows:
        assert r.experiment == eid and r.provenance in cli.PROVENANCE


def test_gamma_identity_target_tagged_paper():
    rows, _ = _small("thm4-gamma", function="identity", replicates=20000)
    r = next(r for r in rows if r.statistic == "gamma[identity]_richardson")
    assert r.target == pytest.approx(1 / 12) and r.provenance == "paper"
    assert abs(r.z_score) <= 4


def test_same_seed_same_csv_and_seed_matters():
    a, _ = _small("thm4-default", n_ladder=(16, 32))
    b, _ = _small("thm4-default", n_ladder=(16, 32))
    c, _ = _small("thm4-default", n_ladder=(16, 32), seed=2)
    assert cli.rows_to_csv(a) == cli.rows_to_csv(b) != cli.rows_to_csv(c)


def test_main_writes_csv(tmp_path):
    out = tmp_path / "o.csv"
    code = cli.main(["graduation", "thm4-identities", "--replicates", "500", "--n-ladder", "16,32",
                     "--out", str(out)])
    assert code == 0
    rec = list(csv.reader(out.open(encoding="utf-8")))
    assert rec[0] == list(cli.COLUMNS)
    assert {r[1] for r in rec[1:]} == {"16", "32"}


def test_main_config_file_with_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("replicates = 300\nn_ladder = 8\nseed = 5\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.main(["graduation", "thm4-identities", "--config", str(cfg), "--out", str(a)])
    cli.main(["graduation", "thm4-identities", "--config", str(cfg), "--n-ladder", "8,16", "--out", str(b)])
    assert len(a.read_text().splitlines()) == 3
    assert len(b.read_text().splitlines()) == 5


def test_failing_gate_gives_exit_one(tmp_path, capsys):
    code = cli.main(["graduation", "thm4-uniform", "--replicates", "200", "--n-ladder", "10",
                     "--distribution", "lattice10", "--out", str(tmp_path / "x.csv")])
    assert code == 1
    assert "FAIL" in capsys.readouterr().err
