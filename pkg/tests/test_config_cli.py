import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavitywalk import cli
from cavitywalk.config import ConfigError, RunConfig, parse_config, serialize_config
from cavitywalk.errors import EstimationError
from cavitywalk.report import Report, read_report, write_report


# -- configuration -----------------------------------------------------------

def test_defaults_are_the_apparatus():
    c = parse_config("")
    assert (c.t1_ns, c.t2_ns, c.eta_c, c.r_s1, c.r_s2) == (503.0, 511.0, 0.5, 0.99, 0.99)
    assert (c.loss_c1_db, c.loss_c2_db, c.jitter_fwhm_ps, c.tdc_bin_ps) == (0.50, 0.47, 300.0, 162)
    assert (c.trial_period_us, c.pulse_ns) == (33.0, 2.5)
    c.validate()


def test_parse_values_and_comments():
    c = parse_config("# comment\nnetwork.eta_c = 0.2  # bias\nrun.trials = 1e6\n\nrun.input_energy = 1500\n")
    assert c.eta_c == 0.2 and c.trials == 1_000_000 and c.input_energy == "1500"
    assert c.resolved_input_energy() == 1500.0


@pytest.mark.parametrize("text,key", [
    ("network.nope = 1", "network.nope"),
    ("run.trials = many", "run.trials"),
    ("run.trials = 1.5", "run.trials"),
    ("network.eta_c = nan", "network.eta_c"),
    ("just a line", "line 1"),
])
def test_parse_errors_name_the_field(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


@pytest.mark.parametrize("text,key", [
    ("network.eta_c = 1.2", "network.eta_c"),
    ("run.steps = 63", "run.steps"),
    ("run.trials = -1", "run.trials"),
    ("run.workers = 0", "run.workers"),
    ("run.input_energy = lots", "run.input_energy"),
    ("run.target_photons = 1.0", "run.target_photons"),
    ("detector.efficiency = 0", "detector"),
    ("network.t2_ns = 504", "network"),
])
def test_validation_errors(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text).validate()
    assert exc.value.key == key


finite = st.floats(-1e6, 1e6, allow_nan=False)
safe_text = st.text(st.characters(whitelist_categories=("L", "N"), whitelist_characters="._-/"), min_size=1, max_size=20)


def _field_strategy(f):
    if f.name == "input_energy":
        return st.one_of(st.just("auto"), st.floats(0, 1e5).map(repr))
    if f.name in ("events_path", "report_path"):
        return safe_text
    if f.type in ("int", int):
        return st.integers(-10**9, 10**9)
    return finite


@settings(max_examples=50)
@given(st.fixed_dictionaries({f.name: _field_strategy(f) for f in dataclasses.fields(RunConfig)}))
def test_config_round_trip(values):
    cfg = RunConfig(**values)
    assert parse_config(serialize_config(cfg)) == cfg


def test_overrides_win():
    c = parse_config("run.seed = 3", seed=9, trials=None)
    assert c.seed == 9 and c.trials == 5_000_000


# -- reports -----------------------------------------------------------------

def test_report_round_trip(tmp_path):
    rows = np.array([[0, 0, 5, 0.1, 0.2, 0.01, 1.0], [1, 0, 0, 0, float("nan"), 0, float("nan")]])
    r = Report(rows, {0: 0.99}, {0: (0.5, 0.01, 8)}, ["a  note\nwith newline"])
    write_report(r, tmp_path / "r.txt")
    back = read_report(tmp_path / "r.txt")
    np.testing.assert_array_equal(back.rows, rows)
    assert back.fidelity == {0: 0.99} and back.losses == {0: (0.5, 0.01, 8)}
    assert back.notes == ["a note with newline"]
    assert [d.step for d in back.distributions()] == [0]


# -- command line ------------------------------------------------------------

def cfg_file(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


def test_simulate_ideal_two_steps(tmp_path):
    out = tmp_path / "ideal.txt"
    assert cli.main(["simulate-ideal", "--steps", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert "2 0 0 0 0.25 0 0.25" in lines
    assert "2 1 0 0 0.5 0 0.5" in lines
    assert "2 2 0 0 0.25 0 0.25" in lines


def test_simulate_ideal_identity_coin(tmp_path):
    out = tmp_path / "ideal.txt"
    assert cli.main(["simulate-ideal", "--config", cfg_file(tmp_path, "network.eta_c = 1.0\n"),
                     "--steps", "10", "--out", str(out)]) == 0
    for d in read_report(out).distributions():
        assert d.probs[0] == pytest.approx(1.0)


def test_steps_beyond_limit_refused(tmp_path, capsys):
    assert cli.main(["simulate-ideal", "--steps", "70", "--out", str(tmp_path / "x")]) == 1
    assert "observable limit 62" in capsys.readouterr().err


def test_simulate_physical_zero_trials(tmp_path, capsys):
    out = tmp_path / "ev.txt"
    assert cli.main(["simulate-physical", "--trials", "0", "--out", str(out)]) == 0
    assert out.read_text() == "#cavitywalk-events v1 tdc_bin_ps=162 trial_period_ns=33000.0\n"
    assert "events=0" in capsys.readouterr().out


def test_simulate_physical_deterministic(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (a, b):
        assert cli.main(["simulate-physical", "--trials", "100000", "--seed", "5", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_scaling_violation(tmp_path, capsys):
    rc = cli.main(["simulate-physical", "--config", cfg_file(tmp_path, "run.input_energy = 1e7\n"),
                   "--trials", "10", "--out", str(tmp_path / "e")])
    assert rc == 1
    assert "input_energy <=" in capsys.readouterr().err


def test_analyze_pipeline_and_mismatch(tmp_path, capsys):
    ev, rep = tmp_path / "ev.txt", tmp_path / "rep.txt"
    assert cli.main(["simulate-physical", "--trials", "1000000", "--seed", "2", "--out", str(ev)]) == 0
    assert cli.main(["analyze", "--trials", "1000000", "--out", str(rep), str(ev)]) == 0
    r = read_report(rep)
    assert r.losses[0][0] == pytest.approx(0.50, abs=0.05)
    assert r.losses[1][0] == pytest.approx(0.47, abs=0.05)
    assert min(f for n, f in r.fidelity.items() if n <= 30) > 0.99
    for d in r.distributions():
        assert abs(d.probs.sum() - 1) < 1e-9
    capsys.readouterr()
    bad = cfg_file(tmp_path, "detector.tdc_bin_ps = 100\n")
    assert cli.main(["analyze", "--config", bad, "--out", str(tmp_path / "r2"), str(ev)]) == 1
    assert "does not match" in capsys.readouterr().err


def test_analyze_empty_file(tmp_path):
    ev, rep = tmp_path / "ev.txt", tmp_path / "rep.txt"
    cli.main(["simulate-physical", "--trials", "0", "--out", str(ev)])
    assert cli.main(["analyze", "--trials", "0", "--out", str(rep), str(ev)]) == 0
    r = read_report(rep)
    assert r.distributions() == [] and r.fidelity == {}
    assert any("dropped 63 step" in n for n in r.notes)


def test_compare(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    cli.main(["simulate-ideal", "--steps", "62", "--out", str(a)])
    cli.main(["simulate-ideal", "--steps", "62", "--out", str(b),
              "--config", cfg_file(tmp_path, "network.eta_c = 0.8\n")])
    capsys.readouterr()
    assert cli.main(["compare", str(a), str(a)]) == 0
    lines = capsys.readouterr().out.splitlines()[1:]
    assert len(lines) == 62 and all(abs(float(l.split()[1]) - 1.0) < 1e-12 for l in lines)
    assert cli.main(["compare", str(a), str(b)]) == 0
    last = capsys.readouterr().out.splitlines()[-1].split()
    assert last[0] == "62" and float(last[1]) < 0.99
    c = tmp_path / "c.txt"
    cli.main(["simulate-ideal", "--steps", "10", "--out", str(c)])
    assert cli.main(["compare", str(a), str(c)]) == 1


def test_compare_disjoint(tmp_path, capsys):
    p, q = tmp_path / "p.txt", tmp_path / "q.txt"
    write_report(Report(np.array([[1, 0, 0, 0, 1, 0, 1.0], [1, 1, 0, 0, 0, 0, 0.0]])), p)
    write_report(Report(np.array([[1, 0, 0, 0, 0, 0, 0.0], [1, 1, 0, 0, 1, 0, 1.0]])), q)
    assert cli.main(["compare", str(p), str(q)]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "1 0"


def test_runtime_errors_exit_2(monkeypatch, capsys):
    def boom(args):
        raise EstimationError("fit failed")
    monkeypatch.setattr(cli, "cmd_compare", boom)
    assert cli.main(["compare", "a", "b"]) == 2
    assert "fit failed" in capsys.readouterr().err
