import io
import json
from pathlib import Path

import pytest

from snc80211 import cli
from snc80211 import config as cfg

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

SMALL = """
schema = "snc80211/1"
name = "small"

[scenario]
n = 4
payload = 256

[traffic]
kind = "{kind}"
lam = {lam}

[sim]
duration = 1.0
replications = 2
snapshot = 0.5
seed = 5

[bound]
x_max = 10
theta_points = 10
max_sweeps = 3

[sweep]
lam = [0.05, 0.25]
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(argv):
    out = io.StringIO()
    code = cli.run(argv, stdout=out)
    return code, out.getvalue()


def test_solve_scenario1():
    code, out = run(["solve", str(SCENARIOS / "scenario1.toml")])
    assert code == 0
    s = json.loads(out)["solve"]
    assert s["tau"] == pytest.approx(0.037, abs=1e-3)
    assert s["gamma"] == pytest.approx(0.293, abs=1e-3)
    assert s["stability_threshold"] == pytest.approx(0.079, abs=1e-3)
    assert s["L_int"] == 38


def test_solve_single_node_and_csv():
    code, out = run(["solve", str(SCENARIOS / "n1.toml"), "--format", "csv"])
    assert code == 0 and "gamma,0.0" in out


def test_fit_reports_both_envelopes():
    code, out = run(["fit", str(SCENARIOS / "scenario1.toml"), "--theta", "1", "--format", "csv"])
    assert code == 0
    header, row = out.strip().splitlines()
    assert header == "theta,sigma,rho,t_star,v_m,converged,certified_sigma,certified_rho"
    vals = dict(zip(header.split(","), row.split(",")))
    assert float(vals["rho"]) == pytest.approx(0.948, abs=0.01)


@pytest.mark.parametrize("text,fragment", [
    ('schema = "snc80211/1"\n[scenario]\nn = 2\npayload = 256\ncolour = 1\n', "scenario.colour: unknown key"),
    ('schema = "snc80211/2"\n[scenario]\nn = 2\npayload = 256\n', "schema"),
    ('schema = "snc80211/1"\n[scenario]\nn = 0\npayload = 256\n', "scenario"),
    ('schema = "snc80211/1"\n[scenario]\nn = 2\n', "scenario.payload: missing"),
    ('schema = "snc80211/1"\n[scenario]\nn = 2\npayload = 256\n[traffic]\nkind = "cbr"\nlam = "fast"\n',
     "traffic.lam"),
    ('schema = "snc80211/1"\n[scenario]\nn = 2\npayload = 256\n[scenario.phy]\nsifs = -1\n', "scenario.phy"),
    ('schema = "snc80211/1"\n[scenario\n', "line 2"),
])
def test_malformed_files_exit_1(tmp_path, capsys, text, fragment):
    code, _ = run(["solve", write(tmp_path, text)])
    assert code == 1
    assert fragment in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as e:
        run(["frobnicate"])
    assert e.value.code == 1
    assert run(["solve", str(tmp_path / "missing.toml")])[0] == 1
    saturated = str(SCENARIOS / "scenario1.toml")
    assert run(["bound", saturated])[0] == 1
    assert run(["simulate", saturated, "--duration", "1", "--snapshot", "2"])[0] == 1


def test_internal_failure_exits_2(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise AssertionError("departure trace above arrival trace")

    monkeypatch.setattr(cli, "run_experiment", broken)
    path = write(tmp_path, SMALL.format(kind="cbr", lam=0.05))
    assert run(["simulate", path])[0] == 2


def test_unstable_bound_is_a_valid_answer(tmp_path):
    path = write(tmp_path, SMALL.format(kind="poisson", lam=0.3))
    code, out = run(["bound", path])
    assert code == 0
    b = json.loads(out)["bound"]
    assert b["verdict"] == "unstable" and not b["feasible"]


def test_zero_rate_bound(tmp_path):
    code, out = run(["bound", write(tmp_path, SMALL.format(kind="cbr", lam=0.0))])
    assert code == 0 and all(v == 0.0 for v in json.loads(out)["bound"]["tail"])


def test_experiment_outputs_and_round_trip(tmp_path, monkeypatch):
    path = write(tmp_path, SMALL.format(kind="cbr", lam=0.05))
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "env_out"))
    code, out = run(["experiment", path])
    assert code == 0
    report = json.loads(out)
    files = sorted(p.name for p in (tmp_path / "env_out").iterdir())
    assert files == ["backlog.csv", "delay.csv", "experiment.json"]
    lines = (tmp_path / "env_out" / "backlog.csv").read_text().splitlines()
    assert lines[0] == "x,analytical_bound,empirical_tail" and len(lines) == 12
    v = report["verdicts"]
    # verdicts are recomputable from the included numbers
    assert v["backlog_dominance"] == all(a >= e for a, e in zip(report["bound"]["tail"],
                                                                 report["simulate"]["backlog_tail"]))
    assert v["little"]["informational"] is True
    again = cfg.from_dict(report["scenario"])
    orig = cfg.load(path)
    assert again.scenario == orig.scenario and again.sim == orig.sim and again == orig


def test_csv_is_byte_identical_across_runs(tmp_path):
    path = write(tmp_path, SMALL.format(kind="poisson", lam=0.05))
    for d in ("a", "b"):
        assert run(["experiment", path, "--out", str(tmp_path / d), "--format", "csv"])[0] == 0
    for name in ("backlog.csv", "delay.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run(["experiment", path, "--out", str(tmp_path / "c"), "--seed", "6"])[0] == 0
    assert (tmp_path / "a" / "delay.csv").read_bytes() != (tmp_path / "c" / "delay.csv").read_bytes()


def test_flags_override_file(tmp_path):
    path = write(tmp_path, SMALL.format(kind="cbr", lam=0.05))
    code, out = run(["simulate", path, "--replications", "1", "--duration", "0.6", "--seed", "11"])
    s = json.loads(out)
    assert code == 0 and s["simulate"]["replications"] == 1 and s["scenario"]["sim"]["seed"] == 11
    assert s["scenario"]["sim"]["snapshot"] == 0.5


def test_sweep(tmp_path):
    path = write(tmp_path, SMALL.format(kind="poisson", lam=0.05))
    code, out = run(["sweep", path, "--format", "csv"])
    assert code == 0
    rows = out.strip().splitlines()
    assert rows[0] == "lam,stable,mean_backlog,time_avg_backlog,mean_sojourn_s,per_node_throughput"
    assert rows[1].startswith("0.05,True") and rows[2].startswith("0.25,False")


def test_golden_scenarios_parse():
    for p in sorted(SCENARIOS.glob("*.toml")):
        sf = cfg.load(p)
        assert cfg.from_dict(sf.to_dict()) == sf
