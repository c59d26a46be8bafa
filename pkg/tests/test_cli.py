import json

import numpy as np
import pytest

from etconsensus import outputs, verify
from etconsensus.analysis import compute_metrics
from etconsensus.cli import UsageError, main, parse_grid
from etconsensus.scenario import bundled_scenario
from etconsensus.simulator import run


@pytest.fixture(scope="module")
def pair_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pair")
    assert main(["run", "two_agent_tight", "--out", str(out), "--force"]) == 0
    return out


def test_run_writes_all_outputs(pair_dir):
    for f in outputs.OUTPUT_FILES:
        assert (pair_dir / f).is_file()
    header = (pair_dir / "trajectory.csv").read_text().splitlines()[0]
    sc = bundled_scenario("two_agent_tight")
    assert header == f"# scenario=two_agent_tight hash={sc.hash} seed=0"
    metrics = json.loads((pair_dir / "metrics.json").read_text())
    assert metrics["metrics"]["r_com"] == pytest.approx(1.0)
    compile((pair_dir / "plot.py").read_text(), "plot.py", "exec")


def test_saved_events_round_trip(pair_dir):
    _, events = outputs.read_events(pair_dir / "events.csv")
    assert [e.agent for e in events] == [0, 1]
    assert all(e.t == 0.5 and e.kind == "clock_zero" for e in events)
    assert events[0].post[1] == events[0].pre[0]


def test_run_refuses_to_overwrite(pair_dir, capsys):
    assert main(["run", "two_agent_tight", "--out", str(pair_dir)]) == 2
    assert "--force" in capsys.readouterr().err


def test_missing_scenario_file(tmp_path, capsys):
    missing = tmp_path / "missing.toml"
    assert main(["run", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_scenario_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('x0 = [1.0, -1.0]\nhorizn = 1\n[graph]\nedges = [[0, 1, 1.0], [1, 0, 1.0]]\n[agents]\nsigma = 0.5\n')
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "horizn" in capsys.readouterr().err


def test_usage_error_from_argparse():
    assert main(["frobnicate"]) == 2


def test_verify_scenario_and_directory_agree(pair_dir, capsys):
    assert main(["verify", "two_agent_tight"]) == 0
    live = capsys.readouterr().out.splitlines()[1:]
    assert main(["verify", str(pair_dir)]) == 0
    saved = capsys.readouterr().out.splitlines()[1:]
    assert live == saved
    assert all(" PASS " in line for line in live)


def test_offline_and_in_process_verdicts_match_fig1(tmp_path):
    sc = bundled_scenario("paper_fig1")
    tr = run(sc.config)
    outputs.write_run(tmp_path, sc, tr, compute_metrics(tr))
    live = verify.verify_trajectory(tr, oracle=False)
    saved = verify.verify_directory(tmp_path, oracle=False)
    assert [(r.name, r.status) for r in live] == [(r.name, r.status) for r in saved]
    assert [r.status for r in live] == ["pass"] * 5 + ["skip"]


def copy_run(src, dst):
    dst.mkdir()
    for f in outputs.OUTPUT_FILES:
        (dst / f).write_bytes((src / f).read_bytes())
    return dst


def test_corrupted_trajectory_reports_location(pair_dir, tmp_path, capsys):
    d = copy_run(pair_dir, tmp_path / "bad")
    lines = (d / "trajectory.csv").read_text().splitlines()
    lines[10] = lines[10].replace(",", ",oops", 1)
    (d / "trajectory.csv").write_text("\n".join(lines) + "\n")
    assert main(["verify", str(d)]) == 1
    assert "trajectory.csv:11" in capsys.readouterr().err


def test_tampered_hash_rejected(pair_dir, tmp_path, capsys):
    d = copy_run(pair_dir, tmp_path / "bad")
    text = (d / "events.csv").read_text().replace("hash=", "hash=0", 1)
    (d / "events.csv").write_text(text)
    assert main(["verify", str(d)]) == 1
    assert "events.csv:1" in capsys.readouterr().err


def test_tampered_state_fails_conservation(pair_dir, tmp_path, capsys):
    d = copy_run(pair_dir, tmp_path / "bad")
    saved = outputs.read_trajectory(d / "trajectory.csv", 2)
    lines = (d / "trajectory.csv").read_text().splitlines()
    row = lines[100].split(",")
    row[2] = outputs.fmt(saved.x[98, 0] + 0.01)
    lines[100] = ",".join(row)
    (d / "trajectory.csv").write_text("\n".join(lines) + "\n")
    assert main(["verify", str(d), "--no-oracle"]) == 1
    out = capsys.readouterr().out
    assert "conservation" in out and "FAIL" in out


def test_missing_results_file(pair_dir, tmp_path, capsys):
    d = copy_run(pair_dir, tmp_path / "bad")
    (d / "events.csv").unlink()
    assert main(["verify", str(d)]) == 2
    assert "events.csv" in capsys.readouterr().err


def test_parse_grid():
    assert parse_grid("0.1:0.1:0.5") == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert parse_grid("0.3, 0.6") == [0.3, 0.6]
    assert len(parse_grid("0.1:0.1:0.9")) == 9
    for bad in ("", " ", "0.1:0:0.5", "a,b", "0.5,1.5"):
        with pytest.raises(UsageError):
            parse_grid(bad)


def test_sweep_infeasible_sigma_is_usage_error(tmp_path, capsys):
    # paper_fig1 requires tau_0 = 0.4, which sigma = 0.3 cannot guarantee
    assert main(["sweep", "paper_fig1", "--sigma-grid", "0.3", "--out", str(tmp_path / "s")]) == 2
    assert "agent 0: tau = 0.4" in capsys.readouterr().err


def test_sweep_empty_grid_exit_code(tmp_path, capsys):
    assert main(["sweep", "two_agent_tight", "--sigma-grid", "", "--out", str(tmp_path / "s")]) == 2
    assert "empty sigma grid" in capsys.readouterr().err


def test_sweep_writes_csv(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "paper_sweep", "--sigma-grid", "0.3,0.6", "--horizon", "4", "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[1] == "sigma,r_com,cost,n_events"
    assert [float(l.split(",")[0]) for l in lines[2:]] == [0.3, 0.6]


def test_noisy_sweep_writes_wiener_check(tmp_path):
    out = tmp_path / "s"
    code = main(["sweep", "paper_noise", "--sigma-grid", "0.9", "--horizon", "2", "--seeds", "30", "--out", str(out)])
    doc = json.loads((out / "wiener_check.json").read_text())
    chk = doc["wiener_check"]
    assert chk["n_seeds"] == 30
    assert code == (0 if chk["passed"] else 1)
    assert np.isfinite(chk["variance"])
