import csv
import os

import numpy as np
import pytest
import yaml

from etlqr.cli import SERIES_FIELDS, main
from etlqr.config import (
    ScenarioConfig,
    TriggerSpec,
    dump_config,
    load_config,
    load_trajectory,
    parse_config,
    save_trajectory,
    system_from_dict,
    system_to_dict,
)
from etlqr.exceptions import ConfigError
from etlqr.identification import ExcitationSignal, excitation
from etlqr.system import CostWeights, OpenLoopSystem, RandomSystemSpec, close_loop, random_system, simulate

SMALL = {
    "seed": 3,
    "total_steps": 3000,
    "change_interval": 1500,
    "trigger": {"kind": "chernoff", "horizon": 50, "eta": 0.01},
}


def write_yaml(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_defaults():
    cfg = parse_config({})
    assert cfg.change_interval == 10000 and cfg.total_steps == 50000
    assert cfg.trigger.kind == "chernoff" and cfg.learning == "oracle"
    assert cfg.excitation.duration == 2000


def test_yaml_round_trip():
    data = {
        "seed": 11,
        "total_steps": 20000,
        "change_interval": 5000,
        "learning": "ols",
        "system": {"random": {"n": 3, "q": 2, "entry_range": [-0.5, 0.5]}},
        "weights": {"Q": np.diag([1.0, 2.0, 3.0]).tolist(), "R": np.eye(2).tolist()},
        "trigger": {"kind": "relative", "horizon": 60, "eta": 0.25, "gap": None, "W": np.eye(3).tolist()},
        "excitation": {"kind": "white", "amplitude": 2.0, "duration": 500},
        "montecarlo": {"rollouts": 4, "changes": 12, "wall_budget": 60.0},
    }
    cfg = parse_config(data)
    again = parse_config(yaml.safe_load(dump_config(cfg)))
    assert dump_config(again) == dump_config(cfg)
    assert again.trigger == cfg.trigger and again.excitation == cfg.excitation
    assert again.random_spec == cfg.random_spec and again.montecarlo == cfg.montecarlo
    assert np.array_equal(again.weights.Q_lqr, cfg.weights.Q_lqr)


def test_explicit_system_round_trip():
    sys = random_system(RandomSystemSpec(n=2), np.random.default_rng(0))
    back = system_from_dict(yaml.safe_load(yaml.safe_dump(system_to_dict(sys))))
    assert np.array_equal(back.A, sys.A) and np.array_equal(back.B, sys.B) and np.array_equal(back.V, sys.V)
    cfg = parse_config({"system": system_to_dict(sys)})
    assert cfg.n == 2 and cfg.change_spec.n == 2


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"trigger": {"kind": "cusum"}},
    {"trigger": {"eta": 1.5}},
    {"trigger": {"horizon": 0}},
    {"total_steps": 10, "change_interval": 100},
    {"learning": "pem"},
    {"system": {"A": [[0.5]]}},
    {"system": {"A": [[0.5]], "B": [[1.0]], "V": [[1.0]]}, "weights": {"Q": np.eye(2).tolist()}},
    {"excitation": {"f_start": 0.7}},
    "not a mapping",
])
def test_bad_config(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("trigger: [unclosed")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_trajectory_csv_round_trip(tmp_path):
    sys = random_system(RandomSystemSpec(n=3), np.random.default_rng(1))
    cl = close_loop(sys, CostWeights.identity(3, 1))
    traj = simulate(cl, np.zeros(3), 50, np.random.default_rng(2), u_ref=np.ones((50, 1)))
    path = str(tmp_path / "traj.csv")
    save_trajectory(traj, path)
    back = load_trajectory(path)
    assert np.array_equal(back.states, traj.states) and np.array_equal(back.inputs, traj.inputs)
    with open(path) as fh:
        assert next(csv.reader(fh)) == ["x0", "x1", "x2", "u0"]


def test_trajectory_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("")
    with pytest.raises(ConfigError):
        load_trajectory(str(p))
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        load_trajectory(str(p))
    p.write_text("x0,u0\n1,oops\n")
    with pytest.raises(ConfigError):
        load_trajectory(str(p))


def test_cli_moments_scalar(tmp_path, capsys):
    cfg = write_yaml(tmp_path, {"system": {"A": [[0.0]], "B": [[0.0]], "V": [[1.0]]}, "weights": {"Q": [[1.0]], "R": [[1.0]]}})
    assert main(["moments", "--config", cfg, "--N", "10"]) == 0
    out = capsys.readouterr().out
    lines = dict(line.rsplit(None, 1) for line in out.strip().splitlines())
    assert float(lines["mean (Lyapunov)"]) == pytest.approx(10.0, rel=1e-12)
    assert float(lines["variance"]) == pytest.approx(20.0, rel=1e-10)
    assert float(lines["second moment (closed form)"]) == pytest.approx(120.0, rel=1e-10)
    assert lines["mean agreement"] == "ok" and lines["second moment agreement"] == "ok"


def test_cli_moments_zero_noise(tmp_path, capsys):
    cfg = write_yaml(tmp_path, {"system": {"A": [[0.5, 0.0], [0.1, 0.2]], "B": [[1.0], [0.0]], "V": [[0.0, 0.0], [0.0, 0.0]]}})
    rc = main(["moments", "--config", cfg, "--N", "5"])
    captured = capsys.readouterr()
    assert rc in (0, 4)
    if rc == 0:
        lines = dict(line.rsplit(None, 1) for line in captured.out.strip().splitlines())
        assert float(lines["mean (Lyapunov)"]) == 0.0
        assert float(lines["second moment (closed form)"]) == 0.0


def test_cli_moments_random_system_agrees(capsys):
    assert main(["--seed", "5", "moments", "--N", "30"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_cli_thresholds_sweep(tmp_path, capsys):
    assert main(["thresholds", "--seed", "1", "--eta", "0.01", "0.05", "0.2"]) == 0
    rows = [line.split() for line in capsys.readouterr().out.strip().splitlines()[1:]]
    lo = [float(r[1]) for r in rows]
    hi = [float(r[2]) for r in rows]
    assert lo == sorted(lo) and hi == sorted(hi, reverse=True)
    assert main(["thresholds", "--seed", "1", "--kind", "hoeffding", "--eta", "0.1", "0.25"]) == 0
    rows = [line.split() for line in capsys.readouterr().out.strip().splitlines()[1:]]
    assert float(rows[0][1]) > float(rows[1][1])


def test_cli_thresholds_chi_squared(tmp_path, capsys):
    cfg = write_yaml(tmp_path, {"system": {"A": [[0.0]], "B": [[0.0]], "V": [[1.0]]},
                                "trigger": {"horizon": 1, "eta": 0.05}})
    assert main(["thresholds", "--config", cfg]) == 0
    row = capsys.readouterr().out.strip().splitlines()[1].split()
    assert float(row[2]) >= 5.0239


def test_cli_simulate_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", write_yaml(tmp_path, SMALL), "--out-dir", str(out)]) == 0
    assert {"series.csv", "events.csv", "summary.txt", "config.yaml"} <= set(os.listdir(out))
    with open(out / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SERIES_FIELDS
    assert len(rows) == SMALL["total_steps"] + 1
    with open(out / "events.csv") as fh:
        events = list(csv.DictReader(fh))
    assert [int(e["step"]) for e in events] == sorted(int(e["step"]) for e in events)
    assert any(e["kind"] == "change" for e in events)
    # the saved config reproduces the run bit for bit
    out2 = tmp_path / "rerun"
    assert main(["simulate", "--config", str(out / "config.yaml"), "--out-dir", str(out2)]) == 0
    assert (out / "series.csv").read_bytes() == (out2 / "series.csv").read_bytes()
    assert (out / "events.csv").read_bytes() == (out2 / "events.csv").read_bytes()


def test_cli_simulate_plot(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "plot"
    assert main(["simulate", "--plot", "--config", write_yaml(tmp_path, SMALL), "--out-dir", str(out)]) == 0
    assert (out / "series.svg").read_text().lstrip().startswith(("<?xml", "<svg"))


def test_cli_montecarlo(tmp_path, capsys):
    data = dict(SMALL, change_interval=1000, total_steps=1000)
    cfg = write_yaml(tmp_path, data)
    out = tmp_path / "mc"
    rc = main(["montecarlo", "--config", cfg, "--rollouts", "2", "--changes", "6", "--out-dir", str(out)])
    assert rc in (0, 4)
    with open(out / "records.csv") as fh:
        records = list(csv.DictReader(fh))
    assert len(records) == 6
    if rc == 0:
        with open(out / "density.csv") as fh:
            assert sum(1 for _ in fh) == 256 * 128 + 1


def test_cli_montecarlo_no_changes(tmp_path, capsys):
    cfg = write_yaml(tmp_path, dict(SMALL, change_interval=1000, total_steps=1000))
    rc = main(["montecarlo", "--config", cfg, "--changes", "0", "--out-dir", str(tmp_path / "mc")])
    assert rc == 4
    assert "TooFewSamples" in capsys.readouterr().err


def test_cli_identify(tmp_path, capsys):
    sys = random_system(RandomSystemSpec(n=2), np.random.default_rng(4))
    cl = close_loop(sys, CostWeights.identity(2, 1))
    u = excitation(ExcitationSignal(kind="white", amplitude=10.0, duration=3000), q=1, rng=1)
    traj = simulate(cl, np.zeros(2), 3000, np.random.default_rng(3), u_ref=u)
    path = str(tmp_path / "traj.csv")
    save_trajectory(traj, path)
    out = tmp_path / "id"
    assert main(["identify", "--trajectory", path, "--out-dir", str(out)]) == 0
    assert "A_hat" in capsys.readouterr().out
    cfg = load_config(str(out / "identified.yaml"))
    assert np.allclose(cfg.system.A, sys.A, atol=0.1)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["moments", "--config", write_yaml(tmp_path, {"bogus": 1})]) == 2
    assert main(["identify"]) == 2
    p = tmp_path / "flat.csv"
    save_trajectory(simulate(close_loop(OpenLoopSystem(A=[[0.5]], B=[[1.0]], V=[[0.0]]), CostWeights.identity(1, 1)),
                             np.zeros(1), 100, 0), str(p))
    assert main(["identify", "--trajectory", str(p)]) == 4
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_global_flags_either_side():
    from etlqr.cli import build_parser
    a = build_parser().parse_args(["--seed", "4", "moments"])
    b = build_parser().parse_args(["moments", "--seed", "4"])
    assert a.seed == b.seed == 4
