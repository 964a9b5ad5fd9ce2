import json
import socket
import subprocess
import sys

import numpy as np
import pytest

from swingreach.cli import main
from swingreach.grid import read_field_csv
from swingreach.plant import RelayStatus, SmibParams, Trajectory
from swingreach.reachability import stability_target

FAST = ["--grid", "41", "--horizon", "0.5"]


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def meta(out, command):
    return json.loads((out / f"{command}.meta.json").read_text())


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["stability", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_key_is_usage_error(tmp_path):
    cfg = write_config(tmp_path, {"params": {"inertia": 1.0}})
    assert main(["invariant", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("argv", [[], ["explode"], ["stability", "--relay", "ajar"], ["sweep", "--grid", "x"]])
def test_argparse_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_bad_grid_flag(tmp_path):
    assert main(["stability", "--grid", "2", "--out", str(tmp_path)]) == 2
    assert main(["stability", "--horizon", "-1", "--out", str(tmp_path)]) == 2


def test_zero_horizon_stability_is_target(tmp_path):
    out = tmp_path / "o"
    assert main(["stability", "--grid", "41", "--horizon", "0", "--relay", "open", "--out", str(out)]) == 0
    f = read_field_csv(out / "stability_open_t0.csv")
    target = stability_target(SmibParams(), RelayStatus.OPEN, f.spec)
    assert np.array_equal(f.values, target.values)
    assert (out / "stability_open_t0.contour.json").exists()


def test_invariant_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["invariant", *FAST, "--out", str(a)]) == 0
    assert main(["invariant", *FAST, "--out", str(b)]) == 0
    ma, mb = meta(a, "invariant"), meta(b, "invariant")
    assert ma["files"] == mb["files"]
    for name in ma["files"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    for stem in ("invariant_open_t0", "viability_closed_t0.5", "invariant_intersection"):
        assert f"{stem}.csv" in ma["files"]
    assert set(ma["summary"]) == {"open", "closed", "intersection"}


def test_simulate_writes_trajectories(tmp_path):
    cfg = write_config(tmp_path, {"x0": [[0.46, 1.0]], "sim": {"T": 0.2, "policy": "constant", "constant": 0.1}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--relay", "closed", "--out", str(out)]) == 0
    tr = Trajectory.from_csv(out / "sim_closed_0.csv")
    assert len(tr) == 201 and np.all(tr.d == 0.1)
    assert meta(out, "simulate")["summary"]["closed_0"]["first_exit_time"] is None


def test_attack_without_feasible_bound_fails(tmp_path):
    # with d = 0 nothing leaves the open-relay region around the closed equilibrium
    cfg = write_config(tmp_path, {"attack": {"bound_candidates": [0.0], "T": 0.5}})
    assert main(["attack", "--config", cfg, "--grid", "61", "--out", str(tmp_path / "o")]) == 1


def test_sweep_small(tmp_path):
    cfg = write_config(tmp_path, {"sweep": {"start": 0.2, "stop": 1.4, "step": 0.6}})
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--grid", "41", "--relay", "open", "--out", str(out)]) == 0
    rows = (out / "sweep_open.csv").read_text().splitlines()
    assert rows[0] == "bound,empty,members,max_value" and len(rows) == 4
    assert meta(out, "sweep")["summary"]["open"]["monotone"]


def test_hitl_quick(tmp_path):
    cfg = write_config(tmp_path, {"hitl": {"T": 0.05}, "x0": [[0.9, 2.0]]})
    out = tmp_path / "o"
    assert main(["hitl", "--config", cfg, "--out", str(out)]) == 0
    summary = meta(out, "hitl")["summary"]
    assert summary["pass"] and summary["open_0"]["max_deviation"] == 0.0


def test_plant_without_controller_fails(tmp_path):
    port = _free_port()
    assert main(["hitl-plant", "--connect", f"127.0.0.1:{port}", "--connect-retry", "0",
                 "--out", str(tmp_path)]) == 1


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_endpoints_as_separate_processes(tmp_path):
    cfg = write_config(tmp_path, {
        "hitl": {"T": 0.1, "timeout": 10.0},
        "x0": [[0.46, 0.0]],
        "relay": "closed",
        "spoof": [{"t0": 0.05, "relay": "open"}],
    })
    ctrl_port, proxy_port = _free_port(), _free_port()
    run = lambda *a: subprocess.Popen([sys.executable, "-m", "swingreach.cli", *a, "--config", cfg],
                                      stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    ctrl = run("hitl-controller", "--listen", f"127.0.0.1:{ctrl_port}", "--out", str(tmp_path / "c"))
    proxy = run("hitl-proxy", "--listen", f"127.0.0.1:{proxy_port}",
                "--upstream", f"127.0.0.1:{ctrl_port}", "--out", str(tmp_path / "p"))
    plant = run("hitl-plant", "--connect", f"127.0.0.1:{proxy_port}", "--out", str(tmp_path / "pl"))
    codes = [p.wait(timeout=60) for p in (plant, proxy, ctrl)]
    assert codes == [0, 0, 0], [p.stderr.read() for p in (plant, proxy, ctrl)]
    tr = Trajectory.from_csv(tmp_path / "pl" / "hitl_plant.csv")
    assert len(tr) == 101
    flips = [i for i in range(1, len(tr)) if tr.relay[i] is not tr.relay[i - 1]]
    assert flips == [50]
    log = [json.loads(x) for x in (tmp_path / "p" / "tamper_log.jsonl").read_text().splitlines()]
    assert len(log) == 51 and all(e["field"] == "relay" for e in log)
    assert (tmp_path / "c" / "hitl_controller.csv").read_text().count("closed") == 101
