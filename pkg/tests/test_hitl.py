import json
import logging
import threading

import numpy as np
import pytest

from swingreach.hitl.endpoints import HandshakeError, run_controller_endpoint, run_plant_endpoint
from swingreach.hitl.loop import run_loop
from swingreach.hitl.protocol import Cmd, Hello, ProtocolError, Step, decode, encode
from swingreach.hitl.proxy import SpoofProxy, SpoofRule
from swingreach.hitl.transport import transport_pair
from swingreach.hjsolver import DisturbanceBound
from swingreach.plant import (
    RelayStatus,
    SmibParams,
    constant_relay,
    equilibria,
    simulate,
    zero_policy,
)

P = SmibParams()
DT = 1e-3
CLOSED = constant_relay(RelayStatus.CLOSED)
B02 = DisturbanceBound.symmetric(0.2)


def wobble(t, x):
    return 0.15 * np.sin(7.0 * t) - 0.01 * x[1]


def _thread(fn, *args):
    box = {}

    def run():
        try:
            box["result"] = fn(*args)
        except Exception as exc:
            box["error"] = exc

    th = threading.Thread(target=run, daemon=True)
    th.start()
    return th, box


def test_loop_reproduces_in_process_simulation():
    ref = simulate((0.9, 2.0), P, wobble, CLOSED, 0.5, DT)
    res = run_loop(P, (0.9, 2.0), DT, 0.5, wobble, CLOSED)
    tr = res.trajectory
    assert not tr.meta["aborted"] and tr.meta["bye_reason"] == "done"
    assert len(tr) == len(ref) == 501
    for a, b in [(tr.t, ref.t), (tr.delta, ref.delta), (tr.omega, ref.omega), (tr.d, ref.d)]:
        assert np.array_equal(a, b)
    assert [c.seq for c in res.commands] == list(range(1, 502))


def test_loop_through_passive_proxy_is_identical():
    direct = run_loop(P, (0.9, 2.0), DT, 0.3, wobble, CLOSED).trajectory
    proxied = run_loop(P, (0.9, 2.0), DT, 0.3, wobble, CLOSED, rules=[])
    assert proxied.tamper_log == []
    assert np.array_equal(direct.delta, proxied.trajectory.delta)
    assert np.array_equal(direct.omega, proxied.trajectory.omega)


def test_equilibrium_is_stationary():
    eq = equilibria(P, RelayStatus.CLOSED)[0]
    tr = run_loop(P, eq, DT, 0.2, zero_policy, CLOSED).trajectory
    assert np.max(np.abs(tr.delta - eq.delta)) < 1e-12
    assert np.max(np.abs(tr.omega)) < 1e-10


def test_controller_disconnect_truncates_run():
    plant_t, ctrl_t = transport_pair(timeout=2.0)

    def short_controller():
        assert isinstance(ctrl_t.recv(), Hello)
        ctrl_t.send(Hello(0, 1, DT, P.digest()))
        for _ in range(10):
            step = ctrl_t.recv()
            ctrl_t.send(Cmd(step.seq, 0.0, RelayStatus.CLOSED))
        ctrl_t.recv()
        ctrl_t.close()

    th, _ = _thread(short_controller)
    tr = run_plant_endpoint(P, (0.5, 0.0), DT, 1.0, plant_t)
    th.join(2.0)
    plant_t.close()
    assert tr.meta["aborted"] and tr.meta["bye_reason"] == "peer disconnected"
    assert len(tr) == 10 and tr.meta["samples_expected"] == 1001


def test_controller_timeout_truncates_run():
    plant_t, ctrl_t = transport_pair(timeout=0.2)

    def silent_controller():
        ctrl_t.recv()
        ctrl_t.send(Hello(0, 1, DT, P.digest()))
        ctrl_t.recv()  # read the first Step and never answer

    th, _ = _thread(silent_controller)
    tr = run_plant_endpoint(P, (0.5, 0.0), DT, 1.0, plant_t)
    th.join(1.0)
    assert tr.meta["aborted"] and tr.meta["bye_reason"] == "timeout" and len(tr) == 0
    plant_t.close()
    ctrl_t.close()


def test_handshake_mismatch():
    other = SmibParams(M=0.03)
    with pytest.raises(HandshakeError, match="HELLO|digest"):
        plant_t, ctrl_t = transport_pair(timeout=1.0)
        th, box = _thread(run_controller_endpoint, zero_policy, CLOSED, ctrl_t, other, DT)
        try:
            run_plant_endpoint(P, (0.5, 0.0), DT, 0.1, plant_t)
        finally:
            th.join(1.0)
            plant_t.close()
            ctrl_t.close()
    assert isinstance(box.get("error"), HandshakeError)


def test_dt_mismatch_rejected_by_controller():
    plant_t, ctrl_t = transport_pair(timeout=1.0)
    th, box = _thread(run_controller_endpoint, zero_policy, CLOSED, ctrl_t, P, 2e-3)
    with pytest.raises(HandshakeError):
        run_plant_endpoint(P, (0.5, 0.0), DT, 0.1, plant_t)
    th.join(1.0)
    assert "dt mismatch" in str(box["error"])
    plant_t.close()
    ctrl_t.close()


def test_wrong_seq_is_protocol_error():
    plant_t, ctrl_t = transport_pair(timeout=1.0)

    def bad_controller():
        ctrl_t.recv()
        ctrl_t.send(Hello(0, 1, DT, P.digest()))
        step = ctrl_t.recv()
        ctrl_t.send(Cmd(step.seq + 1, 0.0, RelayStatus.CLOSED))
        return ctrl_t.recv()

    th, box = _thread(bad_controller)
    with pytest.raises(ProtocolError, match="does not answer"):
        run_plant_endpoint(P, (0.5, 0.0), DT, 0.1, plant_t)
    th.join(1.0)
    assert box["result"].kind.value == "BYE"
    plant_t.close()
    ctrl_t.close()


def test_proxy_forwards_bytes_verbatim():
    plant_t, proxy_plant = transport_pair(timeout=1.0)
    proxy_ctrl, ctrl_t = transport_pair(timeout=1.0)
    proxy = SpoofProxy([SpoofRule(5.0, 6.0, relay_override=RelayStatus.OPEN)])
    th, box = _thread(proxy.run, proxy_plant, proxy_ctrl)
    # non-canonical spellings must survive untouched outside the rule window
    lines = [(b"HELLO 0 1 0.001 abc\n", b"HELLO 0 1 0.001 abc\n"),
             (b"STEP 1 1e-05 0.10 -0.0\n", b"CMD 1 +0.2000 CLOSED\n"),
             (b"STEP 2 5.5 1.0 2.0\n", b"CMD 2 0.0 CLOSED\n")]
    received = []
    for up, down in lines:
        plant_t.send_line(up)
        assert ctrl_t.recv_line() == up
        ctrl_t.send_line(down)
        received.append(plant_t.recv_line())
    plant_t.send_line(b"BYE 3 done\n")
    assert ctrl_t.recv_line() == b"BYE 3 done\n"
    th.join(1.0)
    assert received[:2] == [lines[0][1], lines[1][1]]
    assert decode(received[2]) == Cmd(2, 0.0, RelayStatus.OPEN)
    assert box["result"] == [{"seq": 2, "t": 5.5, "field": "relay", "before": "closed", "after": "open"}]
    for t in (plant_t, proxy_plant, proxy_ctrl, ctrl_t):
        t.close()


def test_proxy_clamps_and_logs(tmp_path):
    path = tmp_path / "tamper.jsonl"
    res = run_loop(P, (0.46, 0.0), DT, 0.01, zero_policy, CLOSED,
                   rules=[SpoofRule(0.0, 0.005, d_override=0.5)], dbound=B02, tamper_log_path=path)
    log = res.tamper_log
    assert [e["seq"] for e in log] == [1, 2, 3, 4, 5, 6]
    assert all(e["requested"] == 0.5 and e["clamped"] and e["after"] == 0.2 for e in log)
    assert np.all(res.trajectory.d[:6] == 0.2) and np.all(res.trajectory.d[6:] == 0.0)
    on_disk = [json.loads(x) for x in path.read_text().splitlines()]
    assert on_disk == log


def test_window_inclusive_and_relay_flips_once():
    t_s = 0.05
    res = run_loop(P, (0.46, 0.0), DT, 0.1, zero_policy, CLOSED,
                   rules=[SpoofRule(t_s, relay_override="open")])
    tr = res.trajectory
    flags = np.array([r is RelayStatus.OPEN for r in tr.relay])
    k = int(np.argmax(flags))
    assert tr.t[k] == pytest.approx(t_s) and flags[k:].all() and not flags[:k].any()
    assert len(res.tamper_log) == len(tr) - k


def test_overlapping_rules_warn_and_first_wins(caplog):
    with caplog.at_level(logging.WARNING):
        proxy = SpoofProxy([SpoofRule(0.0, 1.0, d_override=0.1), SpoofRule(0.5, 2.0, d_override=-0.1)], B02)
    assert "overlap" in caplog.text
    new = proxy.rewrite(Cmd(1, 0.0, RelayStatus.CLOSED), Step(1, 0.7, 0.0, 0.0))
    assert new.d == 0.1


def test_callable_override_sees_state():
    proxy = SpoofProxy([SpoofRule(0.0, d_override=lambda t, x: x.omega)], B02)
    assert proxy.rewrite(Cmd(3, 0.0, RelayStatus.OPEN), Step(3, 0.1, 0.0, -0.05)).d == -0.05
    assert proxy.tamper_log[0]["before"] == 0.0 and "clamped" not in proxy.tamper_log[0]


def test_rule_validation():
    with pytest.raises(ValueError):
        SpoofRule(2.0, 1.0)
    with pytest.raises(ValueError):
        SpoofProxy([SpoofRule(0.0, d_override=0.1)])
    assert encode(SpoofProxy().rewrite(Cmd(1, 0.3, RelayStatus.OPEN), Step(1, 0.0, 0, 0))) == b"CMD 1 0.3 OPEN\n"


def test_controller_replaying_optimal_attack_matches_in_process():
    from swingreach.attack import AttackMode, AttackPolicy, run_optimal_attack
    from swingreach.grid import GridSpec
    from swingreach.plant import SafeBounds
    from swingreach.reachability import invariant_set

    V = invariant_set(SafeBounds.nominal(P), P, RelayStatus.OPEN, B02, 1.0, GridSpec(n_delta=61, n_omega=61)).value_field
    ref = run_optimal_attack((1.2, 6.0), V, P, RelayStatus.OPEN, B02, 1.0)
    wire = run_loop(P, (1.2, 6.0), DT, 1.0, AttackPolicy(AttackMode.KEEP_OUT, B02, V, P),
                    constant_relay(RelayStatus.OPEN)).trajectory
    assert np.max(np.abs(wire.delta - ref.delta)) <= 1e-9
    assert np.max(np.abs(wire.omega - ref.omega)) <= 1e-9
    assert np.array_equal(wire.d, ref.d)
