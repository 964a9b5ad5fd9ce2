"""Plant and controller state machines for the lockstep link.

Sequence numbers: the plant's Hello is seq 0, its Steps are 1..N and its
closing Bye is N+1. The controller echoes Hello with seq 0 and answers each
Step with a Cmd carrying the same seq.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Optional

import numpy as np

from ..plant import RelayStatus, SmibParams, State, Trajectory, n_samples, rk4_step
from .protocol import PROTOCOL_VERSION, Bye, Cmd, Hello, ProtocolError, Step
from .transport import LineTransport, TransportClosed, TransportTimeout

log = logging.getLogger(__name__)


class HandshakeError(ProtocolError):
    pass


def _check_hello(frame, version: int, dt: Optional[float], digest: Optional[str]) -> Hello:
    if not isinstance(frame, Hello):
        raise HandshakeError(f"expected HELLO, got {frame.kind.value} {frame.seq}")
    if frame.seq != 0:
        raise HandshakeError(f"HELLO must carry seq 0, got {frame.seq}")
    if frame.version != version:
        raise HandshakeError(f"protocol version {frame.version} != {version}")
    if dt is not None and frame.dt != dt:
        raise HandshakeError(f"dt mismatch: peer {frame.dt!r}, local {dt!r}")
    if digest is not None and frame.digest != digest:
        raise HandshakeError(f"parameter digest mismatch: peer {frame.digest}, local {digest}")
    return frame


def _say_bye(transport: LineTransport, seq: int, reason: str) -> None:
    try:
        transport.send(Bye(seq, reason))
    except (TransportClosed, OSError):
        pass


def run_plant_endpoint(params: SmibParams, x0, dt: float, T: float,
                       transport: LineTransport) -> Trajectory:
    """Send a Step, block for the matching Cmd, advance one RK4 step, repeat.

    Samples and arithmetic match :func:`swingreach.plant.integrate`, so an
    honest controller reproduces the in-process trajectory bit for bit. A
    timeout or disconnect truncates the run and sets ``meta['aborted']``.
    """
    n = n_samples(T, dt)
    times = np.arange(n) * dt
    digest = params.digest()
    transport.send(Hello(0, PROTOCOL_VERSION, dt, digest))
    try:
        _check_hello(transport.recv(), PROTOCOL_VERSION, dt, digest)
    except HandshakeError as exc:
        _say_bye(transport, 1, f"handshake failed: {exc}")
        raise

    xs, ws, ds, relays = [], [], [], []
    x, w = float(x0[0]), float(x0[1])
    divergent = aborted = False
    reason = "done"
    seq = 0
    for k in range(n):
        seq = k + 1
        t = float(times[k])
        try:
            transport.send(Step(seq, t, x, w))
            reply = transport.recv()
        except TransportTimeout:
            aborted, reason = True, "timeout"
            break
        except TransportClosed:
            aborted, reason = True, "peer disconnected"
            break
        if isinstance(reply, Bye):
            aborted, reason = True, f"peer bye: {reply.reason}"
            break
        if not isinstance(reply, Cmd):
            _say_bye(transport, seq + 1, "protocol error")
            raise ProtocolError(f"expected CMD {seq}, got {reply.kind.value} {reply.seq}")
        if reply.seq != seq:
            _say_bye(transport, seq + 1, "protocol error")
            raise ProtocolError(f"CMD seq {reply.seq} does not answer STEP seq {seq}")
        xs.append(x)
        ws.append(w)
        ds.append(reply.d)
        relays.append(reply.relay)
        if k + 1 < n:
            x, w = rk4_step((x, w), params, reply.relay, reply.d, dt)
            if not (math.isfinite(x) and math.isfinite(w)):
                divergent, reason = True, "divergent"
                break
    else:
        seq = n
    if not aborted or reason.startswith("timeout"):
        _say_bye(transport, seq + 1, reason)
    m = len(xs)
    traj = Trajectory(times[:m].copy(), np.array(xs), np.array(ws), np.array(ds), relays,
                      divergent=divergent)
    traj.meta.update(aborted=aborted, bye_reason=reason, samples_expected=n)
    if aborted:
        log.warning("plant endpoint aborted after %d of %d samples: %s", m, n, reason)
    return traj


def run_controller_endpoint(policy: Callable[[float, State], float],
                            relay_schedule: Callable[[float], RelayStatus],
                            transport: LineTransport, params: SmibParams | None = None,
                            dt: float | None = None) -> list:
    """Answer every Step with ``Cmd(policy(t, state), relay_schedule(t))`` until Bye.

    ``params`` and ``dt``, when given, must match the plant's Hello. Returns the
    Cmd frames sent, in order.
    """
    digest = params.digest() if params is not None else None
    try:
        hello = _check_hello(transport.recv(), PROTOCOL_VERSION, dt, digest)
    except HandshakeError as exc:
        _say_bye(transport, 1, f"handshake failed: {exc}")
        raise
    transport.send(Hello(0, PROTOCOL_VERSION, hello.dt, hello.digest))
    sent = []
    last = 0
    while True:
        try:
            frame = transport.recv()
        except TransportClosed:
            log.warning("controller endpoint: plant disconnected after seq %d", last)
            break
        if isinstance(frame, Bye):
            log.debug("controller endpoint: bye %r", frame.reason)
            break
        if not isinstance(frame, Step):
            raise ProtocolError(f"expected STEP {last + 1}, got {frame.kind.value} {frame.seq}")
        if frame.seq != last + 1:
            raise ProtocolError(f"STEP seq {frame.seq} does not follow {last}")
        state = State(frame.delta, frame.omega)
        cmd = Cmd(frame.seq, float(policy(frame.t, state)), RelayStatus(relay_schedule(frame.t)))
        transport.send(cmd)
        sent.append(cmd)
        last = frame.seq
    return sent
