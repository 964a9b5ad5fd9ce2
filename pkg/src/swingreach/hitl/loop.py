"""Run plant, controller and optional proxy as three threads over local sockets."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..hjsolver import DisturbanceBound
from ..plant import RelayStatus, SmibParams, State, Trajectory
from .endpoints import run_controller_endpoint, run_plant_endpoint
from .proxy import SpoofProxy, SpoofRule
from .transport import DEFAULT_TIMEOUT, transport_pair


@dataclass
class LoopResult:
    trajectory: Trajectory
    commands: list
    tamper_log: list = field(default_factory=list)


class _Worker(threading.Thread):
    def __init__(self, fn, *args):
        super().__init__(daemon=True)
        self.fn, self.args = fn, args
        self.result = None
        self.error: Optional[BaseException] = None

    def run(self):
        try:
            self.result = self.fn(*self.args)
        except BaseException as exc:  # re-raised in the caller
            self.error = exc


def run_loop(params: SmibParams, x0, dt: float, T: float,
             policy: Callable[[float, State], float],
             relay_schedule: Callable[[float], RelayStatus],
             rules: Optional[Sequence[SpoofRule]] = None,
             dbound: DisturbanceBound | None = None,
             timeout: float = DEFAULT_TIMEOUT, tamper_log_path=None) -> LoopResult:
    """Plant <-> [proxy] <-> controller. ``rules=None`` connects them directly."""
    transports = []
    if rules is None:
        plant_t, ctrl_t = transport_pair(timeout)
        transports += [plant_t, ctrl_t]
        workers = [_Worker(run_controller_endpoint, policy, relay_schedule, ctrl_t, params, dt)]
        proxy = None
    else:
        plant_t, proxy_plant = transport_pair(timeout)
        proxy_ctrl, ctrl_t = transport_pair(timeout)
        transports += [plant_t, proxy_plant, proxy_ctrl, ctrl_t]
        proxy = SpoofProxy(rules, dbound, tamper_log_path)
        workers = [
            _Worker(run_controller_endpoint, policy, relay_schedule, ctrl_t, params, dt),
            _Worker(proxy.run, proxy_plant, proxy_ctrl),
        ]
    for w in workers:
        w.start()
    try:
        traj = run_plant_endpoint(params, x0, dt, T, plant_t)
    finally:
        plant_t.close()
        for w in workers:
            w.join(timeout + 1.0)
        for t in transports:
            t.close()
    for w in workers:
        if w.error is not None:
            raise w.error
    return LoopResult(traj, workers[0].result or [], proxy.tamper_log if proxy else [])
