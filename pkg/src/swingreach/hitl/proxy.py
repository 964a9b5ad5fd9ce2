"""Man-in-the-middle spoofer between controller and plant."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

from ..hjsolver import DisturbanceBound
from ..plant import RelayStatus, State
from .protocol import Bye, Cmd, Step, decode, encode
from .transport import LineTransport

log = logging.getLogger(__name__)

DOverride = Union[None, float, Callable[[float, State], float]]


@dataclass
class SpoofRule:
    """Rewrite Cmd frames whose Step time lies in ``[t0, t1]``."""

    t0: float
    t1: float = math.inf
    d_override: DOverride = None
    relay_override: Optional[RelayStatus] = None

    def __post_init__(self):
        if not self.t0 <= self.t1:
            raise ValueError(f"rule window must satisfy t0 <= t1, got [{self.t0}, {self.t1}]")
        if self.relay_override is not None:
            self.relay_override = RelayStatus.parse(self.relay_override)

    def active(self, t: float) -> bool:
        return self.t0 <= t <= self.t1

    def overlaps(self, other: "SpoofRule") -> bool:
        return self.t0 <= other.t1 and other.t0 <= self.t1

    def requested_d(self, t: float, state: State) -> Optional[float]:
        if self.d_override is None:
            return None
        if callable(self.d_override):
            return float(self.d_override(t, state))
        return float(self.d_override)


class SpoofProxy:
    """Forwards frames verbatim except Cmd frames covered by a rule.

    The first listed rule wins where windows overlap. Overridden ``d`` is
    clamped to ``dbound``. Each changed field is recorded in ``tamper_log`` as
    ``{seq, t, field, before, after}``; clamps add ``requested`` and ``clamped``.
    """

    def __init__(self, rules=(), dbound: DisturbanceBound | None = None, log_path=None):
        self.rules = list(rules)
        self.dbound = dbound
        self.log_path = log_path
        self.tamper_log: list = []
        for i, a in enumerate(self.rules):
            for b in self.rules[i + 1:]:
                if a.overlaps(b):
                    log.warning("spoof rules [%g, %g] and [%g, %g] overlap; the first listed wins",
                                a.t0, a.t1, b.t0, b.t1)
        if any(r.d_override is not None for r in self.rules) and dbound is None:
            raise ValueError("rules overriding d need a disturbance bound for clamping")

    def _rule_at(self, t: float) -> Optional[SpoofRule]:
        for rule in self.rules:
            if rule.active(t):
                return rule
        return None

    def _record(self, **entry) -> None:
        self.tamper_log.append(entry)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def rewrite(self, cmd: Cmd, step: Step) -> Cmd:
        rule = self._rule_at(step.t)
        if rule is None:
            return cmd
        d, relay = cmd.d, cmd.relay
        requested = rule.requested_d(step.t, State(step.delta, step.omega))
        if requested is not None:
            d = self.dbound.clamp(requested)
            if d != cmd.d or d != requested:
                extra = {"requested": requested, "clamped": True} if d != requested else {}
                self._record(seq=cmd.seq, t=step.t, field="d", before=cmd.d, after=d, **extra)
        if rule.relay_override is not None and rule.relay_override is not cmd.relay:
            relay = rule.relay_override
            self._record(seq=cmd.seq, t=step.t, field="relay", before=cmd.relay.value,
                         after=relay.value)
        return Cmd(cmd.seq, d, relay)

    def run(self, plant_side: LineTransport, controller_side: LineTransport) -> list:
        """Relay the conversation until either side says Bye; returns the tamper log."""
        last_step = None
        while True:
            line = plant_side.recv_line()
            frame = decode(line)
            controller_side.send_line(line)
            if isinstance(frame, Bye):
                break
            if isinstance(frame, Step):
                last_step = frame
            reply_line = controller_side.recv_line()
            reply = decode(reply_line)
            if isinstance(reply, Cmd) and last_step is not None and last_step.seq == reply.seq:
                new = self.rewrite(reply, last_step)
                if new != reply:
                    reply_line = encode(new)
            plant_side.send_line(reply_line)
            if isinstance(reply, Bye):
                break
        return self.tamper_log
