"""Bang-bang attack synthesis, coordinated PLC + relay attacks and emptiness sweeps."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import GridSpec, ScalarField, gradient_central, interpolate
from .hjsolver import (
    DisturbanceBound,
    Quantifier,
    SmibDynamics,
    SolveConfig,
    optimal_disturbance,
    solve,
)
from .plant import (
    RelayStatus,
    SafeBounds,
    SmibParams,
    State,
    Trajectory,
    constant_relay,
    in_safe_set,
    integrate,
    simulate,
)
from .reachability import invariant_set, is_empty

log = logging.getLogger(__name__)


class AttackMode(enum.Enum):
    KEEP_OUT = "keep_out"  # drive the state out of the set encoded by the value field
    KEEP_IN = "keep_in"
    CONSTANT = "constant"
    ZERO = "zero"


def _switching_coefficient(grad_omega: ScalarField, state, params: SmibParams, clamp: bool) -> float:
    # dV/dx . f_d with f_d = (0, 1/M)
    return interpolate(grad_omega, state, clamp=clamp) / params.M


def d_star_keep_out(state, V1: ScalarField, params: SmibParams, dbound: DisturbanceBound,
                    grad_omega: ScalarField | None = None) -> float:
    """``d_h`` when the interpolated ``dV1/dx . f_d <= 0``, otherwise ``d_l``."""
    g = grad_omega if grad_omega is not None else gradient_central(V1)[1]
    return optimal_disturbance(_switching_coefficient(g, state, params, False), dbound, Quantifier.INF)


def d_star_keep_in(state, V2: ScalarField, params: SmibParams, dbound: DisturbanceBound,
                   grad_omega: ScalarField | None = None) -> float:
    """``d_l`` when the interpolated ``dV2/dx . f_d <= 0``, otherwise ``d_h``."""
    g = grad_omega if grad_omega is not None else gradient_central(V2)[1]
    return optimal_disturbance(_switching_coefficient(g, state, params, False), dbound, Quantifier.SUP)


@dataclass
class AttackPolicy:
    """Callable ``(t, state) -> d``.

    The gradient of ``value_field`` is computed once and interpolated along the
    trajectory. States that leave the grid are clamped to its boundary when
    ``clamp`` is set; the standalone ``d_star_*`` functions raise instead.
    """

    mode: AttackMode
    dbound: DisturbanceBound
    value_field: Optional[ScalarField] = None
    params: SmibParams = field(default_factory=SmibParams)
    constant: float = 0.0
    clamp: bool = True

    def __post_init__(self):
        self._grad = None
        if self.mode in (AttackMode.KEEP_OUT, AttackMode.KEEP_IN):
            if self.value_field is None:
                raise ValueError(f"{self.mode.value} policy needs a value field")
            self._grad = gradient_central(self.value_field)[1]

    def __call__(self, t: float, state) -> float:
        if self.mode is AttackMode.ZERO:
            return 0.0
        if self.mode is AttackMode.CONSTANT:
            return self.dbound.clamp(self.constant)
        coeff = _switching_coefficient(self._grad, state, self.params, self.clamp)
        q = Quantifier.INF if self.mode is AttackMode.KEEP_OUT else Quantifier.SUP
        return optimal_disturbance(coeff, self.dbound, q)


def run_optimal_attack(x0, V1: ScalarField, params: SmibParams, relay: RelayStatus,
                       dbound: DisturbanceBound, T: float, dt: float = 1e-3) -> Trajectory:
    """Simulate under the keep-out policy driven by ``V1``, re-evaluated every step."""
    policy = AttackPolicy(AttackMode.KEEP_OUT, dbound, V1, params)
    traj = simulate(x0, params, policy, constant_relay(relay), T, dt)
    traj.meta.update(relay=relay.value, dbound=dbound.as_dict())
    return traj


# -- coordinated attack --------------------------------------------------------


# Switch only once the state is clearly outside the region; a switch exactly on
# the numerical boundary leaves the outcome to sub-cell interpolation error.
DEFAULT_SWITCH_MARGIN = 0.02


class RegionExit:
    """Fires once the interpolated value of ``field`` drops below ``-margin``."""

    def __init__(self, field: ScalarField, margin: float = 0.0):
        if margin < 0:
            raise ValueError("margin must be non-negative")
        self.field = field
        self.margin = float(margin)

    def __call__(self, t, state) -> bool:
        return interpolate(self.field, state, clamp=True) < -self.margin

    def describe(self):
        return f"region-exit(margin={self.margin:g})"


class AtTime:
    def __init__(self, t_switch: float):
        self.t_switch = float(t_switch)

    def __call__(self, t, state) -> bool:
        return t >= self.t_switch - 1e-12

    def describe(self):
        return f"time>={self.t_switch:g}"


class Never:
    def __call__(self, t, state) -> bool:
        return False

    def describe(self):
        return "never"


@dataclass
class CoordinatedPlan:
    """Phase 1: PLC injection with the relay closed. Phase 2 after the single switch: ``d = 0``, ``phase2_relay``."""

    phase1: Callable[[float, State], float]
    switch: Callable[[float, State], bool]
    phase2_relay: RelayStatus = RelayStatus.OPEN
    phase1_relay: RelayStatus = RelayStatus.CLOSED

    def __post_init__(self):
        if self.phase1_relay is not RelayStatus.CLOSED:
            raise ValueError("phase 1 runs with the relay closed")


def phase1_field(region: ScalarField, params: SmibParams, dbound: DisturbanceBound,
                 horizon: float = 3.0, margin: float = DEFAULT_SWITCH_MARGIN,
                 config: SolveConfig | None = None) -> ScalarField:
    """Keep-out game field for phase 1 (relay closed).

    Negative where some admissible injection drives the state to
    ``region < -margin`` within ``horizon``; its gradient drives d1*.
    """
    cfg = replace(config, horizon=horizon) if config else SolveConfig(horizon=horizon)
    shifted = ScalarField(region.spec, region.values + margin)
    dyn = SmibDynamics(params, RelayStatus.CLOSED)
    return solve(shifted, dyn, dbound, Quantifier.INF, cfg).final


def region_plan(region: ScalarField, params: SmibParams, dbound: DisturbanceBound,
                horizon: float = 3.0, margin: float = DEFAULT_SWITCH_MARGIN,
                phase2_relay: RelayStatus = RelayStatus.OPEN,
                config: SolveConfig | None = None, game: ScalarField | None = None) -> CoordinatedPlan:
    """Region-based plan: d1* on the phase-1 game field, switch on leaving ``region``."""
    if game is None:
        game = phase1_field(region, params, dbound, horizon, margin, config)
    policy = AttackPolicy(AttackMode.KEEP_OUT, dbound, game, params)
    return CoordinatedPlan(policy, RegionExit(region, margin), phase2_relay)


def minimal_exit_bound(x0, region: ScalarField, params: SmibParams, bounds: Sequence[float],
                       horizon: float = 3.0, margin: float = DEFAULT_SWITCH_MARGIN,
                       config: SolveConfig | None = None):
    """Smallest symmetric bound whose phase-1 game value at ``x0`` is negative.

    Returns ``(bound, game_field)`` or ``None`` if no listed bound suffices.
    """
    for b in sorted(float(b) for b in bounds):
        game = phase1_field(region, params, DisturbanceBound.symmetric(b), horizon, margin, config)
        if interpolate(game, x0) < 0.0:
            return b, game
    return None


def run_coordinated(plan: CoordinatedPlan, x0, params: SmibParams, T: float,
                    dt: float = 1e-3) -> Trajectory:
    """Run both phases; ``meta['switch_time']`` is ``None`` if the predicate never fired."""
    switch_time = None

    def command(t, state):
        nonlocal switch_time
        if switch_time is None and plan.switch(t, state):
            switch_time = t
        if switch_time is None:
            return float(plan.phase1(t, state)), plan.phase1_relay
        return 0.0, plan.phase2_relay

    traj = integrate(x0, params, command, T, dt)
    traj.meta.update(
        switch_time=switch_time,
        switch_fired=switch_time is not None,
        switch=getattr(plan.switch, "describe", lambda: "custom")(),
        phase2_relay=plan.phase2_relay.value,
    )
    if switch_time is None:
        log.warning("coordinated plan: switch predicate never fired within %.3g s", T)
    return traj


# -- emptiness sweep -----------------------------------------------------------


@dataclass
class SweepEntry:
    bound: float
    empty: bool
    members: int
    max_value: float


@dataclass
class SweepResult:
    relay: RelayStatus
    entries: list

    @property
    def threshold(self) -> Optional[float]:
        for e in self.entries:
            if e.empty:
                return e.bound
        return None

    @property
    def monotone(self) -> bool:
        """Every bound above the first empty one is also empty."""
        seen = False
        for e in self.entries:
            seen = seen or e.empty
            if seen and not e.empty:
                return False
        return True

    def as_dict(self) -> dict:
        return {
            "relay": self.relay.value,
            "threshold": self.threshold,
            "monotone": self.monotone,
            "entries": [e.__dict__ for e in self.entries],
        }


def sweep_bounds(start: float = 0.1, stop: float = 0.7, step: float = 0.05) -> list:
    n = int(round((stop - start) / step))
    return [round(start + k * step, 10) for k in range(n + 1)]


def _sweep_one(args):
    bound, safe, params, relay, horizon, spec, config = args
    res = invariant_set(safe, params, relay, DisturbanceBound.symmetric(bound), horizon, spec, config)
    vals = res.value_field.values
    return SweepEntry(bound, is_empty(res), int(np.count_nonzero(vals >= 0)), float(vals.max()))


def emptiness_sweep(relay: RelayStatus, bounds: Sequence[float], horizon: float = 3.0,
                    safe: SafeBounds | None = None, params: SmibParams | None = None,
                    spec: GridSpec | None = None, config: SolveConfig | None = None,
                    executor=None) -> SweepResult:
    """Invariant-set emptiness for each symmetric bound ``|d| <= b``; ``threshold`` is the first empty one."""
    bounds = [float(b) for b in bounds]
    if any(b1 < b0 for b0, b1 in zip(bounds, bounds[1:])):
        raise ValueError("bounds must be ascending")
    params = params or SmibParams()
    safe = safe or SafeBounds.nominal(params)
    jobs = [(b, safe, params, relay, horizon, spec, config) for b in bounds]
    mapper = executor.map if executor is not None else map
    return SweepResult(relay, list(mapper(_sweep_one, jobs)))


def settle_time(traj: Trajectory, target, tol: float) -> Optional[float]:
    """First time after which the state stays within ``tol`` (Euclidean) of ``target``."""
    dist = np.hypot(traj.delta - target[0], traj.omega - target[1])
    far = np.flatnonzero(dist > tol)
    if len(far) == 0:
        return float(traj.t[0])
    if far[-1] == len(dist) - 1:
        return None
    return float(traj.t[far[-1] + 1])


def diverged(traj: Trajectory, safe: SafeBounds) -> bool:
    """Integration blew up or the final state lies outside the safe set."""
    return traj.divergent or not in_safe_set(traj.final, safe)
