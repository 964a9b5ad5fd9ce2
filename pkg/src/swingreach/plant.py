"""Single-machine infinite-bus swing dynamics with a relay-switched local load."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np


class PlantError(ValueError):
    pass


class NoEquilibriumError(PlantError):
    pass


class RelayStatus(enum.Enum):
    CLOSED = "closed"
    OPEN = "open"

    @property
    def load_connected(self) -> bool:
        return self is RelayStatus.CLOSED

    @classmethod
    def parse(cls, value) -> "RelayStatus":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise PlantError(f"unknown relay status {value!r}") from None


@dataclass(frozen=True)
class SmibParams:
    """Swing-equation constants: ``M w' = P_m - D w - P_E sin(delta) - P_L + d``."""

    M: float = 0.026
    D: float = 0.12
    P_m: float = 1.0
    P_E: float = 1.35
    P_L: float = 0.4

    def __post_init__(self):
        if not self.M > 0:
            raise PlantError("inertia M must be positive")
        if not self.D >= 0:
            raise PlantError("damping D must be non-negative")
        if not self.P_E > 0:
            raise PlantError("P_E must be positive")
        if not self.P_L >= 0:
            raise PlantError("P_L must be non-negative")

    def load(self, relay: RelayStatus) -> float:
        return self.P_L if relay.load_connected else 0.0

    def net_power(self, relay: RelayStatus) -> float:
        return self.P_m - self.load(relay)

    def digest(self) -> str:
        text = ",".join(repr(float(v)) for v in (self.M, self.D, self.P_m, self.P_E, self.P_L))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        return {"M": self.M, "D": self.D, "P_m": self.P_m, "P_E": self.P_E, "P_L": self.P_L}


class State(NamedTuple):
    delta: float
    omega: float


@dataclass(frozen=True)
class SafeBounds:
    """Safe rectangle ``|delta - delta_n| <= delta_half_width``, ``|omega - omega_n| <= omega_half_width``."""

    delta_n: float
    omega_n: float = 0.0
    delta_half_width: float = math.pi / 2
    omega_half_width: float = 6.0

    def __post_init__(self):
        if not (self.delta_half_width > 0 and self.omega_half_width > 0):
            raise PlantError("safe-set half widths must be positive")

    @classmethod
    def nominal(cls, params: SmibParams | None = None) -> "SafeBounds":
        """Centre on the closed-relay stable equilibrium with zero frequency deviation."""
        stable, _ = equilibria(params or SmibParams(), RelayStatus.CLOSED)
        return cls(delta_n=stable.delta, omega_n=0.0)

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (
            self.delta_n - self.delta_half_width,
            self.delta_n + self.delta_half_width,
            self.omega_n - self.omega_half_width,
            self.omega_n + self.omega_half_width,
        )

    def as_dict(self) -> dict:
        return {
            "delta_n": self.delta_n,
            "omega_n": self.omega_n,
            "delta_half_width": self.delta_half_width,
            "omega_half_width": self.omega_half_width,
        }


def in_safe_set(state, bounds: SafeBounds) -> bool:
    delta, omega = state
    return (
        abs(delta - bounds.delta_n) <= bounds.delta_half_width
        and abs(omega - bounds.omega_n) <= bounds.omega_half_width
    )


def safe_mask(delta, omega, bounds: SafeBounds) -> np.ndarray:
    return (np.abs(np.asarray(delta) - bounds.delta_n) <= bounds.delta_half_width) & (
        np.abs(np.asarray(omega) - bounds.omega_n) <= bounds.omega_half_width
    )


def rhs(state, params: SmibParams, relay: RelayStatus, d: float = 0.0):
    """Time derivative ``(d delta/dt, d omega/dt)``; works on scalars or arrays."""
    delta, omega = state
    accel = (params.P_m - params.D * omega - params.P_E * np.sin(delta) - params.load(relay) + d) / params.M
    return omega, accel


def jacobian(state, params: SmibParams) -> np.ndarray:
    delta, _ = state
    return np.array(
        [[0.0, 1.0], [-params.P_E * math.cos(delta) / params.M, -params.D / params.M]]
    )


def equilibria(params: SmibParams, relay: RelayStatus) -> tuple[State, State]:
    """Stable and unstable equilibria ``(asin(P/P_E), 0)`` and ``(pi - asin(P/P_E), 0)``."""
    p_net = params.net_power(relay)
    if abs(p_net) > params.P_E:
        raise NoEquilibriumError(
            f"|P_m - load| = {abs(p_net):.4g} exceeds P_E = {params.P_E:.4g}; no equilibrium"
        )
    a = math.asin(p_net / params.P_E)
    first, second = State(a, 0.0), State(math.pi - a, 0.0)
    if params.D > 0:
        # classify by Jacobian spectrum rather than by position
        if np.max(np.linalg.eigvals(jacobian(first, params)).real) >= 0:
            first, second = second, first
    return first, second


def rk4_step(state, params: SmibParams, relay: RelayStatus, d: float, dt: float):
    """One classical Runge-Kutta step with ``d`` and ``relay`` held over the step."""
    x, w = state
    k1x, k1w = rhs((x, w), params, relay, d)
    k2x, k2w = rhs((x + 0.5 * dt * k1x, w + 0.5 * dt * k1w), params, relay, d)
    k3x, k3w = rhs((x + 0.5 * dt * k2x, w + 0.5 * dt * k2w), params, relay, d)
    k4x, k4w = rhs((x + dt * k3x, w + dt * k3w), params, relay, d)
    return (
        x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
    )


@dataclass
class Trajectory:
    t: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    d: np.ndarray
    relay: list
    divergent: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def states(self) -> np.ndarray:
        return np.column_stack([self.delta, self.omega])

    @property
    def final(self) -> State:
        return State(float(self.delta[-1]), float(self.omega[-1]))

    def safe_flags(self, bounds: SafeBounds) -> np.ndarray:
        return safe_mask(self.delta, self.omega, bounds)

    def first_exit_time(self, bounds: SafeBounds):
        """Time of the first sample outside the safe set, or ``None``."""
        out = ~self.safe_flags(bounds)
        if not out.any():
            return None
        return float(self.t[np.argmax(out)])

    def last_safe_time(self, bounds: SafeBounds):
        inside = self.safe_flags(bounds)
        if not inside.any():
            return None
        return float(self.t[len(inside) - 1 - np.argmax(inside[::-1])])

    def to_csv(self, path) -> None:
        lines = ["t,delta,omega,d,relay"]
        for t, x, w, d, r in zip(self.t, self.delta, self.omega, self.d, self.relay):
            lines.append(f"{float(t)!r},{float(x)!r},{float(w)!r},{float(d)!r},{int(r.load_connected)}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        rows = Path(path).read_text().splitlines()[1:]
        cols = list(zip(*(r.split(",") for r in rows if r.strip())))
        relay = [RelayStatus.CLOSED if c == "1" else RelayStatus.OPEN for c in cols[4]]
        return cls(*(np.array(c, dtype=float) for c in cols[:4]), relay=relay)


Command = Callable[[float, State], "tuple[float, RelayStatus]"]


def n_samples(T: float, dt: float) -> int:
    """``floor(T/dt) + 1`` with a relative guard against ``T/dt`` rounding just below an integer."""
    return int(math.floor(T / dt * (1.0 + 1e-12))) + 1


def integrate(x0, params: SmibParams, command: Command, T: float, dt: float) -> Trajectory:
    """Fixed-step RK4 where ``command(t, state) -> (d, relay)`` is sampled at each step start."""
    if not dt > 0:
        raise PlantError("dt must be positive")
    if not T >= dt:
        raise PlantError("horizon T must be at least dt")
    n = n_samples(T, dt)
    t = np.arange(n) * dt
    xs = np.empty(n)
    ws = np.empty(n)
    ds = np.empty(n)
    relays = []
    x, w = float(x0[0]), float(x0[1])
    divergent = False
    for k in range(n):
        d, relay = command(float(t[k]), State(x, w))
        xs[k], ws[k], ds[k] = x, w, d
        relays.append(relay)
        if k + 1 < n:
            x, w = rk4_step((x, w), params, relay, d, dt)
            if not (math.isfinite(x) and math.isfinite(w)):
                divergent = True
                n = k + 1
                break
    return Trajectory(t[:n], xs[:n], ws[:n], ds[:n], relays[:n], divergent=divergent)


def simulate(
    x0,
    params: SmibParams,
    d_policy: Callable[[float, State], float],
    relay_schedule: Callable[[float], RelayStatus],
    T: float,
    dt: float = 1e-3,
) -> Trajectory:
    def command(t, state):
        return float(d_policy(t, state)), relay_schedule(t)

    return integrate(x0, params, command, T, dt)


def zero_policy(t, state) -> float:
    return 0.0


def constant_relay(status: RelayStatus) -> Callable[[float], RelayStatus]:
    return lambda t: status


def relay_switch_at(t_switch: float, before: RelayStatus, after: RelayStatus):
    return lambda t: after if t >= t_switch else before
