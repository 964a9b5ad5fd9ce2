"""Invariant, viability, reach and stability-region sets for the SMIB plant."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import (
    Contour,
    GridSpec,
    ScalarField,
    extract_zero_contour,
    interpolate,
    pointwise_min,
    pointwise_neg,
    signed_distance_ellipse,
    signed_distance_rect,
    write_field_csv,
)
from .hjsolver import (
    AffineDynamics,
    DisturbanceBound,
    Quantifier,
    SmibDynamics,
    SolveConfig,
    SolveResult,
    solve,
)
from .plant import RelayStatus, SafeBounds, SmibParams, equilibria

DEFAULT_BALL_RADII = (0.1, 0.5)
# Target values are clipped to +-(saturation * r). Only the sign of the target
# matters, and a symmetric band keeps interpolation smear from biasing the
# zero crossing where the reach value jumps across the separatrix.
DEFAULT_SATURATION = 0.5
# Safe-set targets are floored at -DEFAULT_FLOOR for the same reason: states that
# leave S and pole-slip would otherwise carry values of several units, and the
# interpolated minimum erodes that jump into the true invariant set.
DEFAULT_FLOOR = 1.0
NO_DISTURBANCE = DisturbanceBound(0.0, 0.0)


class SetKind(enum.Enum):
    INVARIANT = "invariant"
    VIABILITY = "viability"
    REACH = "reach"
    STABILITY_REGION = "stability_region"


@dataclass
class SetResult:
    value_field: ScalarField
    kind: SetKind
    horizon: float
    relay: Optional[RelayStatus]
    dbound: DisturbanceBound
    converged_at: Optional[float] = None
    snapshots: dict = field(default_factory=dict)
    solve: Optional[SolveResult] = None
    _boundary: Optional[Contour] = None

    @property
    def boundary(self) -> Contour:
        if self._boundary is None:
            self._boundary = extract_zero_contour(self.value_field)
        return self._boundary

    @property
    def spec(self) -> GridSpec:
        return self.value_field.spec

    def contains(self, point) -> bool:
        """Membership by interpolated value ``>= 0``."""
        return interpolate(self.value_field, point) >= 0.0

    def value_at(self, point) -> float:
        return interpolate(self.value_field, point)

    def member_count(self) -> int:
        return int(np.count_nonzero(self.value_field.values >= 0.0))

    def metadata(self) -> dict:
        return {
            "kind": self.kind.value,
            "horizon": self.horizon,
            "relay": self.relay.value if self.relay else None,
            "dbound": self.dbound.as_dict(),
            "converged_at": self.converged_at,
            "region_stable_at": self.solve.region_stable_at if self.solve else None,
            "members": self.member_count(),
            "grid": self.spec.as_dict(),
        }

    def save(self, directory, stem: str) -> list:
        """Write ``stem.csv`` (value field), ``stem.contour.json`` and ``stem.meta.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.csv", out / f"{stem}.contour.json", out / f"{stem}.meta.json"]
        write_field_csv(self.value_field, paths[0])
        paths[1].write_text(self.boundary.to_json())
        paths[2].write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))
        for t, snap in sorted(self.snapshots.items()):
            p = out / f"{stem}_t{t:g}.csv"
            write_field_csv(snap, p)
            paths.append(p)
        return paths


def safe_set_field(safe: SafeBounds, spec: GridSpec,
                   floor: Optional[float] = DEFAULT_FLOOR) -> ScalarField:
    """Signed distance to the safe rectangle, positive inside, optionally floored at ``-floor``."""
    f = signed_distance_rect(spec, *safe.rect)
    if floor is None:
        return f
    if not floor > 0:
        raise ValueError("floor must be positive")
    return ScalarField(spec, np.maximum(f.values, -floor))


def _config(horizon: float, config: Optional[SolveConfig]) -> SolveConfig:
    return replace(config, horizon=horizon) if config else SolveConfig(horizon=horizon)


def _quantified_set(kind, quantifier, safe, params, relay, dbound, horizon, spec, config):
    spec = spec or GridSpec()
    l = safe_set_field(safe, spec)
    res = solve(l, SmibDynamics(params, relay), dbound, quantifier, _config(horizon, config))
    return SetResult(res.final, kind, horizon, relay, dbound, res.converged_at, res.snapshots, res)


def invariant_set(safe: SafeBounds, params: SmibParams, relay: RelayStatus,
                  dbound: DisturbanceBound, horizon: float, spec: GridSpec | None = None,
                  config: SolveConfig | None = None) -> SetResult:
    """States that stay in the safe set for every admissible disturbance."""
    return _quantified_set(SetKind.INVARIANT, Quantifier.INF, safe, params, relay, dbound,
                           horizon, spec, config)


def viability_set(safe: SafeBounds, params: SmibParams, relay: RelayStatus,
                  dbound: DisturbanceBound, horizon: float, spec: GridSpec | None = None,
                  config: SolveConfig | None = None) -> SetResult:
    """States that some admissible disturbance keeps in the safe set."""
    return _quantified_set(SetKind.VIABILITY, Quantifier.SUP, safe, params, relay, dbound,
                           horizon, spec, config)


def reach_field(target: ScalarField, dynamics: AffineDynamics, dbound: DisturbanceBound,
                config: SolveConfig) -> tuple[ScalarField, SolveResult]:
    """Complement of the invariant set of the complement: negate, solve with INF, negate."""
    res = solve(pointwise_neg(target), dynamics, dbound, Quantifier.INF, config)
    return pointwise_neg(res.final), res


def reach_set(target: ScalarField, params: SmibParams, relay: RelayStatus,
              dbound: DisturbanceBound, horizon: float,
              config: SolveConfig | None = None, kind: SetKind = SetKind.REACH) -> SetResult:
    """States from which some disturbance drives the state into ``target`` within the horizon."""
    value, res = reach_field(target, SmibDynamics(params, relay), dbound, _config(horizon, config))
    snaps = {t: pointwise_neg(v) for t, v in res.snapshots.items()}
    return SetResult(value, kind, horizon, relay, dbound, res.converged_at, snaps, res)


def stability_target(params: SmibParams, relay: RelayStatus, spec: GridSpec,
                     ball_radii=DEFAULT_BALL_RADII,
                     saturation: Optional[float] = DEFAULT_SATURATION) -> ScalarField:
    """Ellipse function ``r (1 - rho)`` around the stable equilibrium, clipped to ``+-saturation * r``.

    ``saturation=None`` returns the unclipped function. Clipping never changes the sign.
    """
    stable, _ = equilibria(params, relay)
    f = signed_distance_ellipse(spec, stable, ball_radii)
    if saturation is None:
        return f
    if not saturation > 0:
        raise ValueError("saturation must be positive")
    cap = saturation * math.sqrt(ball_radii[0] * ball_radii[1])
    return ScalarField(spec, np.clip(f.values, -cap, cap))


def stability_region(params: SmibParams, relay: RelayStatus, horizon: float,
                     ball_radii=DEFAULT_BALL_RADII, spec: GridSpec | None = None,
                     config: SolveConfig | None = None,
                     saturation: Optional[float] = DEFAULT_SATURATION) -> SetResult:
    """Undisturbed reach set of a small ellipse around the stable equilibrium."""
    target = stability_target(params, relay, spec or GridSpec(), ball_radii, saturation)
    return reach_set(target, params, relay, NO_DISTURBANCE, horizon, config,
                     kind=SetKind.STABILITY_REGION)


def is_empty(result) -> bool:
    """True iff no node has value ``>= 0``; accepts a SetResult or a ScalarField."""
    f = result.value_field if isinstance(result, SetResult) else result
    return not bool(np.any(f.values >= 0.0))


def converged(snapshots: dict, eps: float = 1e-3) -> Optional[float]:
    """First snapshot time at which the max-node change per second since the previous one is below ``eps``."""
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    times = sorted(snapshots)
    for t0, t1 in zip(times, times[1:]):
        a, b = snapshots[t0], snapshots[t1]
        rate = float(np.max(np.abs(b.values - a.values))) / (t1 - t0)
        if rate < eps:
            return t1
    return None


def resilient_intersection(a: SetResult, b: SetResult) -> ScalarField:
    """Node-wise minimum of two value fields, e.g. the open- and closed-relay invariant sets."""
    return pointwise_min(a.value_field, b.value_field)
