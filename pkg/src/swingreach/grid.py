"""Uniform grid over the (delta, omega) plane and scalar fields on it.

Field values are stored delta-major: ``values[i, j]`` is the node at
``delta = delta_min + i*h_delta`` and ``omega = omega_min + j*h_omega``.
Level-set convention throughout the package: a set is ``{x | V(x) >= 0}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CSV_HEADER = "delta_min,delta_max,omega_min,omega_max,n_delta,n_omega"


class GridError(ValueError):
    """Invalid grid, mismatched fields, or out-of-grid queries."""


@dataclass(frozen=True)
class GridSpec:
    delta_min: float = -math.pi
    delta_max: float = 2.0 * math.pi
    omega_min: float = -20.0
    omega_max: float = 20.0
    n_delta: int = 201
    n_omega: int = 201

    def __post_init__(self):
        if not (self.n_delta >= 3 and self.n_omega >= 3):
            raise GridError(f"need at least 3 nodes per axis, got {self.n_delta}x{self.n_omega}")
        if not self.delta_min < self.delta_max:
            raise GridError("delta_min must be < delta_max")
        if not self.omega_min < self.omega_max:
            raise GridError("omega_min must be < omega_max")
        for v in (self.delta_min, self.delta_max, self.omega_min, self.omega_max):
            if not math.isfinite(v):
                raise GridError("grid bounds must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_delta, self.n_omega)

    @property
    def h_delta(self) -> float:
        return (self.delta_max - self.delta_min) / (self.n_delta - 1)

    @property
    def h_omega(self) -> float:
        return (self.omega_max - self.omega_min) / (self.n_omega - 1)

    @property
    def h_max(self) -> float:
        return max(self.h_delta, self.h_omega)

    @property
    def deltas(self) -> np.ndarray:
        return np.linspace(self.delta_min, self.delta_max, self.n_delta)

    @property
    def omegas(self) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, self.n_omega)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays ``(delta, omega)``, each of shape ``self.shape``."""
        return np.meshgrid(self.deltas, self.omegas, indexing="ij")

    def contains(self, delta: float, omega: float) -> bool:
        return (self.delta_min <= delta <= self.delta_max) and (
            self.omega_min <= omega <= self.omega_max
        )

    def with_resolution(self, n: int) -> "GridSpec":
        return GridSpec(self.delta_min, self.delta_max, self.omega_min, self.omega_max, n, n)

    def as_dict(self) -> dict:
        return {
            "delta_min": self.delta_min,
            "delta_max": self.delta_max,
            "omega_min": self.omega_min,
            "omega_max": self.omega_max,
            "n_delta": self.n_delta,
            "n_omega": self.n_omega,
        }


@dataclass(frozen=True, eq=False)
class ScalarField:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.spec.shape:
            raise GridError(f"field shape {vals.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("field contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __neg__(self) -> "ScalarField":
        return pointwise_neg(self)

    def superlevel_mask(self, level: float = 0.0) -> np.ndarray:
        return self.values >= level

    def to_csv(self, path) -> None:
        write_field_csv(self, path)


@dataclass
class Contour:
    """Zero level set as a list of ``(k, 2)`` arrays of ``[delta, omega]`` vertices."""

    polylines: list = field(default_factory=list)

    def __len__(self):
        return len(self.polylines)

    @property
    def is_empty(self) -> bool:
        return not self.polylines

    def vertices(self) -> np.ndarray:
        if not self.polylines:
            return np.empty((0, 2))
        return np.vstack(self.polylines)

    def to_json(self) -> str:
        return json.dumps([[[float(a), float(b)] for a, b in line] for line in self.polylines])

    @classmethod
    def from_json(cls, text: str) -> "Contour":
        return cls([np.asarray(line, dtype=float).reshape(-1, 2) for line in json.loads(text)])


def make_field(spec: GridSpec, fill: float) -> ScalarField:
    return ScalarField(spec, np.full(spec.shape, float(fill)))


def field_from_function(spec: GridSpec, fn) -> ScalarField:
    """Evaluate ``fn(delta, omega)`` (vectorised) on every node."""
    dd, ww = spec.mesh()
    return ScalarField(spec, np.broadcast_to(fn(dd, ww), spec.shape))


def signed_distance_rect(spec: GridSpec, delta_lo, delta_hi, omega_lo, omega_hi) -> ScalarField:
    """Exact Euclidean signed distance to an axis-aligned rectangle, positive inside."""
    if not (delta_lo < delta_hi and omega_lo < omega_hi):
        raise GridError("degenerate rectangle")
    dd, ww = spec.mesh()
    return ScalarField(spec, _rect_sdf(dd, ww, delta_lo, delta_hi, omega_lo, omega_hi))


def _rect_sdf(dd, ww, dlo, dhi, wlo, whi):
    qd = np.maximum(dlo - dd, dd - dhi)
    qw = np.maximum(wlo - ww, ww - whi)
    outside = np.hypot(np.maximum(qd, 0.0), np.maximum(qw, 0.0))
    inside = np.minimum(np.maximum(qd, qw), 0.0)
    return -(outside + inside)


def signed_distance_ellipse(spec: GridSpec, center, radii) -> ScalarField:
    """Approximate signed distance ``r*(1 - rho)`` to an axis-aligned ellipse.

    ``rho`` is the normalised elliptical radius and ``r`` the geometric mean of
    the radii. Sign and zero set are exact; magnitudes are not Euclidean.
    """
    rd, rw = float(radii[0]), float(radii[1])
    if not (rd > 0 and rw > 0):
        raise GridError("ellipse radii must be positive")
    dd, ww = spec.mesh()
    rho = np.hypot((dd - center[0]) / rd, (ww - center[1]) / rw)
    return ScalarField(spec, math.sqrt(rd * rw) * (1.0 - rho))


def gradient_central(f: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Central differences in the interior, one-sided first order on the boundary."""
    gd, gw = np.gradient(f.values, f.spec.h_delta, f.spec.h_omega, edge_order=1)
    return ScalarField(f.spec, gd), ScalarField(f.spec, gw)


def _cell_coords(spec: GridSpec, delta, omega, clamp: bool):
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if clamp:
        delta = np.clip(delta, spec.delta_min, spec.delta_max)
        omega = np.clip(omega, spec.omega_min, spec.omega_max)
    elif np.any(~np.isfinite(delta)) or np.any(~np.isfinite(omega)):
        raise GridError("query point is not finite")
    else:
        bad = (
            (delta < spec.delta_min)
            | (delta > spec.delta_max)
            | (omega < spec.omega_min)
            | (omega > spec.omega_max)
        )
        if np.any(bad):
            k = np.flatnonzero(np.ravel(bad))[0]
            raise GridError(
                f"point ({np.ravel(delta)[k]}, {np.ravel(omega)[k]}) lies outside the grid"
            )
    fi = (delta - spec.delta_min) / spec.h_delta
    fj = (omega - spec.omega_min) / spec.h_omega
    i = np.clip(np.floor(fi).astype(np.intp), 0, spec.n_delta - 2)
    j = np.clip(np.floor(fj).astype(np.intp), 0, spec.n_omega - 2)
    # clip guards rounding at the far edges; weights stay in [0, 1]
    a = np.clip(fi - i, 0.0, 1.0)
    b = np.clip(fj - j, 0.0, 1.0)
    return i, j, a, b


class BilinearStencil:
    """Precomputed bilinear weights for a fixed set of query points.

    Applying the stencil is a convex combination of node values, so it is
    monotone: ``u >= v`` node-wise implies ``apply(u) >= apply(v)``.
    """

    def __init__(self, spec: GridSpec, delta, omega, clamp: bool = True):
        self.spec = spec
        i, j, a, b = _cell_coords(spec, delta, omega, clamp)
        n = spec.n_omega
        self.shape = np.shape(i)
        self._k00 = (i * n + j).ravel()
        self._k10 = self._k00 + n
        self._k01 = self._k00 + 1
        self._k11 = self._k10 + 1
        a = a.ravel()
        b = b.ravel()
        self._w00 = (1.0 - a) * (1.0 - b)
        self._w10 = a * (1.0 - b)
        self._w01 = (1.0 - a) * b
        self._w11 = a * b

    def apply(self, values: np.ndarray) -> np.ndarray:
        v = values.ravel()
        out = (
            self._w00 * v[self._k00]
            + self._w10 * v[self._k10]
            + self._w01 * v[self._k01]
            + self._w11 * v[self._k11]
        )
        return out.reshape(self.shape)


def interpolate_many(f: ScalarField, delta, omega, clamp: bool = False) -> np.ndarray:
    """Vectorised bilinear interpolation; out-of-grid points raise unless ``clamp``."""
    return BilinearStencil(f.spec, delta, omega, clamp=clamp).apply(f.values)


def interpolate(f: ScalarField, point, clamp: bool = False) -> float:
    """Bilinear interpolation of ``f`` at ``point = (delta, omega)``."""
    return float(interpolate_many(f, point[0], point[1], clamp=clamp))


def extract_zero_contour(f: ScalarField) -> Contour:
    """Marching-squares polylines of ``{V = 0}`` with linear edge interpolation."""
    vals = f.values
    if np.all(vals > 0) or np.all(vals < 0):
        return Contour([])
    from skimage.measure import find_contours

    spec = f.spec
    lines = []
    for c in find_contours(vals, 0.0):
        pts = np.empty_like(c)
        pts[:, 0] = spec.delta_min + c[:, 0] * spec.h_delta
        pts[:, 1] = spec.omega_min + c[:, 1] * spec.h_omega
        lines.append(pts)
    return Contour(lines)


def _check_same(a: ScalarField, b: ScalarField):
    if a.spec != b.spec:
        raise GridError("fields live on different grids")


def pointwise_min(a: ScalarField, b: ScalarField) -> ScalarField:
    """Set intersection in the ``V >= 0`` convention."""
    _check_same(a, b)
    return ScalarField(a.spec, np.minimum(a.values, b.values))


def pointwise_max(a: ScalarField, b: ScalarField) -> ScalarField:
    _check_same(a, b)
    return ScalarField(a.spec, np.maximum(a.values, b.values))


def pointwise_neg(a: ScalarField) -> ScalarField:
    """Set complement (up to the zero level set itself)."""
    return ScalarField(a.spec, -a.values)


def write_field_csv(f: ScalarField, path) -> None:
    """Header line, a line with the grid numbers, then one row per delta index."""
    s = f.spec
    lines = [
        CSV_HEADER,
        ",".join(
            [repr(float(s.delta_min)), repr(float(s.delta_max)), repr(float(s.omega_min)),
             repr(float(s.omega_max)), str(s.n_delta), str(s.n_omega)]
        ),
    ]
    lines.extend(",".join(repr(float(v)) for v in row) for row in f.values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path) -> ScalarField:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0].strip() != CSV_HEADER:
        raise GridError(f"{path}: missing field CSV header")
    nums = rows[1].split(",")
    spec = GridSpec(float(nums[0]), float(nums[1]), float(nums[2]), float(nums[3]),
                    int(nums[4]), int(nums[5]))
    body = [[float(x) for x in r.split(",")] for r in rows[2:] if r.strip()]
    return ScalarField(spec, np.array(body))


def polyline_length(points: Sequence[Sequence[float]]) -> float:
    p = np.asarray(points, dtype=float)
    return float(np.sum(np.hypot(*np.diff(p, axis=0).T))) if len(p) > 1 else 0.0
