"""Problem data: robot convoy, control box, drift field, corridor polyhedron.

State stacks planar robot positions as ``x = (x_1, y_1, ..., x_n, y_n)``.
Each robot moves toward the origin along its heading with speed ``s_i u_i``;
the corridor constraints keep consecutive coordinate sums separated by at
least ``2R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Polyhedron

TWO_PI = 2.0 * math.pi


class InvalidFleetError(ValueError):
    """Fleet data violates the model requirements."""


def position_angle(px: float, py: float) -> float:
    """Angle of the position vector, wrapped into ``[0, 2*pi)``."""
    return math.atan2(py, px) % TWO_PI


@dataclass(frozen=True)
class RobotSpec:
    """One robot: start position, speed scale, heading angle in radians."""

    x0: tuple
    s: float
    theta0: float

    def __post_init__(self):
        start = tuple(float(v) for v in self.x0)
        if len(start) != 2:
            raise InvalidFleetError("robot start must be planar")
        object.__setattr__(self, "x0", start)
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "theta0", float(self.theta0))
        if not self.s > 0.0:
            raise InvalidFleetError("speed scale must be positive")
        if not 0.0 <= self.theta0 < TWO_PI:
            raise InvalidFleetError("heading must lie in [0, 2*pi)")


@dataclass(frozen=True)
class FleetConfig:
    """Ordered convoy sharing one safety radius; the target is the origin."""

    robots: tuple
    radius: float
    target: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "robots", tuple(self.robots))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(
            self, "target", tuple(float(v) for v in self.target)
        )
        if len(self.robots) < 2:
            raise InvalidFleetError("a fleet needs at least two robots")
        if self.radius < 0.0:
            raise InvalidFleetError("radius must be nonnegative")
        if self.target != (0.0, 0.0):
            raise InvalidFleetError("the target is fixed at the origin")
        corridor_orientations(self)  # raises if the start violates separation

    @property
    def n(self) -> int:
        return len(self.robots)

    @property
    def x0(self) -> np.ndarray:
        return np.array([v for r in self.robots for v in r.x0], dtype=float)

    @property
    def speeds(self) -> np.ndarray:
        return np.array([r.s for r in self.robots], dtype=float)

    @property
    def thetas0(self) -> np.ndarray:
        return np.array([r.theta0 for r in self.robots], dtype=float)


def corridor_orientations(fleet: FleetConfig) -> np.ndarray:
    """Per-pair signs making the start satisfy the separation constraints.

    Pair ``j`` requires ``sigma_j * (sum_j - sum_{j+1}) <= -2R`` where
    ``sum_i`` is robot ``i``'s coordinate sum.  The sign is fixed from the
    initial ordering; an unorderable pair (sums closer than ``2R``) raises.
    """
    x0 = np.array([v for r in fleet.robots for v in r.x0], dtype=float)
    sums = x0[0::2] + x0[1::2]
    gap = 2.0 * fleet.radius
    tol = 1e-9 * (1.0 + gap)
    signs = np.empty(len(sums) - 1)
    for j in range(len(sums) - 1):
        diff = sums[j] - sums[j + 1]
        if diff <= -gap + tol:
            signs[j] = 1.0
        elif -diff <= -gap + tol:
            signs[j] = -1.0
        else:
            raise InvalidFleetError(
                f"robots {j} and {j + 1} start closer than 2R in coordinate sums"
            )
    return signs


def corridor_polyhedron(fleet: FleetConfig) -> Polyhedron:
    """The ``n - 1`` separation halfspaces ``<a_j, x> <= -2R``.

    Row ``j`` carries ``sigma_j`` at the coordinates of robot ``j`` and
    ``-sigma_j`` at those of robot ``j + 1`` (0-based), so consecutive
    coordinate sums stay at least ``2R`` apart in the order the convoy
    started in.
    """
    if fleet.n < 2:
        raise InvalidFleetError("corridor needs at least two robots")
    signs = corridor_orientations(fleet)
    n = fleet.n
    normals = np.zeros((n - 1, 2 * n))
    for j in range(n - 1):
        normals[j, 2 * j : 2 * j + 2] = signs[j]
        normals[j, 2 * j + 2 : 2 * j + 4] = -signs[j]
    offsets = np.full(n - 1, -2.0 * fleet.radius)
    return Polyhedron(normals, offsets)


@dataclass(frozen=True)
class ControlRegion:
    """Box of admissible control magnitudes ``u_i in [0, b_i]``."""

    bounds: tuple

    def __post_init__(self):
        bounds = tuple(float(b) for b in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if any(b < 0.0 for b in bounds):
            raise InvalidFleetError("control bounds must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.bounds)

    def as_array(self) -> np.ndarray:
        return np.array(self.bounds, dtype=float)

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        hi = self.as_array()
        return bool(np.all(u >= -tol) and np.all(u <= hi + tol * (1.0 + hi)))

    def clip(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), 0.0, self.as_array())


@dataclass(frozen=True)
class ProblemSpec:
    """Fleet, control box, horizon, and heading mode for one problem."""

    fleet: FleetConfig
    controls: ControlRegion
    horizon: float
    theta_mode: str = "frozen"

    def __post_init__(self):
        object.__setattr__(self, "horizon", float(self.horizon))
        if not self.horizon > 0.0:
            raise InvalidFleetError("horizon must be positive")
        if self.theta_mode not in ("frozen", "tracking"):
            raise InvalidFleetError(f"unknown theta mode {self.theta_mode!r}")
        if self.controls.n != self.fleet.n:
            raise InvalidFleetError("one control bound per robot required")

    def heading_cos_sin(self, x):
        """Per-robot heading cosines/sines at state ``x``.

        Frozen mode uses the initial angles.  Tracking mode points each
        robot at its current position angle; a robot at the origin gets a
        zero direction (its drift block vanishes).
        """
        if self.theta_mode == "frozen":
            th = self.fleet.thetas0
            return np.cos(th), np.sin(th)
        x = np.asarray(x, dtype=float)
        px = x[0::2]
        py = x[1::2]
        r = np.hypot(px, py)
        safe = np.where(r > 1e-12, r, 1.0)
        near = r > 1e-12
        return np.where(near, px / safe, 0.0), np.where(near, py / safe, 0.0)


def drift(x, u, spec: ProblemSpec) -> np.ndarray:
    """Uncontacted velocity field: block ``i`` is ``-s_i u_i (cos, sin)``.

    With headings at the position angle this moves each robot straight at
    the origin at speed ``s_i u_i``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    cos_t, sin_t = spec.heading_cos_sin(x)
    speed = spec.fleet.speeds * u
    out = np.empty_like(x)
    out[0::2] = -speed * cos_t
    out[1::2] = -speed * sin_t
    return out


def terminal_cost(x_final) -> float:
    """Half squared distance of the stacked state from the origin."""
    x_final = np.asarray(x_final, dtype=float)
    return 0.5 * float(x_final @ x_final)
