"""Catching-up discretization of the sweeping process.

Each step projects the drift onto the velocities that keep the next state
feasible, records the projection multipliers as contact coefficients, and
advances ``x_{k+1} = x_k + h V_{k+1}`` on a dyadic grid of ``2**m`` cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import nnls

from .geometry import (
    InfeasiblePolyhedronError,
    Polyhedron,
    _project_halfspaces,
    disk_gap,
)
from .model import ProblemSpec, corridor_polyhedron, drift


class SimulationError(RuntimeError):
    """Simulation aborted; carries the failing step and state snapshot."""

    def __init__(self, message: str, step_index: int, state):
        super().__init__(message)
        self.step_index = int(step_index)
        self.state = np.array(state, dtype=float)


@dataclass(frozen=True)
class Grid:
    """Uniform dyadic grid on ``[0, horizon]`` with ``2**m`` cells."""

    horizon: float
    m: int

    def __post_init__(self):
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "m", int(self.m))
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.m < 0:
            raise ValueError("refinement level must be nonnegative")

    @property
    def num_cells(self) -> int:
        return 2 ** self.m

    @property
    def h(self) -> float:
        return self.horizon / self.num_cells

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.num_cells + 1)


@dataclass
class Trajectory:
    """Discrete run: states at nodes, controls/velocities/contacts per cell.

    ``states[k + 1] == states[k] + grid.h * velocities[k]`` holds exactly.
    """

    grid: Grid
    states: np.ndarray      # (K+1, 2n)
    controls: np.ndarray    # (K, n)
    etas: np.ndarray        # (K, n-1)
    velocities: np.ndarray  # (K, 2n)

    @property
    def n_robots(self) -> int:
        return self.states.shape[1] // 2

    def max_corridor_residual(self, corridor: Polyhedron) -> float:
        """Largest signed violation of the corridor over all nodes."""
        resid = self.states @ corridor.normals.T - corridor.offsets
        return float(np.max(resid))

    def min_disk_gap(self, radius: float, skip_initial: bool = False) -> float:
        """Smallest pairwise Euclidean clearance over recorded nodes."""
        states = self.states[1:] if skip_initial else self.states
        px = states[:, 0::2]
        py = states[:, 1::2]
        best = np.inf
        for i, j in combinations(range(self.n_robots), 2):
            d = np.hypot(px[:, i] - px[:, j], py[:, i] - py[:, j])
            best = min(best, float(np.min(d)))
        return best - 2.0 * radius

    def max_eta(self) -> float:
        return float(np.max(self.etas, initial=0.0))


def sup_norm_gap(coarse: Trajectory, fine: Trajectory) -> float:
    """Max state deviation at the shared (coarser) grid nodes."""
    a, b = coarse, fine
    if a.grid.m > b.grid.m:
        a, b = b, a
    if abs(a.grid.horizon - b.grid.horizon) > 1e-12 * (1.0 + a.grid.horizon):
        raise ValueError("trajectories live on different horizons")
    stride = 2 ** (b.grid.m - a.grid.m)
    return float(np.max(np.abs(b.states[::stride] - a.states)))


def velocity_constraints(
    spec: ProblemSpec,
    x,
    h: float,
    family: str = "corridor",
    corridor: Polyhedron | None = None,
) -> Polyhedron:
    """Halfspaces on the velocity keeping ``x + h v`` feasible.

    Corridor rows are ``(a_j, (c_j - <a_j, x>) / h)`` so the projection
    multipliers equal the contact coefficients directly; disk rows linearize
    each pairwise clearance as ``<-grad D, v> <= D / h``.
    """
    x = np.asarray(x, dtype=float)
    if family == "corridor":
        corr = corridor if corridor is not None else corridor_polyhedron(spec.fleet)
        return Polyhedron(corr.normals, (corr.offsets - corr.normals @ x) / h)
    if family != "disks":
        raise ValueError(f"unknown constraint family {family!r}")
    n = len(x) // 2
    radius = spec.fleet.radius
    # Pairs far beyond one step's reach cannot activate; prune only when the
    # pair count would dominate the step cost.
    reach = 16.0 * h * (1.0 + float(np.max(spec.fleet.speeds * spec.controls.as_array())))
    prune = n > 24
    normals = []
    offsets = []
    for i, j in combinations(range(n), 2):
        gap, grad = disk_gap(x, i, j, radius)
        if prune and gap > reach:
            continue
        normals.append(-grad)
        offsets.append(gap / h)
    if not normals:
        return Polyhedron(np.zeros((0, len(x))), np.zeros(0), dim=len(x))
    return Polyhedron(np.array(normals), np.array(offsets))


def _disk_contact_eta(spec, corridor, x_next, h, w):
    # Contact coefficients for disk runs are reported against the corridor
    # normals nearest to activity at the new state.
    slack = corridor.offsets - corridor.normals @ x_next
    band = 1e-9 * (1.0 + np.abs(corridor.offsets)) + h
    idx = np.nonzero(slack <= band)[0]
    eta = np.zeros(corridor.s)
    if idx.size == 0 or float(np.linalg.norm(w)) == 0.0:
        return eta
    coeff, _ = nnls(corridor.normals[idx].T, w)
    eta[idx] = coeff
    return eta


def catching_up_step(
    spec: ProblemSpec,
    x,
    u,
    h: float,
    family: str = "corridor",
    corridor: Polyhedron | None = None,
):
    """One step: project the drift, advance, report contact coefficients.

    Returns ``(x_next, velocity, eta)``.  For the corridor family ``eta``
    equals the projection multipliers; for disks it is the nonnegative
    decomposition of ``drift - velocity`` over corridor normals active at
    the new state.
    """
    x = np.asarray(x, dtype=float)
    g = drift(x, u, spec)
    if corridor is None:
        corridor = corridor_polyhedron(spec.fleet)
    vp = velocity_constraints(spec, x, h, family, corridor)
    vel, mu = _project_halfspaces(vp.normals, vp.offsets, g)
    x_next = x + h * vel
    if family == "corridor":
        eta = mu
    else:
        eta = _disk_contact_eta(spec, corridor, x_next, h, g - vel)
    return x_next, vel, eta


def state_projection_step(
    spec: ProblemSpec,
    x,
    u,
    h: float,
    family: str = "corridor",
    corridor: Polyhedron | None = None,
) -> np.ndarray:
    """Equivalent form: project ``x + h * drift`` onto the feasible set.

    For disks the set is the linearization of the clearances at ``x``, so
    the result matches ``catching_up_step`` to rounding.
    """
    x = np.asarray(x, dtype=float)
    g = drift(x, u, spec)
    target = x + h * g
    if family == "corridor":
        corr = corridor if corridor is not None else corridor_polyhedron(spec.fleet)
        y, _ = _project_halfspaces(corr.normals, corr.offsets, target)
        return y
    if family != "disks":
        raise ValueError(f"unknown constraint family {family!r}")
    vp = velocity_constraints(spec, x, h, family)
    # <-grad, x + h v> <= D - <grad, x>  rewritten from <-grad, v> <= D/h.
    offsets = vp.offsets * h + vp.normals @ x
    y, _ = _project_halfspaces(vp.normals, offsets, target)
    return y


def _schedule_array(controls, num_cells: int, n: int) -> np.ndarray:
    if hasattr(controls, "values_on_grid"):
        values = np.asarray(controls.values_on_grid(num_cells), dtype=float)
    else:
        values = np.asarray(controls, dtype=float)
        if values.ndim == 1:
            values = np.tile(values, (num_cells, 1))
        elif values.ndim == 2 and values.shape[0] != num_cells:
            if num_cells % values.shape[0]:
                raise ValueError(
                    f"{values.shape[0]} control pieces do not divide {num_cells} cells"
                )
            values = np.repeat(values, num_cells // values.shape[0], axis=0)
    if values.shape != (num_cells, n):
        raise ValueError(f"control schedule has shape {values.shape}, "
                         f"expected {(num_cells, n)}")
    return values


def simulate(
    spec: ProblemSpec,
    controls,
    m: int,
    family: str = "corridor",
) -> Trajectory:
    """Run the catching-up scheme over the whole horizon.

    ``controls`` may be a constant per-robot vector, a ``(K, n)`` array whose
    row count divides the cell count, or any object with ``values_on_grid``.
    Control values must stay inside the admissible box.
    """
    if family not in ("corridor", "disks"):
        raise ValueError(f"unknown constraint family {family!r}")
    grid = Grid(spec.horizon, m)
    cells = grid.num_cells
    n = spec.fleet.n
    sched = _schedule_array(controls, cells, n)
    hi = spec.controls.as_array()
    if np.any(sched < -1e-9) or np.any(sched > hi + 1e-9 * (1.0 + hi)):
        raise ValueError("control schedule leaves the admissible box")
    corridor = corridor_polyhedron(spec.fleet)
    h = grid.h
    states = np.empty((cells + 1, 2 * n))
    velocities = np.empty((cells, 2 * n))
    etas = np.empty((cells, n - 1))
    states[0] = spec.fleet.x0
    x = states[0].copy()
    speeds = spec.fleet.speeds
    frozen = spec.theta_mode == "frozen"
    if frozen:
        cos_t = np.cos(spec.fleet.thetas0)
        sin_t = np.sin(spec.fleet.thetas0)
    A, c = corridor.normals, corridor.offsets
    g = np.empty(2 * n)
    for k in range(cells):
        u = sched[k]
        if frozen:
            speed = speeds * u
            g[0::2] = -speed * cos_t
            g[1::2] = -speed * sin_t
        else:
            g = drift(x, u, spec)
        try:
            if family == "corridor":
                vel, eta = _project_halfspaces(A, (c - A @ x) / h, g)
            else:
                vp = velocity_constraints(spec, x, h, family, corridor)
                vel, _ = _project_halfspaces(vp.normals, vp.offsets, g)
                eta = _disk_contact_eta(spec, corridor, x + h * vel, h, g - vel)
        except InfeasiblePolyhedronError as exc:
            raise SimulationError(
                f"projection failed at step {k}: {exc}", k, states[k]
            ) from exc
        x = x + h * vel
        states[k + 1] = x
        velocities[k] = vel
        etas[k] = eta
    return Trajectory(grid, states, sched, etas, velocities)
