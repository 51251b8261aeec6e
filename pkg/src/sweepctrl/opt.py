"""Control search over the simulator: lattice, pattern, finite-difference.

All searchers score a schedule by the terminal cost of its catching-up run
and keep a monotone log of accepted costs.  Nothing here assumes convexity;
the landscape has ridges where robots glue, so the exhaustive lattice and
the derivative-free pattern probe are the reference methods and the
finite-difference descent falls back to pattern probing at kinks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .model import ProblemSpec, terminal_cost
from .sweep import simulate


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant control values, one row per piece."""

    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float)).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, u) -> "ControlSchedule":
        return cls(np.atleast_2d(np.asarray(u, dtype=float)))

    @classmethod
    def piecewise(cls, values) -> "ControlSchedule":
        return cls(values)

    @classmethod
    def from_flat(cls, flat, pieces: int, n: int) -> "ControlSchedule":
        return cls(np.reshape(np.asarray(flat, dtype=float), (pieces, n)))

    @property
    def pieces(self) -> int:
        return self.values.shape[0]

    @property
    def n_robots(self) -> int:
        return self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel().copy()

    def values_on_grid(self, num_cells: int) -> np.ndarray:
        if num_cells % self.pieces:
            raise ValueError(
                f"{self.pieces} pieces do not divide {num_cells} cells"
            )
        return np.repeat(self.values, num_cells // self.pieces, axis=0)


@dataclass
class OptResult:
    """Outcome of one search: best schedule, cost, and bookkeeping."""

    schedule: ControlSchedule
    cost: float
    trajectory: object
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    n_evals: int = 0
    partial: bool = False


def evaluate(spec: ProblemSpec, schedule, m: int, family: str = "corridor") -> float:
    """Terminal cost of the catching-up run under the given schedule."""
    traj = simulate(spec, schedule, m, family)
    return terminal_cost(traj.states[-1])


def _finish(spec, m, family, best_x, pieces, n, cost, history, evals, t0, partial=False):
    sched = ControlSchedule.from_flat(best_x, pieces, n)
    traj = simulate(spec, sched, m, family)
    return OptResult(
        schedule=sched,
        cost=float(cost),
        trajectory=traj,
        history=list(history),
        wall_time=time.perf_counter() - t0,
        n_evals=int(evals),
        partial=partial,
    )


def grid_oracle(
    spec: ProblemSpec,
    m: int,
    G: int,
    family: str = "corridor",
    budget: int | None = None,
) -> OptResult:
    """Exhaustive constant-control lattice: ``G`` levels per robot.

    Scores every point of the product lattice ``{0, ..., b_i}``; the result
    is the global lattice minimizer.  A budget cut marks the result partial.
    """
    if G < 1:
        raise ValueError("lattice needs at least one level per robot")
    t0 = time.perf_counter()
    n = spec.fleet.n
    hi = spec.controls.as_array()
    axes = [np.linspace(0.0, b, G) if b > 0 else np.zeros(1) for b in hi]
    best_u = None
    best = np.inf
    history = []
    evals = 0
    partial = False
    for u in product(*axes):
        if budget is not None and evals >= budget:
            partial = True
            break
        cost = evaluate(spec, np.array(u), m, family)
        evals += 1
        if cost < best:
            best = cost
            best_u = np.array(u)
            history.append(best)
    if best_u is None:
        raise ValueError("empty lattice")
    return _finish(spec, m, family, best_u, 1, n, best, history, evals, t0, partial)


def pattern_search(
    spec: ProblemSpec,
    m: int,
    init,
    budget: int = 2000,
    family: str = "corridor",
    step_scale: float = 0.25,
    step_floor: float = 1e-6,
) -> OptResult:
    """Coordinate probe search with halving steps.

    Probes each flattened coordinate up and down by the current step,
    accepts strict improvements, and halves all steps after a sweep with no
    improvement.  Terminates when every step drops below ``step_floor *
    bound`` or the evaluation budget runs out.
    """
    t0 = time.perf_counter()
    sched = init if isinstance(init, ControlSchedule) else ControlSchedule(init)
    pieces, n = sched.pieces, sched.n_robots
    hi = np.tile(spec.controls.as_array(), pieces)
    x = np.clip(sched.flat, 0.0, hi)
    cost = evaluate(spec, ControlSchedule.from_flat(x, pieces, n), m, family)
    evals = 1
    history = [cost]
    steps = step_scale * hi
    live = hi > 0.0
    partial = False
    while evals < budget and np.any(steps[live] > step_floor * hi[live]):
        improved = False
        for i in np.nonzero(live)[0]:
            if steps[i] <= step_floor * hi[i]:
                continue
            for sign in (1.0, -1.0):
                cand = min(max(x[i] + sign * steps[i], 0.0), hi[i])
                if cand == x[i]:
                    continue
                trial = x.copy()
                trial[i] = cand
                trial_cost = evaluate(
                    spec, ControlSchedule.from_flat(trial, pieces, n), m, family
                )
                evals += 1
                if trial_cost < cost:
                    x, cost = trial, trial_cost
                    history.append(cost)
                    improved = True
                    break
                if evals >= budget:
                    partial = True
                    break
            if evals >= budget:
                partial = True
                break
        if not improved:
            steps *= 0.5
    return _finish(spec, m, family, x, pieces, n, cost, history, evals, t0, partial)


def fd_gradient_descent(
    spec: ProblemSpec,
    m: int,
    init,
    budget: int = 600,
    family: str = "corridor",
    fd_scale: float = 1e-5,
) -> OptResult:
    """Projected descent on central finite differences.

    The terminal cost is piecewise smooth; where the gradient step fails to
    decrease (a gluing kink), one small pattern sweep is tried before giving
    up.  Probes are clipped into the box; the difference uses the realized
    probe separation.
    """
    t0 = time.perf_counter()
    sched = init if isinstance(init, ControlSchedule) else ControlSchedule(init)
    pieces, n = sched.pieces, sched.n_robots
    hi = np.tile(spec.controls.as_array(), pieces)
    x = np.clip(sched.flat, 0.0, hi)

    def score(flat):
        return evaluate(spec, ControlSchedule.from_flat(flat, pieces, n), m, family)

    cost = score(x)
    evals = 1
    history = [cost]
    live = np.nonzero(hi > 0.0)[0]
    partial = False
    while evals + 2 * live.size < budget:
        grad = np.zeros_like(x)
        for i in live:
            d = fd_scale * hi[i]
            up = min(x[i] + d, hi[i])
            dn = max(x[i] - d, 0.0)
            if up == dn:
                continue
            plus = x.copy()
            plus[i] = up
            minus = x.copy()
            minus[i] = dn
            grad[i] = (score(plus) - score(minus)) / (up - dn)
            evals += 2
        gmax = float(np.abs(grad).max(initial=0.0))
        if gmax < 1e-12:
            break
        step = 0.25 * float(hi.max()) / gmax
        accepted = False
        for _ in range(15):
            trial = np.clip(x - step * grad, 0.0, hi)
            trial_cost = score(trial)
            evals += 1
            if trial_cost < cost:
                x, cost = trial, trial_cost
                history.append(cost)
                accepted = True
                break
            step *= 0.5
            if evals >= budget:
                break
        if not accepted:
            # Kink: try one coordinate sweep at a small step.
            for i in live:
                for sign in (1.0, -1.0):
                    trial = x.copy()
                    trial[i] = min(max(x[i] + sign * 1e-3 * hi[i], 0.0), hi[i])
                    if trial[i] == x[i]:
                        continue
                    trial_cost = score(trial)
                    evals += 1
                    if trial_cost < cost:
                        x, cost = trial, trial_cost
                        history.append(cost)
                        accepted = True
                        break
                if accepted or evals >= budget:
                    break
            if not accepted:
                break
        if evals >= budget:
            partial = True
            break
    return _finish(spec, m, family, x, pieces, n, cost, history, evals, t0, partial)


def optimize_controls(
    spec: ProblemSpec,
    m: int,
    method: str = "pattern",
    pieces: int = 1,
    budget: int = 4000,
    seed: int = 0,
    family: str = "corridor",
) -> OptResult:
    """Multi-start driver: zero, full-bound, and three seeded uniform starts.

    ``method`` is one of ``pattern``, ``fdgrad``, ``grid`` (lattice followed
    by a pattern polish from its argmin).  Returns the best run with the
    evaluation count summed over starts.
    """
    t0 = time.perf_counter()
    n = spec.fleet.n
    hi = spec.controls.as_array()
    rng = np.random.default_rng(seed)
    starts = [np.zeros((pieces, n)), np.tile(hi, (pieces, 1))]
    starts += [rng.uniform(0.0, hi, size=(pieces, n)) for _ in range(3)]

    if method == "grid":
        G = 9 if n <= 3 else 5
        lattice_budget = budget // 2
        base = grid_oracle(spec, m, G, family, budget=lattice_budget)
        seed_sched = np.tile(base.schedule.values, (pieces, 1))
        polish = pattern_search(
            spec, m, ControlSchedule(seed_sched), budget - base.n_evals, family
        )
        best = polish if polish.cost <= base.cost else base
        best.n_evals = base.n_evals + polish.n_evals
        best.wall_time = time.perf_counter() - t0
        best.history = base.history + [c for c in polish.history if c <= base.cost]
        return best

    if method == "pattern":
        runner = pattern_search
    elif method == "fdgrad":
        runner = fd_gradient_descent
    else:
        raise ValueError(f"unknown optimizer {method!r}")

    per_start = max(budget // len(starts), 16)
    best = None
    total = 0
    for start in starts:
        result = runner(spec, m, ControlSchedule(start), per_start, family)
        total += result.n_evals
        if best is None or result.cost < best.cost:
            best = result
    best.n_evals = total
    best.wall_time = time.perf_counter() - t0
    return best


def straddle_oracle(n: int, R: float) -> float:
    """Analytic floor of the terminal cost for a chain straddling the origin.

    With every contact closed and the chain centered on the diagonal, robot
    ``i`` ends at planar coordinates ``((n + 1) / 2 - i) R`` each, so the
    half squared norm totals ``R^2 sum_i ((n + 1) / 2 - i)^2`` -- ``R^2 / 2``
    for a pair.
    """
    offsets = (n + 1) / 2.0 - np.arange(1, n + 1)
    return float(R * R * np.sum(offsets**2))
