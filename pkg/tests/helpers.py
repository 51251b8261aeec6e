"""Shared fleet builders and independent oracles for the test suite."""

from itertools import combinations, product

import numpy as np

from sweepctrl import ControlRegion, FleetConfig, ProblemSpec, RobotSpec

DEG45 = np.deg2rad(45.0)
DEG225 = np.deg2rad(225.0)

FIVE_ROWS = [(5, 5, 2), (11, 11, 2), (16, 16, 1), (20, 20, 3), (27, 27, 3)]
TEN_ROWS = [
    (-10, -10, 1), (-13, -13, 1), (-18, -18, 1), (-22, -22, 2), (-25, -25, 2),
    (-29, -29, 2), (-32, -32, 3), (-35, -35, 3), (-38, -38, 3), (-40, -40, 3),
]


def convoy(rows, radius=1.0, horizon=2.0, bound=10.0, theta=DEG45,
           theta_mode="frozen"):
    robots = tuple(RobotSpec((float(x), float(y)), float(s), theta)
                   for x, y, s in rows)
    fleet = FleetConfig(robots, radius)
    return ProblemSpec(
        fleet, ControlRegion((bound,) * len(rows)), horizon, theta_mode
    )


def face_pair(**kw):
    """Two robots with the faster one in front: it escapes unless held back."""
    return convoy([(2, 2, 3), (3, 3, 1)], **kw)


def chase_pair(**kw):
    """Faster robot listed first and behind; the pair touches at t = 0."""
    return convoy([(3, 3, 3), (2, 2, 1)], **kw)


def delayed_pair(**kw):
    """Faster robot behind with slack: at u = (1, 1) contact lands at 1/sqrt(2)."""
    return convoy([(3, 3, 3), (1, 1, 1)], **kw)


def far_pair(theta_mode="frozen"):
    """Contact-free pair where full speed toward the origin is optimal."""
    return convoy([(2, 2, 1), (30, 30, 1)], bound=1.0, theta_mode=theta_mode)


def five_fleet(theta_mode="frozen"):
    return convoy(FIVE_ROWS, horizon=8.0, bound=5.0, theta_mode=theta_mode)


def ten_fleet(theta_mode="frozen"):
    return convoy(TEN_ROWS, horizon=8.0, bound=5.0, theta=DEG225,
                  theta_mode=theta_mode)


def staged_probe():
    """Eight-phase control table for the ten-robot convoy.

    Phase 1 sprints the tail so pairs close within the first time unit,
    phases 2 and 3 rest the tail and squeeze the head so one more pair
    closes just before t = 3, and the rest of the horizon runs with evenly
    matched speeds so no further contact force is needed.
    """
    third = 2.0 / 3.0
    quiet = [2, 2, 2, 1, 1, 1, third, third, third, third]
    return np.array([
        [1, 1, 1, 1.5, 1.5, 1.5, 1, 2, 1, 3],
        [1, 1, 4, 1, 1, 1, third, third, third, third],
        [1, 0.5, 5, 1, 1, 1, third, third, third, third],
        quiet, quiet, quiet, quiet, quiet,
    ], dtype=float)


def brute_force_projection(normals, offsets, z):
    """Projection oracle: stacked KKT solve per active subset, best feasible wins.

    Deliberately a different route from the library (full (dim + k) block
    system per subset, least squares, empty subset included) so agreement is
    evidence rather than tautology.
    """
    s, dim = normals.shape
    best = None
    for size in range(0, s + 1):
        for sub in combinations(range(s), size):
            k = len(sub)
            rows = normals[list(sub)]
            blk = np.zeros((dim + k, dim + k))
            blk[:dim, :dim] = np.eye(dim)
            blk[:dim, dim:] = rows.T
            blk[dim:, :dim] = rows
            rhs = np.concatenate([z, offsets[list(sub)]])
            sol, *_ = np.linalg.lstsq(blk, rhs, rcond=None)
            y, mu = sol[:dim], sol[dim:]
            if np.any(normals @ y - offsets > 1e-8):
                continue
            if np.any(mu < -1e-8):
                continue
            if k and np.max(np.abs(rows @ y - offsets[list(sub)])) > 1e-8:
                continue
            d = float(np.linalg.norm(y - z))
            if best is None or d < best[0] - 1e-12:
                best = (d, y)
    return best[1]


def random_polyhedron_instance(rng, dim=4, max_s=4):
    """Nonempty random polyhedron (feasible anchor built in) plus a query point."""
    s = int(rng.integers(1, max_s + 1))
    normals = rng.standard_normal((s, dim)) * rng.uniform(0.5, 2.0)
    anchor = rng.standard_normal(dim)
    offsets = normals @ anchor + rng.uniform(0.05, 2.0, s)
    z = anchor + rng.standard_normal(dim) * 3.0
    return normals, offsets, z, anchor


def grid_projection_distance(normals, offsets, z, anchor, y_ref, G=9):
    """Distance from z to the polyhedron over a fine feasible lattice.

    Two sampling passes: wide boxes zooming from a region covering the
    query and the anchor (so a grossly misplaced candidate would be beaten
    by some sampled feasible point), then fine boxes shrinking around the
    reference point ``y_ref`` until the lattice spacing drops below 2.5e-7.
    Every sampled point is kept only if it satisfies all halfspaces, so the
    returned value can never undercut the true distance.
    """
    feas_tol = 1e-12 * (1.0 + np.abs(offsets))
    best = np.inf

    def sweep(center, halfwidth, levels, recenter):
        nonlocal best
        center = np.asarray(center, dtype=float).copy()
        for _ in range(levels):
            axes = [np.linspace(c - halfwidth, c + halfwidth, G) for c in center]
            pts = np.array(list(product(*axes)))
            keep = np.all(pts @ normals.T - offsets <= feas_tol, axis=1)
            feas = pts[keep]
            if len(feas):
                d = np.linalg.norm(feas - z, axis=1)
                i = int(np.argmin(d))
                if float(d[i]) < best:
                    best = float(d[i])
                    if recenter:
                        center = feas[i]
            halfwidth *= 0.6
        return halfwidth

    wide = 2.0 * float(np.linalg.norm(z - np.asarray(anchor))) + 1.0
    sweep(anchor, wide, 8, recenter=True)
    halfwidth = 1.0
    while 2.0 * halfwidth / (G - 1) > 2.5e-7:
        halfwidth = sweep(y_ref, halfwidth, 1, recenter=False)
    return best


def random_corridor_instance(rng, touching):
    """Random feasible convoy (n <= 5) plus an admissible control and step.

    Positions are sorted by coordinate sum and shifted along the diagonal so
    consecutive sums differ by at least 2R; with ``touching`` the first pair
    starts exactly on the separation boundary.
    """
    n = int(rng.integers(2, 6))
    R = float(rng.uniform(0.3, 2.0))
    pos = rng.standard_normal((n, 2)) * 3.0
    sums = pos[:, 0] + pos[:, 1]
    order = np.argsort(sums)[::-1]
    pos = pos[order]
    sums = sums[order]
    for i in range(1, n):
        need = 2 * R if (touching and i == 1) else 2 * R + float(rng.uniform(0.1, 3.0))
        target = sums[i - 1] - need
        pos[i] += (target - sums[i]) / 2.0
        sums[i] = target
    thetas = rng.uniform(0, 2 * np.pi, n)
    robots = tuple(
        RobotSpec((pos[i, 0], pos[i, 1]), float(rng.uniform(0.5, 3.0)),
                  float(thetas[i]))
        for i in range(n)
    )
    fleet = FleetConfig(robots, R)
    b = rng.uniform(0.5, 4.0, n)
    spec = ProblemSpec(fleet, ControlRegion(tuple(b)), 1.0, "frozen")
    u = rng.uniform(0, b)
    h = float(rng.uniform(1e-3, 0.1))
    return spec, u, h


def scenario_text(rows, T=2.0, R=1.0, bound="10", theta=45.0, name="pair",
                  extra=()):
    """Render a scenario file for harness tests."""
    lines = [f"name = {name}", f"T = {T}", f"R = {R}", f"bound = {bound}"]
    if theta is not None:
        lines.append(f"theta = {theta}")
    lines.extend(extra)
    lines.append("robots:")
    for row in rows:
        lines.append(" ".join(str(v) for v in row))
    return "\n".join(lines) + "\n"
