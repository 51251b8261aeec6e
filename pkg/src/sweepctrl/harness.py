"""Scenario files, run orchestration, artifacts, and batch execution.

A scenario is plain text: ``key = value`` lines followed by a ``robots:``
block with one ``X Y S [THETA_DEG]`` row per robot.  ``#`` starts a comment
anywhere.  Recognized keys: name, T, R, bound, theta, family, m, optimizer,
seed, theta_mode, budget, mode.

Every run writes its artifacts into a fresh directory
``<name>-<UTC stamp>-<config hash>`` under the output root: the scenario
copy, a trajectory table, a flat summary, and per-command extras
(iteration log, condition report, convergence table).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import ConstraintViolationError, InfeasiblePolyhedronError
from .model import (
    TWO_PI,
    ControlRegion,
    FleetConfig,
    InvalidFleetError,
    ProblemSpec,
    RobotSpec,
    position_angle,
    corridor_polyhedron,
    terminal_cost,
)
from .opt import optimize_controls
from .pmp import adjoint_backward, certify
from .sweep import SimulationError, simulate, sup_norm_gap

KNOWN_KEYS = {
    "name", "t", "r", "bound", "theta", "family", "m",
    "optimizer", "seed", "theta_mode", "budget", "mode",
}
FAMILIES = ("corridor", "disks")
OPTIMIZERS = ("pattern", "grid", "fdgrad")
THETA_MODES = ("frozen", "tracking")


class ParseError(ValueError):
    """Scenario text rejected; carries the offending line number."""

    def __init__(self, line: int, message: str):
        self.line = int(line)
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class Scenario:
    """Validated scenario data plus the raw text it came from."""

    name: str
    rows: tuple
    radius: float
    horizon: float
    bounds: tuple
    theta: float | None = None
    family: str = "corridor"
    m: int = 9
    optimizer: str = "pattern"
    seed: int = 0
    budget: int = 4000
    mode: str = "constant"
    theta_mode: str | None = None
    source: str = ""

    @property
    def n(self) -> int:
        return len(self.rows)


def _parse_value(kind, value, lineno, key):
    try:
        return kind(value)
    except ValueError:
        raise ParseError(lineno, f"bad value for {key!r}: {value!r}") from None


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario text.  Raises ParseError with a line number."""
    keys: dict = {}
    rows = []
    row_lines = []
    in_robots = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if in_robots:
            parts = line.split()
            if len(parts) not in (3, 4):
                raise ParseError(lineno, "robot rows need X Y S [THETA_DEG]")
            rows.append(tuple(_parse_value(float, p, lineno, "robot row") for p in parts))
            row_lines.append(lineno)
            continue
        if line.lower().rstrip(":") == "robots" and line.endswith(":"):
            in_robots = True
            continue
        if "=" not in line:
            raise ParseError(lineno, "expected `key = value` or the robots: block")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ParseError(lineno, f"unknown key {key!r}")
        if key in keys:
            raise ParseError(lineno, f"duplicate key {key!r}")
        keys[key] = (value, lineno)

    def need(key):
        if key not in keys:
            raise ParseError(len(text.splitlines()) or 1, f"missing required key {key!r}")
        return keys[key]

    horizon_raw, horizon_line = need("t")
    horizon = _parse_value(float, horizon_raw, horizon_line, "t")
    if not horizon > 0.0:
        raise ParseError(horizon_line, "T must be positive")
    radius_raw, radius_line = need("r")
    radius = _parse_value(float, radius_raw, radius_line, "r")
    if not radius > 0.0:
        raise ParseError(radius_line, "R must be positive")
    if len(rows) < 2:
        raise ParseError(len(text.splitlines()) or 1, "at least two robot rows required")
    for row, lineno in zip(rows, row_lines):
        if not row[2] > 0.0:
            raise ParseError(lineno, "robot speed must be positive")

    bound_raw, bound_line = need("bound")
    parts = [p.strip() for p in bound_raw.split(",")]
    bound_vals = [_parse_value(float, p, bound_line, "bound") for p in parts]
    if len(bound_vals) == 1:
        bound_vals = bound_vals * len(rows)
    if len(bound_vals) != len(rows):
        raise ParseError(bound_line, "one bound per robot (or a single scalar)")
    if any(b < 0.0 for b in bound_vals):
        raise ParseError(bound_line, "bounds must be nonnegative")

    theta = None
    if "theta" in keys:
        theta_raw, theta_line = keys["theta"]
        theta = _parse_value(float, theta_raw, theta_line, "theta")

    def choice(key, default, allowed):
        if key not in keys:
            return default
        value, lineno = keys[key]
        value = value.lower()
        if value not in allowed:
            raise ParseError(lineno, f"{key} must be one of {', '.join(allowed)}")
        return value

    family = choice("family", "corridor", FAMILIES)
    optimizer = choice("optimizer", "pattern", OPTIMIZERS)
    theta_mode = choice("theta_mode", None, THETA_MODES)

    m = 9
    if "m" in keys:
        value, lineno = keys["m"]
        m = _parse_value(int, value, lineno, "m")
        if not 1 <= m <= 16:
            raise ParseError(lineno, "m must lie in 1..16")
    seed = 0
    if "seed" in keys:
        value, lineno = keys["seed"]
        seed = _parse_value(int, value, lineno, "seed")
    budget = 4000
    if "budget" in keys:
        value, lineno = keys["budget"]
        budget = _parse_value(int, value, lineno, "budget")
        if budget < 1:
            raise ParseError(lineno, "budget must be positive")
    mode = "constant"
    if "mode" in keys:
        value, lineno = keys["mode"]
        mode = value.lower()
        if mode != "constant":
            head, _, tail = mode.partition(":")
            if head != "piecewise" or not tail.isdigit() or int(tail) < 1:
                raise ParseError(lineno, "mode is `constant` or `piecewise:K`")

    name = keys["name"][0] if "name" in keys else "scenario"
    return Scenario(
        name=name,
        rows=tuple(rows),
        radius=radius,
        horizon=horizon,
        bounds=tuple(bound_vals),
        theta=theta,
        family=family,
        m=m,
        optimizer=optimizer,
        seed=seed,
        budget=budget,
        mode=mode,
        theta_mode=theta_mode,
        source=text,
    )


def build_spec(scenario: Scenario, theta_mode: str) -> ProblemSpec:
    """Materialize the problem data for one scenario.

    Heading precedence: per-row angle, then the scenario ``theta``, then the
    start's position angle (which is what tracking mode would pick at t=0).
    """
    robots = []
    for row in scenario.rows:
        x, y, s = row[0], row[1], row[2]
        if len(row) == 4:
            th = math.radians(row[3]) % TWO_PI
        elif scenario.theta is not None:
            th = math.radians(scenario.theta) % TWO_PI
        else:
            th = position_angle(x, y)
        robots.append(RobotSpec((x, y), s, th))
    fleet = FleetConfig(tuple(robots), scenario.radius)
    return ProblemSpec(fleet, ControlRegion(scenario.bounds), scenario.horizon, theta_mode)


@dataclass
class RunRecord:
    """Outcome of one harness run."""

    name: str
    command: str
    status: str
    config: dict
    out_dir: str
    error: str | None = None
    cost: float | None = None
    cost_verify: float | None = None
    wall_s: float = 0.0
    timestamp: str = ""
    artifacts: dict = field(default_factory=dict)
    report: dict | None = None
    report_ok: bool | None = None
    version: str = __version__


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _write_kv(path: Path, mapping: dict):
    lines = [f"{key} = {_fmt(value)}" for key, value in mapping.items()]
    path.write_text("\n".join(lines) + "\n")


def write_trajectory_csv(path: Path, traj):
    """Node-indexed table; controls and contacts repeat the last cell at T."""
    n = traj.n_robots
    header = ["t"]
    for i in range(1, n + 1):
        header += [f"x_{i}_1", f"x_{i}_2"]
    header += [f"u_{i}" for i in range(1, n + 1)]
    header += [f"eta_{j}" for j in range(1, n)]
    times = traj.grid.times()
    K = traj.grid.num_cells
    rows = [", ".join(header)]
    for k in range(K + 1):
        cell = min(k, K - 1)
        vals = [times[k], *traj.states[k], *traj.controls[cell], *traj.etas[cell]]
        rows.append(", ".join(f"{v:.17g}" for v in vals))
    path.write_text("\n".join(rows) + "\n")


def load_trajectory_csv(path) -> dict:
    lines = Path(path).read_text().strip().splitlines()
    header = [h.strip() for h in lines[0].split(",")]
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    n = sum(1 for h in header if h.startswith("u_"))
    return {
        "header": header,
        "times": data[:, 0],
        "states": data[:, 1 : 1 + 2 * n],
        "controls": data[:, 1 + 2 * n : 1 + 3 * n],
        "etas": data[:, 1 + 3 * n :],
    }


def _config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:8]


def _trajectory_stats(traj, spec, family: str) -> dict:
    corr = corridor_polyhedron(spec.fleet)
    skip = family == "disks"
    return {
        "max_corridor_residual": traj.max_corridor_residual(corr),
        "min_disk_gap": traj.min_disk_gap(spec.fleet.radius, skip_initial=skip),
        "eta_max": traj.max_eta(),
        "eta_active_cells": int(np.sum(np.any(traj.etas > 1e-9, axis=1))),
    }


NUMERICAL_ERRORS = (
    InvalidFleetError,
    SimulationError,
    InfeasiblePolyhedronError,
    ConstraintViolationError,
    ValueError,
)


def run(
    scenario: Scenario,
    command: str,
    out_root,
    *,
    m: int | None = None,
    family: str | None = None,
    u=None,
    mode: str | None = None,
    budget: int | None = None,
    seed: int | None = None,
    m_range: tuple = (6, 11),
) -> RunRecord:
    """Execute one command for one scenario, writing artifacts as it goes.

    Numerical failures are captured in the record (status ``failed``) rather
    than raised, so batch runs keep going.
    """
    if command not in ("simulate", "optimize", "certify", "converge"):
        raise ValueError(f"unknown command {command!r}")
    theta_mode = scenario.theta_mode or (
        "tracking" if command in ("simulate", "converge") else "frozen"
    )
    resolved = {
        "name": scenario.name,
        "command": command,
        "family": family or scenario.family,
        "m": int(m if m is not None else scenario.m),
        "theta_mode": theta_mode,
        "seed": int(seed if seed is not None else scenario.seed),
        "budget": int(budget if budget is not None else scenario.budget),
        "mode": mode or scenario.mode,
        "optimizer": scenario.optimizer,
        "radius": scenario.radius,
        "horizon": scenario.horizon,
        "bounds": list(scenario.bounds),
        "rows": [list(r) for r in scenario.rows],
        "u": None if u is None else [float(v) for v in u],
        "m_range": list(m_range) if command == "converge" else None,
    }
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    out_dir = Path(out_root) / f"{scenario.name}-{stamp}-{_config_digest(resolved)}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "scenario.txt").write_text(scenario.source or "")

    record = RunRecord(
        name=scenario.name,
        command=command,
        status="ok",
        config=resolved,
        out_dir=str(out_dir),
        timestamp=stamp,
    )
    t0 = time.perf_counter()
    try:
        _dispatch(record, scenario, resolved, out_dir, u, m_range)
    except NUMERICAL_ERRORS as exc:
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        (out_dir / "error.txt").write_text(record.error + "\n")
    record.wall_s = time.perf_counter() - t0
    summary = {
        "name": record.name,
        "command": command,
        "status": record.status,
        "family": resolved["family"],
        "m": resolved["m"],
        "theta_mode": resolved["theta_mode"],
        "seed": resolved["seed"],
        "version": record.version,
        "timestamp": stamp,
        "wall_s": record.wall_s,
    }
    if record.error:
        summary["error"] = record.error
    if record.cost is not None:
        summary["cost"] = record.cost
    if record.cost_verify is not None:
        summary["cost_verify"] = record.cost_verify
    if record.report_ok is not None:
        summary["conditions_ok"] = "yes" if record.report_ok else "no"
    summary.update(record.artifacts.pop("_stats", {}))
    _write_kv(out_dir / "summary.txt", summary)
    record.artifacts["summary"] = str(out_dir / "summary.txt")
    return record


def _default_u(scenario: Scenario, u):
    if u is None:
        return np.array(scenario.bounds, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape != (scenario.n,):
        raise ValueError("one control value per robot required")
    return u


def _dispatch(record, scenario, resolved, out_dir, u, m_range):
    command = resolved["command"]
    fam = resolved["family"]
    level = resolved["m"]
    spec = build_spec(scenario, resolved["theta_mode"])

    if command == "simulate":
        traj = simulate(spec, _default_u(scenario, u), level, fam)
        record.cost = terminal_cost(traj.states[-1])
        write_trajectory_csv(out_dir / "trajectory.csv", traj)
        record.artifacts["trajectory"] = str(out_dir / "trajectory.csv")
        record.artifacts["_stats"] = _trajectory_stats(traj, spec, fam)
        return

    if command == "optimize":
        pieces = 1
        if resolved["mode"] != "constant":
            pieces = int(resolved["mode"].partition(":")[2])
        result = optimize_controls(
            spec,
            level,
            method=resolved["optimizer"],
            pieces=pieces,
            budget=resolved["budget"],
            seed=resolved["seed"],
            family=fam,
        )
        record.cost = result.cost
        record.cost_verify = float(
            terminal_cost(simulate(spec, result.schedule, level + 2, fam).states[-1])
        )
        write_trajectory_csv(out_dir / "trajectory.csv", result.trajectory)
        iters = ["eval, cost"] + [
            f"{i}, {c:.17g}" for i, c in enumerate(result.history)
        ]
        (out_dir / "iterations.csv").write_text("\n".join(iters) + "\n")
        cert = adjoint_backward(result.trajectory, spec)
        report = certify(result.trajectory, cert, spec)
        (out_dir / "conditions.txt").write_text("\n".join(report.lines()) + "\n")
        record.report = dict(report.residuals)
        record.report_ok = report.ok
        record.artifacts.update(
            trajectory=str(out_dir / "trajectory.csv"),
            iterations=str(out_dir / "iterations.csv"),
            conditions=str(out_dir / "conditions.txt"),
        )
        record.artifacts["_stats"] = _trajectory_stats(result.trajectory, spec, fam)
        return

    if command == "certify":
        if u is None:
            raise ValueError("certify needs an explicit control vector")
        traj = simulate(spec, _default_u(scenario, u), level, fam)
        record.cost = terminal_cost(traj.states[-1])
        cert = adjoint_backward(traj, spec)
        report = certify(traj, cert, spec)
        write_trajectory_csv(out_dir / "trajectory.csv", traj)
        (out_dir / "conditions.txt").write_text("\n".join(report.lines()) + "\n")
        record.report = dict(report.residuals)
        record.report_ok = report.ok
        record.artifacts.update(
            trajectory=str(out_dir / "trajectory.csv"),
            conditions=str(out_dir / "conditions.txt"),
        )
        record.artifacts["_stats"] = _trajectory_stats(traj, spec, fam)
        return

    # converge
    lo, hi = int(m_range[0]), int(m_range[1])
    if not 0 <= lo < hi:
        raise ValueError("m range must satisfy 0 <= lo < hi")
    u_vec = _default_u(scenario, u)
    runs = {mm: simulate(spec, u_vec, mm, fam) for mm in range(lo, hi + 1)}
    lines = ["m_coarse, h_coarse, m_fine, sup_gap"]
    gaps = []
    for mm in range(lo, hi):
        gap = sup_norm_gap(runs[mm], runs[mm + 1])
        gaps.append(gap)
        lines.append(
            f"{mm}, {runs[mm].grid.h:.17g}, {mm + 1}, {gap:.17g}"
        )
    (out_dir / "convergence.csv").write_text("\n".join(lines) + "\n")
    record.cost = terminal_cost(runs[hi].states[-1])
    record.artifacts["convergence"] = str(out_dir / "convergence.csv")
    floor = 1e-12
    monotone = all(b <= a + floor for a, b in zip(gaps, gaps[1:]))
    record.artifacts["_stats"] = {
        "sup_gap_first": gaps[0],
        "sup_gap_last": gaps[-1],
        "monotone": "yes" if monotone else "no",
    }


def _batch_one(path: str, command: str, out_root: str) -> RunRecord:
    text = Path(path).read_text()
    try:
        scenario = parse_scenario(text)
    except ParseError as exc:
        return RunRecord(
            name=Path(path).stem,
            command=command,
            status="failed",
            config={"file": path},
            out_dir="",
            error=f"ParseError: {exc}",
        )
    return run(scenario, command, out_root)


def batch(directory, out_root, jobs: int | None = None, command: str = "optimize"):
    """Run every ``*.txt`` scenario under ``directory``; write an index table.

    Files run in separate processes (``jobs`` workers); one failure never
    stops the rest.  Returns the records in file order.
    """
    files = sorted(str(p) for p in Path(directory).glob("*.txt") if p.is_file())
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    if jobs == 1 or len(files) <= 1:
        records = [_batch_one(f, command, str(out_root)) for f in files]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(
                pool.map(_batch_one, files, [command] * len(files), [str(out_root)] * len(files))
            )
    lines = ["file, name, command, status, cost, wall_s, out_dir, error"]
    for path, rec in zip(files, records):
        cost = "" if rec.cost is None else f"{rec.cost:.12g}"
        err = (rec.error or "").replace(",", ";").replace("\n", " ")
        lines.append(
            f"{Path(path).name}, {rec.name}, {rec.command}, {rec.status}, "
            f"{cost}, {rec.wall_s:.3f}, {rec.out_dir}, {err}"
        )
    (out_root / "index.csv").write_text("\n".join(lines) + "\n")
    return records
