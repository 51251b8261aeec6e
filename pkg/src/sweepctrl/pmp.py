"""Optimality machinery: contact closed forms, adjoint construction, certification.

A certificate packages the multiplier data of the discrete maximum principle:
terminal multiplier ``eta_T``, adjoint ``p``, measure atoms ``gamma`` split
into a nonnegative and a signed part, and the shifted adjoint ``q``.
``certify`` scores a trajectory/certificate pair against the nine first-order
conditions and reports one residual per condition; it never repairs either
input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .model import ProblemSpec, corridor_polyhedron, drift
from .sweep import Trajectory

CONDITION_LABELS = {
    "c1_primal": "velocity equals drift minus contact forces",
    "c2_slackness": "contact coefficients vanish off contact",
    "c3_orthogonality": "q orthogonal to pushing normals",
    "c4_adjoint": "p constant between measure jumps",
    "c5_measure": "q consistent with p and the measure",
    "c6_maximization": "controls maximize the Hamiltonian",
    "c7_transversality": "terminal adjoint matches the cost gradient",
    "c8_cone": "terminal multiplier lies in the normal cone",
    "c9_support": "measure supported on contact times",
}


class MisalignedContactError(ValueError):
    """Contact closed form needs both robots of a pair on one heading."""


@dataclass
class Certificate:
    """Multiplier data attached to one discrete trajectory."""

    lam: float
    p_nodes: np.ndarray     # (K+1, 2n)
    q_nodes: np.ndarray     # (K+1, 2n)
    gamma_pos: np.ndarray   # (K+1, s) nonnegative atoms
    gamma_zero: np.ndarray  # (K+1, s) signed atoms
    eta_T: np.ndarray       # (s,)

    @property
    def gamma_atoms(self) -> np.ndarray:
        return self.gamma_pos + self.gamma_zero


@dataclass
class ConditionReport:
    """Residuals of the nine conditions plus the pass/fail verdicts."""

    residuals: dict
    tol: float
    nontriviality: float

    @property
    def passed(self) -> dict:
        out = {key: value <= self.tol for key, value in self.residuals.items()}
        out["c9_support"] = out["c9_support"] and self.nontriviality > 1e-12
        return out

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def lines(self) -> list[str]:
        rows = []
        verdicts = self.passed
        for key in sorted(self.residuals):
            rows.append(f"{key} = {self.residuals[key]:.6e}")
            rows.append(f"{key}_pass = {'yes' if verdicts[key] else 'no'}")
        rows.append(f"tol = {self.tol:.6e}")
        rows.append(f"nontriviality = {self.nontriviality:.6e}")
        rows.append(f"ok = {'yes' if self.ok else 'no'}")
        return rows


def _require_frozen(spec: ProblemSpec, what: str):
    if spec.theta_mode != "frozen":
        raise ValueError(f"{what} requires frozen headings")


def _angular_gap(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * np.pi)
    return min(d, 2.0 * np.pi - d)


def eta_closed_form(spec: ProblemSpec, u, contact) -> np.ndarray:
    """Contact coefficients for flagged pairs at the initial state.

    Each flagged pair must share a heading; the value is the projection
    multiplier ``max(0, <a_j, drift>) / |a_j|^2``, which for a common
    heading reduces to ``(s_j u_j - s_{j+1} u_{j+1}) cos(theta) / 2`` with
    the rear robot pushing.
    """
    _require_frozen(spec, "contact closed form")
    contact = np.asarray(contact, dtype=bool)
    fleet = spec.fleet
    if contact.shape != (fleet.n - 1,):
        raise ValueError("one contact flag per consecutive pair required")
    thetas = fleet.thetas0
    corr = corridor_polyhedron(fleet)
    g = drift(fleet.x0, u, spec)
    eta = np.zeros(fleet.n - 1)
    for j in np.nonzero(contact)[0]:
        if _angular_gap(thetas[j], thetas[j + 1]) > 1e-9:
            raise MisalignedContactError(
                f"pair ({j}, {j + 1}) flagged in contact with distinct headings"
            )
        row = corr.normals[j]
        eta[j] = max(0.0, float(row @ g) / float(row @ row))
    return eta


def trajectory_closed_form(spec: ProblemSpec, u, m: int) -> Trajectory:
    """Exact piecewise-linear path under a constant control vector.

    Integrates the corridor dynamics event by event (each event is a new
    pair entering contact; under constant controls and frozen headings no
    pushing pair releases) and samples the result on the dyadic grid.
    """
    from .sweep import Grid  # local import keeps module load order simple

    _require_frozen(spec, "closed-form trajectory")
    u = np.asarray(u, dtype=float)
    fleet = spec.fleet
    if u.shape != (fleet.n,):
        raise ValueError("constant control vector required")
    if not spec.controls.contains(u):
        raise ValueError("control vector leaves the admissible box")
    corr = corridor_polyhedron(fleet)
    A, c = corr.normals, corr.offsets
    g = drift(fleet.x0, u, spec)
    tol = 1e-9 * (1.0 + np.abs(c))
    horizon = spec.horizon

    t = 0.0
    x = fleet.x0
    slack = c - A @ x
    if np.any(slack < -tol):
        raise ValueError("initial state violates the separation ordering")
    pieces = []  # (t_start, x_start, velocity, eta)
    events = 0
    while t < horizon * (1.0 - 1e-15):
        slack = c - A @ x
        act = np.nonzero(slack <= tol)[0]
        eta = np.zeros(corr.s)
        if act.size:
            from .geometry import _project_halfspaces

            vel, mu = _project_halfspaces(A[act], np.zeros(act.size), g)
            eta[act] = mu
        else:
            vel = g.copy()
        rates = A @ vel
        t_next = horizon
        for j in range(corr.s):
            if j in act or rates[j] <= 1e-14:
                continue
            hit = t + slack[j] / rates[j]
            if hit < t_next - 1e-13:
                t_next = max(hit, t)
        pieces.append((t, x.copy(), vel, eta))
        x = x + (t_next - t) * vel
        t = t_next
        events += 1
        if events > 8 * corr.s + 8:
            raise RuntimeError("event cascade failed to terminate")

    grid = Grid(horizon, m)
    times = grid.times()
    starts = np.array([p[0] for p in pieces])
    K = grid.num_cells
    n = fleet.n
    states = np.empty((K + 1, 2 * n))
    etas = np.empty((K, n - 1))
    for k, tk in enumerate(times):
        idx = int(np.searchsorted(starts, tk, side="right") - 1)
        idx = max(idx, 0)
        t0, x0, vel, _ = pieces[idx]
        states[k] = x0 + (tk - t0) * vel
    midpoints = times[:-1] + 0.5 * grid.h
    for k, tm in enumerate(midpoints):
        idx = int(np.searchsorted(starts, tm, side="right") - 1)
        etas[k] = pieces[max(idx, 0)][3]
    velocities = np.diff(states, axis=0) / grid.h
    controls = np.tile(u, (K, 1))
    return Trajectory(grid, states, controls, etas, velocities)


def adjoint_backward(
    traj: Trajectory,
    spec: ProblemSpec,
    lam: float = 1.0,
    eps_contact: float = 1e-3,
) -> Certificate:
    """Build multiplier data for a trajectory by backward construction.

    The terminal multiplier is the nonnegative least-squares fit of
    ``-lam x(T)`` over the normals active at ``T`` (transversality then
    holds by construction), ``p`` is constant (frozen headings make the
    drift state-independent), and measure atoms are inserted backward only
    where a pushing arc leaves ``q`` non-orthogonal to its normal.  Atom
    support is restricted to contact nodes; an unplaceable correction is
    left for ``certify`` to report rather than patched elsewhere.
    """
    _require_frozen(spec, "adjoint construction")
    corr = corridor_polyhedron(spec.fleet)
    A, c = corr.normals, corr.offsets
    s = corr.s
    K = traj.grid.num_cells
    x_T = traj.states[-1]
    band = eps_contact * (1.0 + np.abs(c))

    slack_nodes = c - traj.states @ A.T  # (K+1, s)
    act_T = np.nonzero(slack_nodes[-1] <= band)[0]
    eta_T = np.zeros(s)
    target = -lam * x_T
    if act_T.size:
        coeff, _ = nnls(A[act_T].T, target)
        eta_T[act_T] = coeff
    p = target - A.T @ eta_T

    eta = traj.etas
    eta_band = 1e-8 * (1.0 + float(np.max(eta, initial=0.0)))
    gamma = np.zeros((K + 1, s))
    running = np.zeros(s)  # total atom mass strictly after the current cell
    p_scale = 1.0 + float(np.abs(p).max(initial=0.0))
    for k in range(K - 1, -1, -1):
        pushing = np.nonzero(eta[k] > eta_band)[0]
        if pushing.size == 0:
            continue
        q_k = p - A.T @ running
        viol = A[pushing] @ q_k
        if float(np.abs(viol).max()) <= 1e-12 * p_scale:
            continue
        support = np.nonzero(slack_nodes[k + 1] <= band)[0]
        if support.size == 0:
            continue  # no admissible atom node; shows up as a c3 residual
        block = A[pushing] @ A[support].T
        delta, *_ = np.linalg.lstsq(block, viol, rcond=None)
        gamma[k + 1, support] += delta
        running[support] += delta

    suffix = np.zeros((K + 2, s))
    suffix[:-1] = np.cumsum(gamma[::-1], axis=0)[::-1]
    q_nodes = p[None, :] - suffix[1:] @ A
    p_nodes = np.tile(p, (K + 1, 1))

    interior = _interior_arc_nodes(slack_nodes, eta, band, eta_band)
    gamma_pos = np.zeros_like(gamma)
    gamma_zero = np.zeros_like(gamma)
    for k in range(K + 1):
        if not np.any(gamma[k]):
            continue
        if interior[k]:
            gamma_zero[k] = gamma[k]
        else:
            gamma_pos[k] = np.maximum(gamma[k], 0.0)
            gamma_zero[k] = np.minimum(gamma[k], 0.0)
    return Certificate(float(lam), p_nodes, q_nodes, gamma_pos, gamma_zero, eta_T)


def _interior_arc_nodes(slack_nodes, eta, band, eta_band) -> np.ndarray:
    """Nodes strictly inside a pushing arc (both adjacent cells push)."""
    K = eta.shape[0]
    cell_push = np.zeros(K, dtype=bool)
    for k in range(K):
        act = (slack_nodes[k] <= band) & (slack_nodes[k + 1] <= band)
        cell_push[k] = bool(np.any(act) and np.all(eta[k][act] > eta_band))
    interior = np.zeros(K + 1, dtype=bool)
    interior[1:K] = cell_push[:-1] & cell_push[1:]
    return interior


def _cell_drifts(spec: ProblemSpec, traj: Trajectory) -> np.ndarray:
    states = traj.states[:-1]
    controls = traj.controls
    speeds = spec.fleet.speeds
    if spec.theta_mode == "frozen":
        cos_t = np.cos(spec.fleet.thetas0)[None, :]
        sin_t = np.sin(spec.fleet.thetas0)[None, :]
    else:
        px = states[:, 0::2]
        py = states[:, 1::2]
        r = np.hypot(px, py)
        safe = np.where(r > 1e-12, r, 1.0)
        near = r > 1e-12
        cos_t = np.where(near, px / safe, 0.0)
        sin_t = np.where(near, py / safe, 0.0)
    speed = speeds[None, :] * controls
    out = np.empty_like(states)
    out[:, 0::2] = -speed * cos_t
    out[:, 1::2] = -speed * sin_t
    return out


def _cell_headings(spec: ProblemSpec, traj: Trajectory):
    if spec.theta_mode == "frozen":
        K = traj.grid.num_cells
        cos_t = np.tile(np.cos(spec.fleet.thetas0), (K, 1))
        sin_t = np.tile(np.sin(spec.fleet.thetas0), (K, 1))
        return cos_t, sin_t
    states = traj.states[:-1]
    px = states[:, 0::2]
    py = states[:, 1::2]
    r = np.hypot(px, py)
    safe = np.where(r > 1e-12, r, 1.0)
    near = r > 1e-12
    return np.where(near, px / safe, 0.0), np.where(near, py / safe, 0.0)


def maximization_residual(traj: Trajectory, cert: Certificate, spec: ProblemSpec) -> np.ndarray:
    """Per-cell Hamiltonian gap ``max_{v in U} <psi, v> - <psi, u_k>``.

    ``psi_i = -s_i (cos th_i q_{2i} + sin th_i q_{2i+1})`` is the control
    coefficient of the Hamiltonian; the gap is zero exactly when the applied
    control maximizes it over the box.
    """
    K = traj.grid.num_cells
    if cert.q_nodes.shape[0] != K + 1:
        raise ValueError("certificate grid does not match the trajectory")
    cos_t, sin_t = _cell_headings(spec, traj)
    q = cert.q_nodes[:K]
    psi = -spec.fleet.speeds[None, :] * (cos_t * q[:, 0::2] + sin_t * q[:, 1::2])
    hi = spec.controls.as_array()[None, :]
    best = np.sum(np.maximum(psi * hi, 0.0), axis=1)
    applied = np.sum(psi * traj.controls, axis=1)
    return np.maximum(best - applied, 0.0)


def certify(
    traj: Trajectory,
    cert: Certificate,
    spec: ProblemSpec,
    tol: float | None = None,
    eps_contact: float = 1e-3,
) -> ConditionReport:
    """Score the nine first-order conditions for a trajectory/certificate pair.

    The default tolerance is ``max(1e-8, 10 h)``: discretization error in
    the multipliers scales with the step, exact data certifies to near
    machine precision.
    """
    _require_frozen(spec, "certification")
    K = traj.grid.num_cells
    h = traj.grid.h
    if cert.q_nodes.shape[0] != K + 1 or cert.p_nodes.shape[0] != K + 1:
        raise ValueError("certificate grid does not match the trajectory")
    if tol is None:
        tol = max(1e-8, 10.0 * h)

    corr = corridor_polyhedron(spec.fleet)
    A, c = corr.normals, corr.offsets
    band = eps_contact * (1.0 + np.abs(c))
    slack_nodes = c - traj.states @ A.T
    eta = traj.etas
    eta_band = 1e-8 * (1.0 + float(np.max(eta, initial=0.0)))
    x_T = traj.states[-1]
    lam = cert.lam

    # (1) primal representation of the velocity.
    defect = traj.velocities - _cell_drifts(spec, traj) + eta @ A
    c1 = float(np.max(np.linalg.norm(defect, axis=1), initial=0.0))

    # (2) complementary slackness: eta only at contact, eta_T only active at T.
    inactive = (slack_nodes[:-1] > band) & (slack_nodes[1:] > band)
    c2 = float(np.max(eta[inactive], initial=0.0))
    idle_T = slack_nodes[-1] > band
    c2 = max(c2, float(np.max(cert.eta_T[idle_T], initial=0.0)))

    # (3) q orthogonal to each pushing normal.
    qa = np.abs(cert.q_nodes[:K] @ A.T)
    pushing = eta > eta_band
    c3 = float(np.max(qa[pushing], initial=0.0))

    # (4) p constant between jumps (frozen headings: zero drift gradient).
    c4 = float(np.max(np.abs(np.diff(cert.p_nodes, axis=0)), initial=0.0)) / h

    # (5) q agrees with p minus the remaining measure mass.
    gamma = cert.gamma_atoms
    suffix = np.zeros((K + 2, corr.s))
    suffix[:-1] = np.cumsum(gamma[::-1], axis=0)[::-1]
    q_expected = cert.p_nodes - suffix[1:] @ A
    c5 = float(np.max(np.abs(q_expected - cert.q_nodes), initial=0.0))

    # (6) Hamiltonian maximization.
    c6 = float(np.max(maximization_residual(traj, cert, spec), initial=0.0))

    # (7) transversality at T.
    c7 = float(np.linalg.norm(cert.p_nodes[-1] + lam * x_T + A.T @ cert.eta_T))

    # (8) eta_T in the normal cone at x(T).
    act_T = np.nonzero(slack_nodes[-1] <= band)[0]
    w = A.T @ cert.eta_T
    if act_T.size:
        _, resid = nnls(A[act_T].T, w)
        c8 = float(resid)
    else:
        c8 = float(np.linalg.norm(w))
    c8 = max(c8, float(np.max(-cert.eta_T, initial=0.0)))

    # (9) measure support on contact nodes; positive part off arc interiors.
    atom_size = np.abs(gamma).sum(axis=1)
    off_contact = np.all(slack_nodes > band, axis=1)
    c9 = float(np.max(atom_size[off_contact], initial=0.0))
    interior = _interior_arc_nodes(slack_nodes, eta, band, eta_band)
    c9 = max(c9, float(np.abs(cert.gamma_pos[interior]).sum()))
    variation = float(np.abs(cert.gamma_pos).sum() + np.abs(cert.gamma_zero).sum())
    nontriviality = max(
        abs(lam), float(np.abs(cert.p_nodes[-1]).max(initial=0.0)), variation
    )

    residuals = {
        "c1_primal": c1,
        "c2_slackness": c2,
        "c3_orthogonality": c3,
        "c4_adjoint": c4,
        "c5_measure": c5,
        "c6_maximization": c6,
        "c7_transversality": c7,
        "c8_cone": c8,
        "c9_support": c9,
    }
    return ConditionReport(residuals, float(tol), nontriviality)
