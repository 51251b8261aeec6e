"""Polyhedral geometry: active sets, exact projection, normal-cone decomposition.

A polyhedron is a finite intersection of halfspaces ``{x : <a_j, x> <= c_j}``
kept as a dense normal matrix.  Projections are computed exactly by
active-subset enumeration with KKT verification; a projected Gauss-Seidel
iteration on the dual covers systems too large to enumerate.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import nnls


class ConstraintViolationError(ValueError):
    """A point lies outside the polyhedron beyond the activity tolerance."""

    def __init__(self, index: int, residual: float):
        self.index = int(index)
        self.residual = float(residual)
        super().__init__(
            f"constraint {self.index} violated by {self.residual:.3e}"
        )


class InfeasiblePolyhedronError(ValueError):
    """No KKT point exists: the polyhedron is empty."""


class CoincidentCentersError(ValueError):
    """Disk-gap gradient undefined: the two centers coincide."""


@dataclass(frozen=True)
class HalfSpace:
    """Single constraint ``<normal, x> <= offset``."""

    normal: np.ndarray
    offset: float


class Polyhedron:
    """Intersection of ``s`` halfspaces in ``R^m``.

    Parameters
    ----------
    normals : (s, m) array_like
        Constraint normals, one per row.  Rows must be nonzero.
    offsets : (s,) array_like
        Right-hand sides of ``<a_j, x> <= c_j``.
    dim : int, optional
        Ambient dimension; only needed when ``s == 0``.
    """

    __slots__ = ("normals", "offsets")

    def __init__(self, normals, offsets, dim: int | None = None):
        normals = np.asarray(normals, dtype=float)
        offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
        if normals.size == 0:
            if dim is None and normals.ndim == 2:
                dim = normals.shape[1]
            if dim is None:
                raise ValueError("constraint-free polyhedron needs an explicit dim")
            normals = np.zeros((0, int(dim)))
        normals = np.atleast_2d(normals)
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError("normals and offsets disagree in count")
        if normals.shape[0] and np.any(np.linalg.norm(normals, axis=1) == 0.0):
            raise ValueError("zero normal vector")
        self.normals = normals
        self.offsets = offsets

    @property
    def s(self) -> int:
        return self.normals.shape[0]

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @classmethod
    def from_halfspaces(cls, halfspaces, dim: int | None = None) -> "Polyhedron":
        if halfspaces:
            return cls(
                np.array([h.normal for h in halfspaces], dtype=float),
                np.array([h.offset for h in halfspaces], dtype=float),
            )
        return cls(np.zeros((0, 0 if dim is None else dim)), np.zeros(0), dim=dim)

    @property
    def halfspaces(self) -> list[HalfSpace]:
        return [
            HalfSpace(self.normals[j].copy(), float(self.offsets[j]))
            for j in range(self.s)
        ]

    def residuals(self, x) -> np.ndarray:
        """Signed violations ``<a_j, x> - c_j`` (nonpositive means satisfied)."""
        return self.normals @ np.asarray(x, dtype=float) - self.offsets

    def contains(self, x, tol: float = 1e-9) -> bool:
        if self.s == 0:
            return True
        return bool(np.all(self.residuals(x) <= tol * (1.0 + np.abs(self.offsets))))


@dataclass(frozen=True)
class ActiveSet:
    """0-based indices of constraints active at a point, plus the band used."""

    indices: tuple
    eps_act: float

    def __len__(self) -> int:
        return len(self.indices)


def default_eps_act(offsets) -> np.ndarray:
    """Per-constraint activity band ``1e-9 * (1 + |c_j|)``."""
    return 1e-9 * (1.0 + np.abs(np.asarray(offsets, dtype=float)))


def active_indices(poly: Polyhedron, x, eps_act=None) -> ActiveSet:
    """Constraints within ``eps_act`` of equality at ``x``.

    Raises
    ------
    ConstraintViolationError
        If some constraint is violated by more than its band.
    """
    if poly.s == 0:
        return ActiveSet((), 0.0)
    resid = poly.residuals(x)
    if eps_act is None:
        eps = default_eps_act(poly.offsets)
    else:
        eps = np.broadcast_to(np.asarray(eps_act, dtype=float), resid.shape)
    if np.any(resid > eps):
        worst = int(np.argmax(resid - eps))
        raise ConstraintViolationError(worst, resid[worst])
    idx = np.nonzero(resid >= -eps)[0]
    return ActiveSet(tuple(int(j) for j in idx), float(np.max(eps)))


@dataclass(frozen=True)
class LicqReport:
    independent: bool
    rank: int
    count: int
    threshold: float


def licq_check(poly: Polyhedron, active: ActiveSet) -> LicqReport:
    """Rank test (SVD) of the active normals."""
    rows = poly.normals[list(active.indices)]
    count = rows.shape[0]
    if count == 0:
        return LicqReport(True, 0, 0, 0.0)
    threshold = 1e-10 * float(np.max(np.linalg.norm(rows, axis=1)))
    svals = np.linalg.svd(rows, compute_uv=False)
    rank = int(np.sum(svals > threshold))
    return LicqReport(rank == count, rank, count, threshold)


def _feasibility_tolerance(normals, offsets, z) -> np.ndarray:
    row_norms = np.sqrt((normals * normals).sum(axis=1))
    scale = 1.0 + np.abs(offsets) + row_norms * (1.0 + float(np.sqrt(z @ z)))
    return 1e-11 * scale


def _kkt_candidate(normals, offsets, z, subset):
    rows = normals[list(subset)]
    gram = rows @ rows.T
    rhs = rows @ z - offsets[list(subset)]
    if len(subset) == 1:
        g = gram[0, 0]
        mu = rhs / g if g > 0.0 else rhs
    else:
        try:
            mu = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            mu = None
        if mu is None or not np.all(np.isfinite(mu)) or (
            float(np.abs(gram @ mu - rhs).max())
            > 1e-9 * (1.0 + float(np.abs(rhs).max()))
        ):
            # Singular or ill-conditioned subset: minimum-norm multipliers.
            mu, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    return z - rows.T @ mu, mu


def _kkt_verified(normals, offsets, y, mu_full, feas_tol) -> bool:
    resid = normals @ y - offsets
    if (resid > feas_tol).any():
        return False
    mu_scale = 1.0 + float(np.abs(mu_full).max(initial=0.0))
    if (mu_full < -1e-9 * mu_scale).any():
        return False
    return bool((np.abs(mu_full * resid) <= feas_tol * mu_scale).all())


def _subset_candidates(s: int, violated: tuple):
    if violated:
        yield violated
    for size in range(1, s + 1):
        yield from combinations(range(s), size)


def _project_enumerate(normals, offsets, z, feas_tol):
    s = normals.shape[0]
    resid = normals @ z - offsets
    violated = tuple(int(j) for j in np.nonzero(resid > feas_tol)[0])
    first = True
    for subset in _subset_candidates(s, violated):
        if not first and subset == violated:
            continue
        first = False
        y, mu = _kkt_candidate(normals, offsets, z, subset)
        mu_full = np.zeros(s)
        mu_full[list(subset)] = mu
        if _kkt_verified(normals, offsets, y, mu_full, feas_tol):
            return y, np.maximum(mu_full, 0.0)
    raise InfeasiblePolyhedronError("no feasible KKT point over any active subset")


def _project_dual_gs(normals, offsets, z, feas_tol, max_sweeps: int = 20000):
    # Projected Gauss-Seidel on the dual QP; escape hatch for large s.
    gram = normals @ normals.T
    rhs = normals @ z - offsets
    diag = np.clip(np.diag(gram), 1e-300, None)
    mu = np.zeros(len(rhs))
    blow_up = 1e14 * (1.0 + float(np.linalg.norm(z)) + float(np.abs(offsets).max(initial=0.0)))
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(len(rhs)):
            step = (gram[j] @ mu - rhs[j]) / diag[j]
            new = max(0.0, mu[j] - step)
            delta = max(delta, abs(new - mu[j]))
            mu[j] = new
        if np.max(mu, initial=0.0) > blow_up:
            raise InfeasiblePolyhedronError("dual iteration diverged: empty polyhedron")
        if delta <= 1e-15 * (1.0 + float(np.abs(mu).max(initial=0.0))):
            break
    # Polish on the support so equalities hold to solver precision.
    support = tuple(int(j) for j in np.nonzero(mu > 1e-12 * (1.0 + mu.max()))[0])
    if support:
        y, mu_s = _kkt_candidate(normals, offsets, z, support)
        mu_full = np.zeros(len(rhs))
        mu_full[list(support)] = mu_s
        if _kkt_verified(normals, offsets, y, mu_full, feas_tol):
            return y, np.maximum(mu_full, 0.0)
    y = z - normals.T @ mu
    if _kkt_verified(normals, offsets, y, mu, 10.0 * feas_tol):
        return y, mu
    raise InfeasiblePolyhedronError("dual iteration failed to certify a KKT point")


def _project_halfspaces(normals, offsets, z, method: str = "auto"):
    """Core projector shared by the public wrapper and the simulator."""
    s = normals.shape[0]
    z = np.asarray(z, dtype=float)
    if s == 0:
        return z.copy(), np.zeros(0)
    feas_tol = _feasibility_tolerance(normals, offsets, z)
    if np.all(normals @ z - offsets <= feas_tol):
        return z.copy(), np.zeros(s)
    if method == "dual" or (method == "auto" and s > 12):
        return _project_dual_gs(normals, offsets, z, feas_tol)
    return _project_enumerate(normals, offsets, z, feas_tol)


def project_polyhedron(poly: Polyhedron, z, method: str = "auto"):
    """Euclidean projection of ``z`` onto the polyhedron.

    Returns
    -------
    y : ndarray
        The projected point.
    mu : ndarray, shape (s,)
        KKT multipliers: ``y = z - normals.T @ mu``, ``mu >= 0``, and
        ``mu_j > 0`` only on constraints active at ``y``.

    Raises
    ------
    InfeasiblePolyhedronError
        If no KKT point is found (empty polyhedron).
    """
    if method not in ("auto", "enumerate", "dual"):
        raise ValueError(f"unknown method {method!r}")
    return _project_halfspaces(poly.normals, poly.offsets, z, method)


@dataclass(frozen=True)
class DecomposeResult:
    """Nonnegative combination of active normals approximating ``w``."""

    eta: np.ndarray
    residual: float

    def in_cone(self, tol: float = 1e-9) -> bool:
        return self.residual <= tol


def normal_cone_decompose(poly: Polyhedron, x, w, eps_act=None) -> DecomposeResult:
    """Least-squares ``w ~ sum eta_j a_j`` over the normals active at ``x``.

    The residual is the distance from ``w`` to the normal cone generated by
    the active constraints; a residual above tolerance means ``w`` is not in
    the cone.
    """
    w = np.asarray(w, dtype=float)
    active = active_indices(poly, x, eps_act)
    eta = np.zeros(poly.s)
    if not active.indices:
        return DecomposeResult(eta, float(np.linalg.norm(w)))
    cols = poly.normals[list(active.indices)].T
    coeff, rnorm = nnls(cols, w)
    eta[list(active.indices)] = coeff
    return DecomposeResult(eta, float(rnorm))


def disk_gap(x, i: int, j: int, R: float):
    """Euclidean clearance ``|p_i - p_j| - 2R`` and its gradient in ``x``.

    ``x`` interleaves planar positions as ``(x_1, y_1, x_2, y_2, ...)``.
    """
    x = np.asarray(x, dtype=float)
    pi = x[2 * i : 2 * i + 2]
    pj = x[2 * j : 2 * j + 2]
    diff = pi - pj
    dist = float(np.linalg.norm(diff))
    if dist <= 1e-13 * (1.0 + float(np.linalg.norm(x))):
        raise CoincidentCentersError(f"robots {i} and {j} share a center")
    grad = np.zeros_like(x)
    grad[2 * i : 2 * i + 2] = diff / dist
    grad[2 * j : 2 * j + 2] = -diff / dist
    return dist - 2.0 * R, grad
