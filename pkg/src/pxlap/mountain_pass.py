"""Path-deformation mountain-pass search on the floor-truncated functional.

The path starts as the segment from the local minimizer ``utilde`` to a
low-energy peak field supported in D1. Each sweep lowers the highest path
node along the H^1-preconditioned steepest-descent direction, then re-spaces
the path by arclength. Periodically a Newton polish is attempted from the
current path maximum; the polished point is the reported critical point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energy as en
from .energy import EnergyVariant
from .mesh import Grid
from .solvers import SolverError, SolverParams, _embed, _sup, full_hessian, newton_root

log = logging.getLogger(__name__)

FOUND, COLLAPSED, MAXITER = "Found", "PathCollapsed", "MaxIter"


@dataclass(frozen=True)
class MPParams:
    path_nodes: int = 41
    tol: float = 1e-6
    max_outer: int = 5000
    polish_every: int = 25
    collapse_tol: float = 1e-6
    distinct_rel: float = 1e-2
    peak_drop: float = 1.0
    keep_snapshots: bool = False


@dataclass
class MPOutcome:
    status: str
    critical_point: np.ndarray | None
    level: float
    residual_norm: float
    base_level: float
    path_max_level: float
    iterations: int
    endpoints: tuple = ()
    path_snapshots: list = field(default_factory=list)


def _stiffness(grid: Grid) -> sp.csc_matrix:
    """Interior Dirichlet Laplacian used as the descent metric."""
    cell = float(np.prod(grid.h))
    K = grid.Dn.T @ sp.diags(np.full(grid.n_edges, cell)) @ grid.Dn
    return en.interior_block(K, grid).tocsc()


def d1_bump(grid: Grid) -> np.ndarray:
    """First Dirichlet eigenfunction shape on a box inside the low D1 slab.

    The box spans the part of D1 below D2 along the first axis, shrunk by an
    eighth on each side, and the full transverse extent (shrunk likewise) in
    2D. Normalized to unit maximum.
    """
    if grid.d2_index is None:
        raise ValueError("grid has no D2 region")
    x = grid.points
    lo = np.array(grid.lo)
    hi = np.array(grid.hi)
    box_hi = hi.copy()
    box_hi[0] = grid.coords[0][grid.d2_index[0][0]]
    margin = (box_hi - lo) / 8
    blo, bhi = lo + margin, box_hi - margin
    w = np.ones(grid.n_nodes)
    for d in range(grid.dim):
        s = (x[:, d] - blo[d]) / (bhi[d] - blo[d])
        w *= np.where((s > 0) & (s < 1), np.sin(np.pi * np.clip(s, 0, 1)), 0.0)
    w[grid.boundary] = 0.0
    return w / np.max(w)


def default_peak(lam, utilde, u1, grid: Grid, drop: float = 1.0, max_doublings: int = 60):
    """``T * bump`` with T doubled until its energy sits ``drop`` below ``utilde``."""
    variant = EnergyVariant("Ghat", lam, lower=u1)
    target = en.energy(utilde, variant, grid) - drop
    w = d1_bump(grid)
    T = max(1.0, 2.0 * float(np.max(utilde)))
    for _ in range(max_doublings):
        if en.energy(T * w, variant, grid) < target:
            return T * w
        T *= 2.0
    raise ValueError("could not find a peak field below the minimizer's energy")


def _segments(path, K):
    diffs = np.diff(path, axis=0)
    return np.sqrt(np.maximum(np.einsum("ij,ij->i", diffs, (K @ diffs.T).T), 0.0))


def _arclength(path, K) -> float:
    return float(np.sum(_segments(path, K)))


def _reparametrize(path, K):
    """Equal-arclength resampling in the K-norm; endpoints are left untouched."""
    seg = _segments(path, K)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return path
    m = len(path)
    targets = np.linspace(0.0, s[-1], m)
    out = path.copy()
    idx = np.clip(np.searchsorted(s, targets[1:-1], side="right") - 1, 0, m - 2)
    span = np.where(seg[idx] > 0, seg[idx], 1.0)
    theta = (targets[1:-1] - s[idx]) / span
    out[1:-1] = (1 - theta)[:, None] * path[idx] + theta[:, None] * path[idx + 1]
    return out


def mountain_pass(lam, utilde, peak, u1, grid: Grid, mp: MPParams = MPParams(),
                  params: SolverParams = SolverParams()) -> MPOutcome:
    """Search for a mountain-pass critical point between ``utilde`` and ``peak``.

    ``u1`` is the floor of the truncation (the minimal solution at a smaller
    lambda). The outcome is ``Found`` when a polished point has residual at
    most ``mp.tol``, lies on or above the base level and differs from
    ``utilde``; ``PathCollapsed`` when the highest path energy falls to the
    base level; ``MaxIter`` otherwise.
    """
    variant = EnergyVariant("Ghat", lam, lower=u1)
    variant.check(grid)
    inner = grid.interior
    utilde = grid.check_field(utilde)
    peak = grid.check_field(peak)

    def E(x):
        return en.energy(_embed(grid, x), variant, grid)

    def R(x):
        return en.residual(_embed(grid, x), variant, grid)[inner]

    def J(x):
        return full_hessian(grid, x, variant, params.reg)

    K = _stiffness(grid)
    Kfac = spla.splu(K)
    m = mp.path_nodes
    t = np.linspace(0.0, 1.0, m)[:, None]
    path = (1 - t) * utilde[inner] + t * peak[inner]
    start, end = path[0].copy(), path[-1].copy()
    base = E(start)
    if E(end) >= base:
        raise ValueError("peak energy must lie below the minimizer's energy")
    energies = np.array([E(x) for x in path])
    distinct = mp.distinct_rel * _sup(utilde)
    snapshots = []
    step = 1.0
    best = None

    def outcome(status, v, level, rnorm, it):
        return MPOutcome(status, None if v is None else _embed(grid, v), level, rnorm, base,
                         float(energies.max()), it, (_embed(grid, path[0]), _embed(grid, path[-1])),
                         snapshots)

    def try_polish(x):
        try:
            v, rnorm, _ = newton_root(R, J, x.copy(), mp.tol * 1e-2, params)
        except SolverError:
            return None
        if _sup(v - start) <= distinct or E(v) < base - 1e-8:
            return None
        return v, rnorm

    for it in range(1, mp.max_outer + 1):
        k = 1 + int(np.argmax(energies[1:-1]))
        top = energies[k]
        if top - base <= mp.collapse_tol:
            return outcome(COLLAPSED, path[k], top, _sup(R(path[k])), it)
        g = R(path[k])
        rnorm = _sup(g)
        if rnorm <= mp.tol or it % mp.polish_every == 0:
            best = try_polish(path[k])
            if best is not None:
                v, rnorm_v = best
                return outcome(FOUND, v, E(v), rnorm_v, it)
        d = -Kfac.solve(g)
        slope = float(g @ d)
        # keep the moved node within half a path segment so the ridge stays resolved
        dnorm = np.sqrt(max(-slope, 0.0))
        tau_cap = 0.5 * _arclength(path, K) / (m - 1) / dnorm if dnorm > 0 else 1.0
        tau = min(2.0 * step, tau_cap)
        while tau > 1e-14:
            trial = path[k] + tau * d
            if E(trial) <= top + 1e-4 * tau * slope:
                break
            tau *= 0.5
        step = tau
        path[k] = path[k] + tau * d
        path = _reparametrize(path, K)
        path[0], path[-1] = start, end
        energies = np.array([E(x) for x in path])
        if mp.keep_snapshots and it % 100 == 0:
            snapshots.append(path.copy())
    k = 1 + int(np.argmax(energies[1:-1]))
    return outcome(MAXITER, path[k], energies[k], _sup(R(path[k])), mp.max_outer)
