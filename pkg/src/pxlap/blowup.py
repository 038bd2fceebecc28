"""Semi-implicit heat-plus-source stepping on an interior D1 box.

Implicit diffusion, explicit source ``lam w^q``; the step is halved whenever
a step would grow the sup-norm by more than ``max_growth``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Grid, box_subgrid

BLEW_UP, BOUNDED, INCONCLUSIVE = "BlewUp", "Bounded", "Inconclusive"


@dataclass
class BlowupReport:
    blew_up: bool
    t_event: float | None
    final_time: float
    status: str
    times: list = field(default_factory=list)
    supnorm_trace: list = field(default_factory=list)


def interior_d1_box(grid: Grid):
    """Node-index box strictly inside D1 below D2 along the first axis."""
    if grid.d2_index is None:
        raise ValueError("grid has no D2 region")
    ka = grid.d2_index[0][0]
    lo0 = max(1, ka // 8)
    hi0 = ka - max(1, ka // 8)
    box = [(lo0, hi0)]
    for d in range(1, grid.dim):
        n = grid.shape[d] - 1
        box.append((max(1, n // 8), n - max(1, n // 8)))
    if any(kb - ka_ < 2 for ka_, kb in box):
        raise ValueError("grid too coarse for an interior D1 box")
    return tuple(box)


def laplacian_stiffness(grid: Grid) -> sp.csr_matrix:
    """Interior block of the exponent-2 stiffness matrix (weak -Delta)."""
    cell = float(np.prod(grid.h))
    K = grid.Dn.T @ sp.diags(np.full(grid.n_edges, cell)) @ grid.Dn
    inner = grid.interior
    return K.tocsr()[inner][:, inner]


def principal_eigenvalue(grid: Grid) -> float:
    """Smallest Dirichlet eigenvalue of the discrete Laplacian (strong form)."""
    # tensor-product grid: eigenvalues separate per axis
    return float(sum(4.0 / h ** 2 * np.sin(np.pi / (2 * (n - 1))) ** 2
                     for h, n in zip(grid.h, grid.shape)))


def parabolic_blowup(lam, z0, grid: Grid, q=None, dt0=1e-4, t_max=10.0, threshold=1e6,
                     max_growth=0.1, dt_min=1e-14, max_steps=2_000_000) -> BlowupReport:
    """Integrate ``w_t - Delta w = lam w^q`` with zero Dirichlet data on ``grid``.

    ``grid`` is the box grid itself (exponent 2 on every edge, see
    :func:`box_subgrid`); ``z0`` is the initial field on it.
    """
    q = grid.q if q is None else q
    if dt0 <= 0 or t_max <= 0 or threshold <= 0:
        raise ValueError("dt0, t_max and threshold must be positive")
    inner = grid.interior
    w = np.asarray(z0, float)[inner].copy()
    if np.any(w < 0):
        raise ValueError("initial data must be nonnegative")
    K = laplacian_stiffness(grid) / grid.node_measure
    eye = sp.identity(inner.size, format="csc")
    solvers = {}

    def step(w, dt):
        if dt not in solvers:
            solvers[dt] = spla.splu((eye + dt * K).tocsc())
        return solvers[dt].solve(w + dt * lam * np.maximum(w, 0.0) ** q)

    t = 0.0
    dt = dt0
    sup = float(np.max(w)) if w.size else 0.0
    times, sups = [t], [sup]
    steps = 0
    while t < t_max and steps < max_steps:
        h = min(dt, t_max - t)
        w_new = step(w, h)
        sup_new = float(np.max(w_new))
        if sup > 0 and sup_new > (1 + max_growth) * sup:
            dt *= 0.5
            if dt < dt_min:
                return BlowupReport(False, t, t, INCONCLUSIVE, times, sups)
            continue
        w, sup, t = w_new, sup_new, t + h
        steps += 1
        times.append(t)
        sups.append(sup)
        if sup > threshold:
            return BlowupReport(True, t, t, BLEW_UP, times, sups)
    return BlowupReport(False, None, t, BOUNDED, times, sups)


def blowup_box_grid(grid: Grid):
    """Exponent-2 grid on the default interior D1 box, with its parent indices."""
    return box_subgrid(grid, interior_d1_box(grid), exponent=2.0)
