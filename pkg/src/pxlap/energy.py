"""Discrete energies, residuals, Jacobians and norms.

All four functionals share the gradient part

    sum_e w_e |g_e|^{p_e} / p_e

over grid edges (``p_e`` is 2 in D1 and p in D2) and differ only in the
zero-order term ``lam * sum_i m * N(x_i, u_i)``, evaluated with nodal
quadrature at interior nodes. The residual is the exact gradient of the
discrete energy, so flux continuity across the interface is built in.

Variant tags and their nonlinearity ``n = dN/ds``:

========  ====================================
``F``     ``|s|^{q-1} s``
``G``     ``max(s, 0)^q``
``Gtilde`` ``s^q`` clamped to ``[u1^q, u2^q]``
``Ghat``  ``s^q`` for ``s > u1``, else ``u1^q``
========  ====================================
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Grid

VARIANTS = ("F", "G", "Gtilde", "Ghat")
DEFAULT_REG = 1e-8


@dataclass(frozen=True, eq=False)
class EnergyVariant:
    """Which functional to evaluate, at which lambda, with truncation data."""

    tag: str
    lam: float
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ValueError(f"unknown variant {self.tag!r}; expected one of {VARIANTS}")
        if self.tag in ("Gtilde", "Ghat") and self.lower is None:
            raise ValueError(f"{self.tag} needs the lower truncation field")
        if self.tag == "Gtilde" and self.upper is None:
            raise ValueError("Gtilde needs the upper truncation field")

    def check(self, grid: Grid) -> None:
        """Validate truncation fields against ``grid`` (interior nodes only)."""
        if self.tag not in ("Gtilde", "Ghat"):
            return
        inner = grid.interior
        u1 = grid.check_field(self.lower)[inner]
        if np.any(u1 <= 0):
            raise ValueError(f"{self.tag}: lower field must be > 0 at interior nodes")
        if self.tag == "Gtilde":
            u2 = grid.check_field(self.upper)[inner]
            if np.any(u1 > u2):
                raise ValueError("Gtilde: need lower <= upper at interior nodes")


@dataclass(frozen=True)
class NormReport:
    grad_l2_d1: float
    grad_lp_d2: float
    bracket_norm: float
    sup_norm: float
    l2_norm: float


# -- zero-order terms -------------------------------------------------------

def _primitive(s, variant, q, lo=None, hi=None):
    """N(x, s) at the given nodes; ``lo``/``hi`` are the truncation values there."""
    tag = variant.tag
    if tag == "F":
        return np.abs(s) ** (q + 1) / (q + 1)
    if tag == "G":
        return np.maximum(s, 0.0) ** (q + 1) / (q + 1)
    base = lo ** (q + 1)
    if tag == "Ghat":
        mid = base + (np.maximum(s, lo) ** (q + 1) - base) / (q + 1)
        return np.where(s <= lo, lo ** q * s, mid)
    top = base + (hi ** (q + 1) - base) / (q + 1)
    mid = base + (np.clip(s, lo, hi) ** (q + 1) - base) / (q + 1)
    return np.where(s <= lo, lo ** q * s, np.where(s >= hi, top + hi ** q * (s - hi), mid))


def _nonlinearity(s, variant, q, lo=None, hi=None):
    tag = variant.tag
    if tag == "F":
        return np.abs(s) ** (q - 1) * s
    if tag == "G":
        return np.maximum(s, 0.0) ** q
    if tag == "Ghat":
        return np.maximum(s, lo) ** q
    return np.clip(s, lo, hi) ** q


def _nonlinearity_slope(s, variant, q, lo=None, hi=None):
    """ds of the nonlinearity; middle-branch value at truncation knots."""
    tag = variant.tag
    if tag == "F":
        return q * np.abs(s) ** (q - 1)
    if tag == "G":
        return q * np.maximum(s, 0.0) ** (q - 1)
    if tag == "Ghat":
        return np.where(s >= lo, q * np.maximum(s, lo) ** (q - 1), 0.0)
    inside = (s >= lo) & (s <= hi)
    return np.where(inside, q * np.clip(s, lo, hi) ** (q - 1), 0.0)


def _knots(variant, grid):
    inner = grid.interior
    lo = None if variant.lower is None else np.asarray(variant.lower, float)[inner]
    hi = None if variant.upper is None else np.asarray(variant.upper, float)[inner]
    return lo, hi


def truncation_h(s, lower, q, upper=None):
    """Truncated nonlinearity at one or more nodes.

    With ``upper`` given this is the two-sided clamp used by ``Gtilde``;
    without it, the one-sided floor used by ``Ghat``.

    >>> truncation_h(4.0, 1.0, 1.5, upper=9.0)
    8.0
    """
    s, lower = np.asarray(s, float), np.asarray(lower, float)
    if upper is None:
        out = np.where(s > lower, np.maximum(s, lower) ** q, lower ** q)
    else:
        upper = np.asarray(upper, float)
        out = np.where(s >= upper, upper ** q,
                       np.where(s <= lower, lower ** q, np.clip(s, lower, upper) ** q))
    return out[()] if out.ndim == 0 else out


# -- gradient part ----------------------------------------------------------

def edge_gradients(u, grid: Grid):
    """Normal and transverse edge differences and squared gradient magnitude."""
    gn = grid.Dn @ u
    gt = grid.Dt @ u
    return gn, gt, gn * gn + gt * gt


def gradient_energy(u, grid: Grid) -> float:
    u = grid.check_field(u)
    _, _, mag2 = edge_gradients(u, grid)
    pe = grid.edge_exponent
    return float(np.sum(grid.edge_weight * mag2 ** (pe / 2) / pe))


def gradient_residual(u, grid: Grid) -> np.ndarray:
    """Gradient of :func:`gradient_energy`; the discrete -div(|grad u|^{p(x)-2} grad u)."""
    u = grid.check_field(u)
    gn, gt, mag2 = edge_gradients(u, grid)
    pe = grid.edge_exponent
    c = grid.edge_weight * mag2 ** ((pe - 2) / 2)
    r = grid.Dn.T @ (c * gn) + grid.Dt.T @ (c * gt)
    r[grid.boundary] = 0.0
    return r


def edge_tangent_weights(u, grid: Grid, reg: float = DEFAULT_REG):
    """Per-edge 2x2 linearization coefficients ``(nn, tt, nt)``.

    For an exponent-p edge with gradient g the block is
    ``s (I + (p-2) g g^T / |g|^2)`` with ``s = (|g|^2 + reg^2)^{(p-2)/2}``; at
    ``g = 0`` the projection defaults to the edge direction, so in 1D the
    weight is always ``(p-1) s``. Exponent-2 edges give the identity.
    """
    gn, gt, mag2 = edge_gradients(u, grid)
    pe = grid.edge_exponent
    s = (mag2 + reg * reg) ** ((pe - 2) / 2)
    safe = np.where(mag2 > 0, mag2, 1.0)
    pnn = np.where(mag2 > 0, gn * gn / safe, 1.0)
    ptt = np.where(mag2 > 0, gt * gt / safe, 0.0)
    pnt = np.where(mag2 > 0, gn * gt / safe, 0.0)
    k = pe - 2
    return s * (1 + k * pnn), s * (1 + k * ptt), s * k * pnt


def gradient_jacobian(u, grid: Grid, reg: float = DEFAULT_REG) -> sp.csr_matrix:
    """Regularized Hessian of the gradient part on the full node set."""
    u = grid.check_field(u)
    nn, tt, nt = edge_tangent_weights(u, grid, reg)
    w = grid.edge_weight
    Dn, Dt = grid.Dn, grid.Dt
    H = Dn.T @ sp.diags(w * nn) @ Dn
    if Dt.nnz:
        cross = Dn.T @ sp.diags(w * nt) @ Dt
        H = H + Dt.T @ sp.diags(w * tt) @ Dt + cross + cross.T
    return H.tocsr()


def interior_block(A: sp.spmatrix, grid: Grid) -> sp.csr_matrix:
    inner = grid.interior
    return A.tocsr()[inner][:, inner]


# -- public operations ------------------------------------------------------

def energy(u, variant: EnergyVariant, grid: Grid) -> float:
    """Discrete functional value."""
    u = grid.check_field(u)
    variant.check(grid)
    lo, hi = _knots(variant, grid)
    s = u[grid.interior]
    load = np.sum(_primitive(s, variant, grid.q, lo, hi)) * grid.node_measure
    return gradient_energy(u, grid) - variant.lam * float(load)


def residual(u, variant: EnergyVariant, grid: Grid) -> np.ndarray:
    """Nodal gradient of :func:`energy`; zero at boundary nodes."""
    u = grid.check_field(u)
    variant.check(grid)
    lo, hi = _knots(variant, grid)
    r = gradient_residual(u, grid)
    inner = grid.interior
    r[inner] -= variant.lam * grid.node_measure * _nonlinearity(u[inner], variant, grid.q, lo, hi)
    return r


def jacobian(u, variant: EnergyVariant, grid: Grid, reg: float = DEFAULT_REG) -> sp.csr_matrix:
    """Derivative of :func:`residual` restricted to interior nodes."""
    u = grid.check_field(u)
    variant.check(grid)
    lo, hi = _knots(variant, grid)
    J = interior_block(gradient_jacobian(u, grid, reg), grid)
    slope = _nonlinearity_slope(u[grid.interior], variant, grid.q, lo, hi)
    return (J - sp.diags(variant.lam * grid.node_measure * slope)).tocsr()


def norms(u, grid: Grid) -> NormReport:
    u = grid.check_field(u)
    gn, gt, mag2 = edge_gradients(u, grid)
    w = grid.edge_weight
    pmask = grid.p_edges
    l2_d1 = float(np.sqrt(np.sum(w[~pmask] * mag2[~pmask])))
    if np.any(pmask):
        pe = grid.edge_exponent[pmask]
        lp_d2 = float(np.sum(w[pmask] * mag2[pmask] ** (pe / 2)) ** (1.0 / pe[0]))
    else:
        lp_d2 = 0.0
    return NormReport(
        grad_l2_d1=l2_d1,
        grad_lp_d2=lp_d2,
        bracket_norm=l2_d1 + lp_d2,
        sup_norm=float(np.max(np.abs(u))),
        l2_norm=float(np.sqrt(grid.node_measure * np.sum(u * u))),
    )


def auxiliary_energy(u, f, grid: Grid) -> float:
    """Convex functional whose minimizer solves the problem with right-hand side f."""
    u = grid.check_field(u)
    inner = grid.interior
    return gradient_energy(u, grid) - grid.node_measure * float(np.dot(f[inner], u[inner]))


def auxiliary_residual(u, f, grid: Grid) -> np.ndarray:
    r = gradient_residual(u, grid)
    inner = grid.interior
    r[inner] -= grid.node_measure * np.asarray(f, float)[inner]
    return r
