"""Elliptic solvers: auxiliary problem, sub/supersolutions, monotone iteration,
and the ordered-interval minimizer.

Every routine works on full nodal arrays (boundary values held at zero) and
solves for the interior unknowns only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energy as en
from .energy import EnergyVariant
from .mesh import Grid, d2_subgrid

log = logging.getLogger(__name__)

CONVERGED, DIVERGED, STALLED = "Converged", "Diverged", "Stalled"

# residual floor relative to the total load; below it Newton only sees round-off
_ROUNDOFF = 2e-12
_SWEEP_MAX = 500


class SolverError(RuntimeError):
    """Newton-type solve failed to reach its tolerance."""

    def __init__(self, msg, last=None, residual_norm=None, iteration=None):
        super().__init__(msg)
        self.last = last
        self.residual_norm = residual_norm
        self.iteration = iteration


@dataclass(frozen=True)
class SolverParams:
    newton_tol: float = 1e-10
    newton_max_iter: int = 200
    backtrack: float = 0.5
    armijo: float = 1e-4
    reg: float = 1e-8
    monotone_tol: float = 1e-9
    monotone_max_iter: int = 500
    m_cap: float = 1e6

    def __post_init__(self):
        for name in ("newton_tol", "reg", "monotone_tol", "m_cap", "armijo"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.m_cap <= self.monotone_tol:
            raise ValueError("m_cap must exceed monotone_tol")
        if self.newton_max_iter < 1 or self.monotone_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class IterationOutcome:
    status: str
    solution: np.ndarray | None
    iterates_sup_norms: list = field(default_factory=list)
    energy_trace: list = field(default_factory=list)
    residual_norm: float = float("nan")
    iterations: int = 0
    monotone_violation: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _sup(x) -> float:
    return float(np.max(np.abs(x))) if len(x) else 0.0


def _backward_error_floor(H, x, factor=100.0):
    """Residual size explained by round-off in evaluating ``H x``."""
    row = np.asarray(abs(H).sum(axis=1)).ravel()
    return factor * np.finfo(float).eps * float(row.max() if row.size else 0.0) * _sup(x)


def newton_minimize(fun, grad, hess, x, tol, params: SolverParams, fallback=None):
    """Damped Newton on interior unknowns with Armijo backtracking on ``fun``.

    ``grad`` returns the unregularized gradient; ``hess`` a (regularized)
    sparse Hessian. When the Newton direction is not a descent direction,
    ``fallback(x)`` supplies an SPD matrix for a preconditioned gradient
    step. Near round-off the energy stops resolving decrease; then a full
    step is accepted if it shrinks the gradient.
    """
    g = grad(x)
    gnorm = _sup(g)
    for it in range(params.newton_max_iter):
        if gnorm <= tol:
            return x, gnorm, it
        d = spla.spsolve(hess(x).tocsc(), -g)
        slope = float(g @ d)
        if not np.all(np.isfinite(d)) or slope >= 0:
            if fallback is None:
                raise SolverError("Newton direction is not a descent direction",
                                  x, gnorm, it)
            d = spla.spsolve(fallback(x).tocsc(), -g)
            slope = float(g @ d)
        f0 = fun(x)
        t = 1.0
        accepted = False
        if -slope < 1e-13 * max(1.0, abs(f0)):
            # predicted decrease is below round-off of fun: judge by the gradient instead
            while t > 1e-6:
                g_new = grad(x + t * d)
                if _sup(g_new) < gnorm:
                    break
                t *= params.backtrack
            x_try = x + t * d
            g_try = grad(x_try)
            if _sup(g_try) >= gnorm:
                if gnorm <= _backward_error_floor(hess(x), x):
                    log.debug("accepting round-off limited residual %.3e > tol %.3e", gnorm, tol)
                    return x, gnorm, it
                raise SolverError("stagnated at round-off level", x, gnorm, it)
            x, g = x_try, g_try
            gnorm = _sup(g)
            continue
        while t > 1e-12:
            x_new = x + t * d
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f0 + params.armijo * t * slope:
                accepted = True
                break
            t *= params.backtrack
        if not accepted:
            x_new = x + d
            g_new = grad(x_new)
            if _sup(g_new) < gnorm:
                x, g, gnorm = x_new, g_new, _sup(g_new)
                continue
            if gnorm <= _backward_error_floor(hess(x), x):
                return x, gnorm, it
            raise SolverError("line search stalled", x, gnorm, it)
        x = x_new
        g = grad(x)
        gnorm = _sup(g)
    if gnorm <= tol:
        return x, gnorm, params.newton_max_iter
    raise SolverError(f"Newton did not converge in {params.newton_max_iter} iterations",
                      x, gnorm, params.newton_max_iter)


def newton_root(resid, jac, x, tol, params: SolverParams):
    """Newton for ``resid(x) = 0`` with backtracking on the residual 2-norm."""
    r = resid(x)
    rnorm = _sup(r)
    for it in range(params.newton_max_iter):
        if rnorm <= tol:
            return x, rnorm, it
        d = spla.spsolve(jac(x).tocsc(), -r)
        if not np.all(np.isfinite(d)):
            raise SolverError("singular Jacobian", x, rnorm, it)
        m0 = float(r @ r)
        t = 1.0
        while True:
            x_new = x + t * d
            r_new = resid(x_new)
            if float(r_new @ r_new) <= (1 - 2e-4 * t) * m0:
                break
            t *= params.backtrack
            if t < 1e-10:
                raise SolverError("residual line search stalled", x, rnorm, it)
        x, r = x_new, r_new
        rnorm = _sup(r)
    if rnorm <= tol:
        return x, rnorm, params.newton_max_iter
    raise SolverError("Newton did not converge", x, rnorm, params.newton_max_iter)


def _embed(grid: Grid, xi) -> np.ndarray:
    u = np.zeros(grid.n_nodes)
    u[grid.interior] = xi
    return u


def scaled_reg(u, grid: Grid, reg: float) -> float:
    """Regularization shrunk to the field's gradient size when that is below one.

    A fixed ``reg`` swamps the p-edge weights of very small fields and turns
    Newton into a crawl; relative to the largest edge gradient it does not.
    """
    gmax = float(np.max(np.abs(grid.Dn @ u))) if grid.n_edges else 0.0
    return reg * min(1.0, gmax) if gmax > 0 else reg


def gradient_hessian(grid: Grid, x, reg: float):
    """Interior Hessian of the gradient part at interior values ``x``."""
    u = _embed(grid, x)
    return en.interior_block(en.gradient_jacobian(u, grid, scaled_reg(u, grid, reg)), grid)


def full_hessian(grid: Grid, x, variant: EnergyVariant, reg: float):
    u = _embed(grid, x)
    return en.jacobian(u, variant, grid, scaled_reg(u, grid, reg))


def _load_tol(tol, f, grid, rtol=None):
    scale = grid.node_measure * float(np.sum(np.abs(f[grid.interior])))
    if rtol is not None:
        tol = min(tol, rtol * scale)
    return max(tol, _ROUNDOFF * scale, 1e-300)


def solve_auxiliary(f, grid: Grid, params: SolverParams = SolverParams(), u0=None, tol=None,
                    rtol=None):
    """Unique minimizer of ``gradient part - sum(m f u)`` with zero boundary values.

    Uses damped Newton on the regularized Jacobian; convergence is judged on
    the unregularized residual, against ``tol`` (default ``newton_tol``) or
    ``rtol`` times the total load if that is smaller. The tolerance never
    drops below the round-off floor of the load.
    """
    f = grid.check_field(f)
    inner = grid.interior
    tol = _load_tol(params.newton_tol if tol is None else tol, f, grid, rtol)
    fm = grid.node_measure * f[inner]

    def fun(x):
        return en.gradient_energy(_embed(grid, x), grid) - float(fm @ x)

    def grad(x):
        return en.gradient_residual(_embed(grid, x), grid)[inner] - fm

    def hess(x):
        return gradient_hessian(grid, x, params.reg)

    x0 = np.zeros(inner.size) if u0 is None else grid.check_field(u0)[inner].copy()
    x, _, _ = newton_minimize(fun, grad, hess, x0, tol, params)
    return _embed(grid, x)


def solve_plaplacian_sublinear(grid: Grid, lam: float, params: SolverParams = SolverParams(),
                               rtol: float = 1e-11):
    """Positive solution of the D2 Dirichlet problem ``-Delta_p v = lam v^q``.

    ``grid`` is the all-D2 grid (see :func:`pxlap.mesh.d2_subgrid`). A
    sublinear fixed-point sweep from a positive constant gets close; Newton
    on the energy then polishes to ``tol``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    q = grid.q
    # torsion profile scaled so that both sides balance at its maximum
    tau = solve_auxiliary(np.ones(grid.n_nodes), grid, params)
    v = (lam * np.max(tau) ** q) ** grid.gamma * tau
    for k in range(_SWEEP_MAX):
        v_new = solve_auxiliary(lam * np.abs(v) ** q, grid, params, u0=v, rtol=1e-8)
        step = _sup(v_new - v)
        v = v_new
        if step <= 1e-6 * _sup(v):
            break
    else:
        raise SolverError("D2 fixed-point sweep did not settle", v)
    variant = EnergyVariant("F", lam)
    inner = grid.interior
    tol = _load_tol(params.newton_tol, lam * np.abs(v) ** q, grid, rtol)

    def fun(x):
        return en.energy(_embed(grid, x), variant, grid)

    def grad(x):
        return en.residual(_embed(grid, x), variant, grid)[inner]

    def hess(x):
        return full_hessian(grid, x, variant, params.reg)

    def fallback(x):
        return gradient_hessian(grid, x, params.reg)

    x, _, _ = newton_minimize(fun, grad, hess, v[inner], tol, params, fallback)
    v = _embed(grid, x)
    if np.any(v[inner] <= 0):
        raise SolverError("D2 solution is not positive", v)
    return v


def build_subsolution(lam: float, grid: Grid, params: SolverParams = SolverParams()):
    """D2 Dirichlet solution extended by zero to the whole domain."""
    sub, parent = d2_subgrid(grid)
    v = solve_plaplacian_sublinear(sub, lam, params)
    u = np.zeros(grid.n_nodes)
    u[parent] = v
    return u


def build_supersolution_small_lambda(grid: Grid, params: SolverParams = SolverParams(),
                                     tol: float = 1e-13):
    """Torsion-type supersolution and the lambda below which it works.

    Returns ``(ubar, lam_tilde)`` with ``ubar`` solving the problem with
    right-hand side 1 and ``lam_tilde = 1 / max(ubar)^q``.
    """
    one = np.ones(grid.n_nodes)
    ubar = solve_auxiliary(one, grid, params, tol=tol)
    C = float(np.max(ubar))
    return ubar, 1.0 / C ** grid.q


def _geometric_growth(sups, count=5, ratio=1.05):
    if len(sups) < count:
        return False
    tail = sups[-count:]
    return all(b >= ratio * a for a, b in zip(tail, tail[1:]))


def monotone_iteration(lam: float, grid: Grid, params: SolverParams = SolverParams(), w0=None):
    """Iterate ``w_n = A^{-1}(lam w_{n-1}^q)`` from a subsolution.

    Stops ``Converged`` once successive iterates differ by at most
    ``monotone_tol`` in sup-norm, ``Diverged`` once the sup-norm exceeds
    ``m_cap`` while the last five sup-norms grow geometrically (ratio >=
    1.05), and ``Stalled`` at the iteration cap.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if w0 is None:
        w0 = build_subsolution(lam, grid, params) if lam > 0 else np.zeros(grid.n_nodes)
    w = grid.check_field(w0).copy()
    q = grid.q
    F = EnergyVariant("F", lam)
    inner_tol = min(params.newton_tol, 1e-3 * params.monotone_tol)
    sups = [_sup(w)]
    energies = [en.energy(w, F, grid)]
    violation = 0.0
    for n in range(1, params.monotone_max_iter + 1):
        try:
            w_new = solve_auxiliary(lam * np.maximum(w, 0.0) ** q, grid, params, u0=w,
                                    tol=inner_tol, rtol=1e-10)
        except SolverError as err:
            raise SolverError(f"inner solve failed at monotone step {n}: {err}",
                              err.last, err.residual_norm, n) from err
        violation = max(violation, float(np.max(w - w_new)))
        step = _sup(w_new - w)
        w = w_new
        sups.append(_sup(w))
        energies.append(en.energy(w, F, grid))
        if not np.isfinite(sups[-1]):
            return IterationOutcome(DIVERGED, None, sups, energies, iterations=n,
                                    monotone_violation=violation)
        if step <= params.monotone_tol:
            r = _sup(en.residual(w, F, grid))
            return IterationOutcome(CONVERGED, w, sups, energies, r, n, violation)
        if sups[-1] > params.m_cap and _geometric_growth(sups):
            return IterationOutcome(DIVERGED, None, sups, energies, iterations=n,
                                    monotone_violation=violation)
    return IterationOutcome(STALLED, None, sups, energies, iterations=params.monotone_max_iter,
                            monotone_violation=violation)


class OrderingError(SolverError):
    """Minimizer of the truncated functional left the ordered interval."""


def minimize_truncated(lam: float, u1, u2, grid: Grid, params: SolverParams = SolverParams(),
                       slack: float = 1e-10):
    """Global minimizer of the functional truncated to ``[u1, u2]``.

    Starts from the interval midpoint. The returned field must lie in the
    interval (up to ``slack``) and then solves the untruncated equation.
    """
    u1, u2 = grid.check_field(u1), grid.check_field(u2)
    if np.any(u1[grid.interior] > u2[grid.interior]):
        raise ValueError("need u1 <= u2 nodewise")
    variant = EnergyVariant("Gtilde", lam, lower=u1, upper=u2)
    variant.check(grid)
    inner = grid.interior

    def fun(x):
        return en.energy(_embed(grid, x), variant, grid)

    def grad(x):
        return en.residual(_embed(grid, x), variant, grid)[inner]

    def hess(x):
        return full_hessian(grid, x, variant, params.reg)

    def fallback(x):
        return gradient_hessian(grid, x, params.reg)

    x0 = 0.5 * (u1 + u2)[inner]
    x, _, _ = newton_minimize(fun, grad, hess, x0, params.newton_tol, params, fallback)
    ut = _embed(grid, x)
    below = float(np.max(u1 - ut))
    above = float(np.max(ut - u2))
    if below > slack or above > slack:
        raise OrderingError(
            f"truncated minimizer leaves [u1, u2] by {max(below, above):.3e}; refine the grid",
            ut)
    return ut


def newton_solve(u0, variant: EnergyVariant, grid: Grid, params: SolverParams = SolverParams(),
                 tol=None):
    """Plain Newton on ``residual(u, variant) = 0`` from ``u0``."""
    inner = grid.interior
    tol = params.newton_tol if tol is None else tol

    def resid(x):
        return en.residual(_embed(grid, x), variant, grid)[inner]

    def jac(x):
        return full_hessian(grid, x, variant, params.reg)

    x, rnorm, _ = newton_root(resid, jac, grid.check_field(u0)[inner].copy(), tol, params)
    return _embed(grid, x), rnorm


def with_overrides(params: SolverParams, **kw) -> SolverParams:
    return replace(params, **{k: v for k, v in kw.items() if v is not None})
