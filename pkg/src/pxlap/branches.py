"""Parameter sweeps: threshold bracketing, branch tables and the invariant battery."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import energy as en
from .energy import EnergyVariant
from .mesh import Grid, d2_subgrid, uniform_grid
from .mountain_pass import MPParams, default_peak, mountain_pass
from .solvers import (CONVERGED, DIVERGED, STALLED, SolverError, SolverParams,
                      build_subsolution, build_supersolution_small_lambda, minimize_truncated,
                      monotone_iteration, newton_solve, solve_plaplacian_sublinear,
                      with_overrides)

log = logging.getLogger(__name__)

BRANCH_HEADER = ("lambda", "min_sup", "min_energy", "sec_sup", "sec_level", "sec_status")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return "%.17g" % x


# -- threshold bracketing ---------------------------------------------------

@dataclass
class Probe:
    lam: float
    status: str
    iterations: int
    final_sup: float
    budget: int
    retried: bool = False


@dataclass
class LambdaStarEstimate:
    lo: float
    hi: float
    width: float
    trace: list = field(default_factory=list)
    stalled: list = field(default_factory=list)
    converged: bool = True
    message: str = ""

    @property
    def rel_width(self) -> float:
        return self.width / self.lo

    def is_consistent(self) -> bool:
        """No Converged probe lies above any Diverged probe."""
        conv = [p.lam for p in self.trace if p.status == CONVERGED]
        div = [p.lam for p in self.trace if p.status == DIVERGED]
        return not conv or not div or max(conv) < min(div)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("lambda", "status", "iterations", "final_sup", "budget"))
        for p in self.trace:
            w.writerow((_fmt(p.lam), p.status, p.iterations, _fmt(p.final_sup), p.budget))
        return buf.getvalue()


class BracketError(RuntimeError):
    """The initial bracket could not be expanded to a sign change."""


def _probe(lam, grid, params, retries=1):
    """Monotone iteration at ``lam``; a stall is retried with a doubled budget."""
    p = params
    for attempt in range(retries + 1):
        out = monotone_iteration(lam, grid, p)
        if out.status != STALLED or attempt == retries:
            break
        log.info("probe at lambda=%.6g stalled after %d iterations", lam, out.iterations)
        p = with_overrides(p, monotone_max_iter=2 * p.monotone_max_iter)
    sup = out.iterates_sup_norms[-1] if out.iterates_sup_norms else float("nan")
    return Probe(float(lam), out.status, out.iterations, float(sup), p.monotone_max_iter,
                 attempt > 0)


def estimate_lambda_star(grid: Grid, bracket0=None, tol: float = 1e-2,
                         params: SolverParams = SolverParams(), lam_cap: float = 1e8,
                         max_probes: int = 80) -> LambdaStarEstimate:
    """Bisection on the outcome of the monotone iteration.

    ``bracket0`` defaults to ``(lam_tilde, 2 * lam_tilde)``. The lower end is
    halved until it converges and the upper end doubled until it diverges.
    A probe that stalls is retried once with twice the iteration budget and
    listed in ``stalled`` either way; each probe records the budget that
    produced its label. A probe that stalls twice counts for neither side:
    bisection stops there and the estimate is returned with
    ``converged=False``.
    """
    if bracket0 is None:
        _, lam_tilde = build_supersolution_small_lambda(grid, params)
        bracket0 = (lam_tilde, 2.0 * lam_tilde)
    lo, hi = map(float, bracket0)
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < lo < hi")
    trace, stalled = [], []

    def probe(lam):
        pr = _probe(lam, grid, params)
        trace.append(pr)
        if pr.retried:
            stalled.append(pr.lam)
        return pr.status

    while (s := probe(lo)) != CONVERGED:
        if s == STALLED or lo < 1e-12:
            raise BracketError(f"lower end {lo:.6g} does not converge ({s})")
        hi, lo = lo, lo / 2
    while (s := probe(hi)) != DIVERGED:
        if s == STALLED:
            raise BracketError(f"upper end {hi:.6g} stalled; cannot classify")
        lo = hi
        hi *= 2
        if hi > lam_cap:
            raise BracketError(f"every probe converged up to the cap {lam_cap:.3g}")
    ok, msg = True, ""
    while hi - lo > tol * lo:
        if len(trace) >= max_probes:
            ok, msg = False, f"probe budget {max_probes} exhausted"
            break
        mid = 0.5 * (lo + hi)
        s = probe(mid)
        if s == CONVERGED:
            lo = mid
        elif s == DIVERGED:
            hi = mid
        else:
            ok, msg = False, f"stalled probe at lambda={mid:.6g}; bracket not refined further"
            break
    est = LambdaStarEstimate(lo, hi, hi - lo, trace, stalled, ok, msg)
    if not est.is_consistent():
        raise RuntimeError("inconsistent probe trace: a converged probe lies above a diverged one")
    return est


# -- branch table -----------------------------------------------------------

@dataclass
class BranchRow:
    lam: float
    min_status: str
    min_sup: float | None = None
    min_energy: float | None = None
    sec_sup: float | None = None
    sec_level: float | None = None
    sec_status: str = ""
    note: str = ""


@dataclass
class BranchTable:
    rows: list = field(default_factory=list)

    def minimal_monotone(self, slack: float = 1e-8) -> bool:
        s = [r.min_sup for r in self.rows if r.min_sup is not None]
        return all(b >= a - slack for a, b in zip(s, s[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BRANCH_HEADER)
        for r in self.rows:
            w.writerow((_fmt(r.lam), _fmt(r.min_sup), _fmt(r.min_energy), _fmt(r.sec_sup),
                        _fmt(r.sec_level), r.sec_status))
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=2)


def _second_solution(lam, lam_lo, grid, params, mp, minimal):
    """Mountain-pass attempt at ``lam``; returns ``(sec_sup, level, status, note)``."""

    def w(l):
        if l not in minimal:
            out = monotone_iteration(l, grid, params)
            if out.status == STALLED:
                # near the threshold convergence slows down; same retry rule as the bisection
                out = monotone_iteration(
                    l, grid, with_overrides(params, monotone_max_iter=2 * params.monotone_max_iter))
            minimal[l] = out.solution if out.converged else None
        if minimal[l] is None:
            raise SolverError(f"no minimal solution at lambda={l:.6g}")
        return minimal[l]

    u1 = w(0.9 * lam)
    u2 = w(min(1.1 * lam, lam_lo))
    ut = minimize_truncated(lam, u1, u2, grid, params)
    peak = default_peak(lam, ut, u1, grid, drop=mp.peak_drop)
    out = mountain_pass(lam, ut, peak, u1, grid, mp, params)
    if out.status == "Found":
        return float(np.max(out.critical_point)), out.level, out.status, ""
    return None, out.path_max_level, out.status, ""


def bifurcation_scan(grid: Grid, lambdas, with_second: bool = False,
                     params: SolverParams = SolverParams(), lambda_star_lo: float | None = None,
                     mp: MPParams = MPParams()) -> BranchTable:
    """One row per lambda: minimal solution, optionally a mountain-pass second one.

    Failures are recorded in the row and the scan moves on.
    """
    lambdas = [float(x) for x in lambdas]
    if lambdas != sorted(lambdas):
        raise ValueError("lambda values must be sorted ascending")
    if with_second and lambda_star_lo is None:
        raise ValueError("second-branch search needs the threshold lower bound")
    if lambda_star_lo is not None and lambdas and lambdas[-1] >= lambda_star_lo:
        raise ValueError("all lambda values must lie below the threshold lower bound")
    table = BranchTable()
    minimal = {}
    for lam in lambdas:
        try:
            out = monotone_iteration(lam, grid, params)
        except SolverError as err:
            table.rows.append(BranchRow(lam, "Error", note=str(err)))
            continue
        row = BranchRow(lam, out.status)
        if out.converged:
            minimal[lam] = out.solution
            row.min_sup = float(np.max(out.solution))
            row.min_energy = float(out.energy_trace[-1])
        if with_second and lam > 0:
            try:
                row.sec_sup, row.sec_level, row.sec_status, row.note = _second_solution(
                    lam, lambda_star_lo, grid, params, mp, minimal)
            except (SolverError, ValueError) as err:
                row.sec_status, row.note = "Error", str(err)
        table.rows.append(row)
    return table


# -- verification battery ---------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, measured, threshold, ok=None, detail=""):
        measured = float(measured)
        ok = (measured <= threshold) if ok is None else ok
        self.checks.append(Check(name, bool(ok and math.isfinite(measured)), measured,
                                 float(threshold), detail))

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "checks": [asdict(c) for c in self.checks]},
                          indent=2)


def broken_jacobian(u, variant, grid, reg=en.DEFAULT_REG):
    """Regression fixture: the Jacobian with every edge weight inflated by half."""
    extra = 0.5 * en.gradient_jacobian(u, grid, reg)
    return (en.jacobian(u, variant, grid, reg) + en.interior_block(extra, grid)).tocsr()


def _random_interior(rng, grid, scale=1.0, positive=False):
    u = rng.uniform(0.1 if positive else -1.0, 1.0, grid.n_nodes) * scale
    u[grid.boundary] = 0.0
    return u


def _variants(rng, grid, lam):
    u1 = _random_interior(rng, grid, 0.3, positive=True)
    u2 = u1 + _random_interior(rng, grid, 0.5, positive=True)
    return [EnergyVariant("F", lam), EnergyVariant("G", lam),
            EnergyVariant("Gtilde", lam, lower=u1, upper=u2),
            EnergyVariant("Ghat", lam, lower=u1)]


def gradient_check(grid, rng, samples=20, eps=1e-6, lam=3.0):
    """Worst relative mismatch between central differences and the residual."""
    worst = 0.0
    for _ in range(samples):
        for v in _variants(rng, grid, lam):
            u = _random_interior(rng, grid)
            r = en.residual(u, v, grid)
            # randomly reweighted gradient direction: no cancellation in r . d
            d = r * rng.uniform(0.5, 1.5, grid.n_nodes) / np.max(np.abs(r))
            fd = (en.energy(u + eps * d, v, grid) - en.energy(u - eps * d, v, grid)) / (2 * eps)
            an = float(r @ d)
            worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-300))
    return worst


def jacobian_check(grid, rng, samples=5, eps=1e-6, lam=3.0, jacobian=en.jacobian):
    """Worst relative mismatch between differenced residuals and the Jacobian action."""
    inner = grid.interior
    worst = 0.0
    for _ in range(samples):
        for v in _variants(rng, grid, lam):
            u = _random_interior(rng, grid)
            d = _random_interior(rng, grid)
            fd = (en.residual(u + eps * d, v, grid) - en.residual(u - eps * d, v, grid))[inner]
            fd /= 2 * eps
            an = jacobian(u, v, grid, en.DEFAULT_REG) @ d[inner]
            worst = max(worst, float(np.linalg.norm(fd - an) / np.linalg.norm(an)))
    return worst


def flux_balance_check(grid, rng, samples=5, lam=2.0):
    """Residual summed over the closed D2 box against its boundary-flux telescoping sum.

    Returns ``(defect, global_defect)``: the first compares the node sum with
    the flux through the edges crossing the box boundary minus the load, the
    second is the total flux over all nodes, which must vanish.
    """
    S = np.zeros(grid.n_nodes)
    if grid.in_d2 is not None:
        S[grid.in_d2 & ~grid.boundary] = 1.0
    cross_n = grid.Dn @ S
    cross_t = grid.Dt @ S
    ones = np.ones(grid.n_nodes)
    inner = grid.interior
    worst = worst_global = 0.0
    F = EnergyVariant("F", lam)
    for _ in range(samples):
        u = _random_interior(rng, grid)
        gn, gt, mag2 = en.edge_gradients(u, grid)
        c = grid.edge_weight * mag2 ** ((grid.edge_exponent - 2) / 2)
        load = lam * grid.node_measure * np.abs(u) ** (grid.q - 1) * u
        lhs = float(S @ en.residual(u, F, grid))
        rhs = float((c * gn) @ cross_n + (c * gt) @ cross_t - S[inner] @ load[inner])
        scale = float(np.sum(np.abs(c * gn)) + np.sum(np.abs(load)))
        worst = max(worst, abs(lhs - rhs) / scale)
        total = grid.Dn.T @ (c * gn) + grid.Dt.T @ (c * gt)
        worst_global = max(worst_global, abs(float(ones @ total)) / scale)
    return worst, worst_global


def monotonicity_check(grid, rng, samples=20):
    """Smallest normalized value of ``(A(u) - A(w)) . (u - w)`` over random pairs."""
    inner = grid.interior
    worst = math.inf
    for _ in range(samples):
        u, w = _random_interior(rng, grid), _random_interior(rng, grid)
        dr = (en.gradient_residual(u, grid) - en.gradient_residual(w, grid))[inner]
        val = float(dr @ (u - w)[inner])
        worst = min(worst, val / (np.linalg.norm(dr) * np.linalg.norm((u - w)[inner])))
    return worst


def convexity_check(grid, rng, samples=20):
    """Smallest normalized gap ``I(w) - I(v) - I'(v)(w - v)`` over random pairs."""
    worst = math.inf
    for _ in range(samples):
        f = rng.uniform(-1, 1, grid.n_nodes)
        v, w = _random_interior(rng, grid), _random_interior(rng, grid)
        gap = (en.auxiliary_energy(w, f, grid) - en.auxiliary_energy(v, f, grid)
               - float(en.auxiliary_residual(v, f, grid) @ (w - v)))
        worst = min(worst, gap / abs(en.gradient_energy(w - v, grid)))
    return worst


def scaling_defect(grid, params, lam=1.0):
    """``(defect, residual)`` for the D2 scaling law between ``lam`` and ``2 lam``.

    ``defect`` is the relative sup distance between ``v_2`` and ``2^gamma v_1``;
    ``residual`` is the worst residual of either field in the ``2 lam``
    equation relative to its load, so a solver that merely rescales its
    iterates cannot pass without actually solving the problem.
    """
    sub, _ = d2_subgrid(grid)
    v1 = solve_plaplacian_sublinear(sub, lam, params)
    v2 = solve_plaplacian_sublinear(sub, 2 * lam, params)
    scaled = 2 ** sub.gamma * v1
    F2 = EnergyVariant("F", 2 * lam)
    inner = sub.interior

    def rel_res(v):
        load = 2 * lam * sub.node_measure * np.sum(np.abs(v[inner]) ** sub.q)
        return float(np.max(np.abs(en.residual(v, F2, sub))) / load)

    defect = float(np.max(np.abs(v2 - scaled)) / np.max(np.abs(v2)))
    return defect, max(rel_res(v2), rel_res(scaled))


def p2_reduction_grid(grid: Grid, q: float = 0.5) -> Grid:
    """Same node layout with exponent 2 everywhere and a sublinear power ``q``."""
    return uniform_grid(grid.lo, grid.hi, [s - 1 for s in grid.shape], 2.0, q,
                        d2_index=grid.d2_index)


def p2_reduction_defect(grid, params, lam=1.0, q=0.5):
    """Sup distance between the monotone-iteration limit and a direct Newton solve."""
    g2 = p2_reduction_grid(grid, q)
    out = monotone_iteration(lam, g2, params)
    if not out.converged:
        return math.inf, out.status
    start = np.where(g2.boundary, 0.0, np.max(out.solution))
    u, _ = newton_solve(start, EnergyVariant("F", lam), g2, params, tol=1e-13)
    return float(np.max(np.abs(u - out.solution))), out.status


def verify_suite(grid: Grid, params: SolverParams = SolverParams(), seed: int = 42,
                 jacobian=None) -> VerifyReport:
    """Run the invariant battery and report measured margins per check.

    ``jacobian`` replaces the Jacobian under test; it exists so that a
    deliberately broken operator can be fed through the same gate.
    """
    rng = np.random.default_rng(seed)
    rep = VerifyReport()
    rep.add("gradient_consistency", gradient_check(grid, rng), 1e-6)
    rep.add("jacobian_consistency",
            jacobian_check(grid, rng, jacobian=jacobian or en.jacobian), 1e-4)
    local, total = flux_balance_check(grid, rng)
    rep.add("flux_balance_d2_box", local, 1e-12)
    rep.add("flux_global_conservation", total, 1e-12)
    mono = monotonicity_check(grid, rng)
    rep.add("operator_monotonicity", mono, 0.0, ok=mono >= 0.0)
    convex = convexity_check(grid, rng)
    rep.add("auxiliary_convexity", convex, 0.0, ok=convex > 0.0)
    defect, res = scaling_defect(grid, params)
    rep.add("scaling_law", defect, 1e-6)
    rep.add("scaling_law_residual", res, 1e-9)

    ubar, lam_tilde = build_supersolution_small_lambda(grid, params)
    sub1 = build_subsolution(1.0, grid, params)
    rep.add("subsolution_residual_max", np.max(en.residual(sub1, EnergyVariant("F", 1.0), grid)),
            1e-12)
    worst_super = min(float(np.min(en.residual(ubar, EnergyVariant("F", f * lam_tilde), grid)))
                      for f in (0.25, 0.5, 1.0))
    rep.add("supersolution_residual_min", worst_super, -1e-12, ok=worst_super >= -1e-12)

    half = monotone_iteration(0.5 * lam_tilde, grid, params)
    quarter = monotone_iteration(0.25 * lam_tilde, grid, params)
    rep.add("monotone_converged", 0.0 if half.converged else 1.0, 0.0, detail=half.status)
    if half.converged and quarter.converged:
        w, wq = half.solution, quarter.solution
        inner = grid.interior
        rep.add("monotone_chain_violation", half.monotone_violation, 1e-12)
        rep.add("bounded_by_supersolution", np.max(w - ubar), 1e-10)
        rep.add("positivity_min_interior", np.min(w[inner]), 0.0, ok=np.min(w[inner]) > 0)
        sub_half = build_subsolution(0.5 * lam_tilde, grid, params)
        rep.add("comparison_sub_le_minimal", np.max(sub_half - w), 1e-10)
        rep.add("comparison_increasing_in_lambda", np.max(wq - w), 1e-10)
    d, status = p2_reduction_defect(grid, params)
    rep.add("p2_reduction", d, 1e-8, detail=f"monotone status {status}, q=0.5")
    return rep
