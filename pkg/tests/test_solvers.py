import numpy as np
import pytest

from oracles import flux_integration_1d, p_torsion_sup, shooting_sup
from pxlap import energy as en
from pxlap.energy import EnergyVariant
from pxlap.mesh import DomainSpec, build_grid, d2_subgrid, uniform_grid
from pxlap.solvers import (CONVERGED, DIVERGED, STALLED, OrderingError, SolverParams,
                           build_subsolution, minimize_truncated, monotone_iteration,
                           newton_solve, solve_auxiliary, solve_plaplacian_sublinear,
                           with_overrides)


def line(n, exponent):
    return uniform_grid((0.0,), (1.0,), (n - 1,), 3.0, 1.5, exponent_override=exponent)


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(newton_tol=0)
    with pytest.raises(ValueError):
        SolverParams(m_cap=1e-12)
    assert with_overrides(SolverParams(), m_cap=None, monotone_max_iter=7).monotone_max_iter == 7


def test_auxiliary_zero_rhs(grid):
    assert np.all(solve_auxiliary(np.zeros(grid.n_nodes), grid) == 0)


def test_auxiliary_laplacian_torsion():
    g = line(201, 2.0)
    u = solve_auxiliary(np.ones(g.n_nodes), g)
    x = g.points[:, 0]
    assert np.max(np.abs(u - x * (1 - x) / 2)) < 1e-10


def test_auxiliary_p_torsion():
    g = line(201, 3.0)
    u = solve_auxiliary(np.ones(g.n_nodes), g)
    assert abs(u.max() - p_torsion_sup(3.0)) < 1e-4


def test_auxiliary_matches_flux_oracle(grid):
    f = 1.0 + np.cos(5 * grid.points[:, 0])
    u = solve_auxiliary(f, grid, tol=1e-14)
    ref = flux_integration_1d(f, grid.h[0], grid.edge_exponent)
    assert np.max(np.abs(u - ref)) < 1e-10 * np.max(np.abs(ref))


def test_auxiliary_independent_of_start(grid, rng):
    f = np.ones(grid.n_nodes)
    u0 = rng.uniform(0, 1, grid.n_nodes)
    u0[grid.boundary] = 0
    a = solve_auxiliary(f, grid, tol=1e-13)
    b = solve_auxiliary(f, grid, u0=u0, tol=1e-13)
    assert np.max(np.abs(a - b)) < 1e-9 * a.max()


def test_auxiliary_2d_symmetry(grid2d):
    u = solve_auxiliary(np.ones(grid2d.n_nodes), grid2d).reshape(grid2d.shape)
    assert np.allclose(u, u.T, atol=1e-12)
    assert np.allclose(u, u[::-1, :], atol=1e-12)


def test_sublinear_matches_shooting_oracle():
    g = line(201, 3.0)
    v = solve_plaplacian_sublinear(g, 1.0)
    assert abs(v.max() / shooting_sup(3.0, 1.5, 1.0) - 1) < 1e-3
    assert np.all(v[g.interior] > 0)


def test_sublinear_rejects_nonpositive_lambda(grid):
    sub, _ = d2_subgrid(grid)
    with pytest.raises(ValueError):
        solve_plaplacian_sublinear(sub, 0.0)


def test_subsolution_vanishes_in_d1(grid):
    u = build_subsolution(1.0, grid)
    assert np.all(u[~grid.in_d2] == 0) and np.all(u[grid.boundary] == 0)
    assert np.max(en.residual(u, EnergyVariant("F", 1.0), grid)) <= 1e-12


def test_subsolution_scales_like_power(grid):
    s1 = build_subsolution(1e-2, grid).max()
    s2 = build_subsolution(1e-3, grid).max()
    assert s1 / s2 == pytest.approx(10 ** grid.gamma, rel=1e-6)


def test_supersolution_all_d1_limit():
    g = uniform_grid((0.0,), (1.0,), (200,), 3.0, 1.5, d2_index=((80, 120),),
                     exponent_override=2.0)
    from pxlap.solvers import build_supersolution_small_lambda
    ubar, lt = build_supersolution_small_lambda(g)
    assert ubar.max() == pytest.approx(0.125, abs=1e-10)
    assert lt == pytest.approx(8 ** 1.5, rel=1e-8)


def test_supersolution_residual_sign(grid, supersolution):
    ubar, lt = supersolution
    assert np.all(ubar[grid.interior] > 0)
    for f in (0.1, 0.5, 1.0):
        assert np.min(en.residual(ubar, EnergyVariant("F", f * lt), grid)) >= -1e-12


def test_monotone_zero_lambda(grid):
    out = monotone_iteration(0.0, grid)
    assert out.status == CONVERGED and np.all(out.solution == 0)


def test_monotone_increasing_in_lambda(grid, supersolution):
    _, lt = supersolution
    sols = [monotone_iteration(f * lt, grid).solution for f in (0.3, 0.6, 0.9)]
    for a, b in zip(sols, sols[1:]):
        assert np.all(a <= b + 1e-10)


def test_monotone_diverges_far_above_threshold(grid):
    out = monotone_iteration(400.0, grid)
    assert out.status == DIVERGED and out.solution is None
    tail = out.iterates_sup_norms[-5:]
    assert tail[-1] > 1e6 and all(b >= 1.05 * a for a, b in zip(tail, tail[1:]))


def test_monotone_stalls_on_tiny_budget(grid):
    out = monotone_iteration(100.0, grid, SolverParams(monotone_max_iter=3))
    assert out.status == STALLED


def test_converged_solution_solves_equation(grid, supersolution):
    _, lt = supersolution
    out = monotone_iteration(lt, grid)
    assert out.residual_norm <= 1e-9
    u, r = newton_solve(out.solution, EnergyVariant("F", lt), grid, tol=1e-13)
    assert np.max(np.abs(u - out.solution)) < 1e-8


def test_truncated_degenerate_interval(grid, supersolution):
    _, lt = supersolution
    w = monotone_iteration(lt, grid).solution
    ut = minimize_truncated(lt, w, w, grid)
    assert np.max(np.abs(ut - w)) < 1e-9 * w.max()


def test_truncated_at_lower_end(grid, supersolution):
    _, lt = supersolution
    u1 = monotone_iteration(lt, grid).solution
    u2 = monotone_iteration(1.5 * lt, grid).solution
    ut = minimize_truncated(lt, u1, u2, grid)
    # u1 itself is only as accurate as the monotone increment tolerance
    assert np.max(np.abs(ut - u1)) < 1e-8


def test_truncated_rejects_unordered(grid, supersolution):
    _, lt = supersolution
    w = monotone_iteration(lt, grid).solution
    with pytest.raises(ValueError):
        minimize_truncated(lt, 2 * w, w, grid)


def test_ordering_error_is_solver_error():
    from pxlap.solvers import SolverError
    assert issubclass(OrderingError, SolverError)


def test_two_dimensional_monotone(grid2d):
    from pxlap.solvers import build_supersolution_small_lambda
    ubar, lt = build_supersolution_small_lambda(grid2d)
    out = monotone_iteration(0.5 * lt, grid2d)
    assert out.status == CONVERGED
    assert np.all(out.solution <= ubar + 1e-10)
    assert out.monotone_violation <= 1e-12


def test_domain_scaling_of_sublinear_solution():
    spec = DomainSpec()
    g = build_grid(spec, 101)
    sub, _ = d2_subgrid(g)
    v1 = solve_plaplacian_sublinear(sub, 1.0)
    v3 = solve_plaplacian_sublinear(sub, 3.0)
    assert np.max(np.abs(v3 - 3 ** spec.gamma * v1)) < 1e-6 * v3.max()
