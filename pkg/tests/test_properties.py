"""Property-based checks on small grids."""
import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pxlap import energy as en
from pxlap.cli import parse_config
from pxlap.energy import EnergyVariant
from pxlap.mesh import DomainSpec, GridError, build_grid

GRID = build_grid(DomainSpec(), 21)
GRID2 = build_grid(DomainSpec(dimension=2), 11)
N = GRID.n_nodes

values = st.floats(-2, 2, allow_nan=False, allow_infinity=False)
fields = arrays(np.float64, N, elements=values).map(
    lambda u: np.where(GRID.boundary, 0.0, u))
pos_fields = arrays(np.float64, N, elements=st.floats(0, 2)).map(
    lambda u: np.where(GRID.boundary, 0.0, u))
fields2 = arrays(np.float64, GRID2.n_nodes, elements=values).map(
    lambda u: np.where(GRID2.boundary, 0.0, u))


@given(pos_fields, st.floats(0, 50))
def test_f_and_g_agree_on_nonnegative_fields(u, lam):
    assert np.isclose(en.energy(u, EnergyVariant("F", lam), GRID),
                      en.energy(u, EnergyVariant("G", lam), GRID), rtol=1e-12, atol=1e-12)


@given(st.floats(0.05, 1.0), st.floats(0.01, 0.99), st.floats(0, 50))
def test_gtilde_matches_f_inside_interval(base, theta, lam):
    u1 = np.where(GRID.boundary, 0.0, base)
    u2 = 2 * u1 + 0.1
    u = u1 + theta * (u2 - u1)
    u[GRID.boundary] = 0.0
    a = en.residual(u, EnergyVariant("Gtilde", lam, lower=u1, upper=u2), GRID)
    b = en.residual(u, EnergyVariant("F", lam), GRID)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


@given(fields, fields)
def test_operator_monotone(u, w):
    dr = en.gradient_residual(u, GRID) - en.gradient_residual(w, GRID)
    assert dr @ (u - w) >= -1e-9 * (1 + np.abs(dr).sum())


@given(fields2, fields2)
def test_operator_monotone_2d(u, w):
    dr = en.gradient_residual(u, GRID2) - en.gradient_residual(w, GRID2)
    assert dr @ (u - w) >= -1e-9 * (1 + np.abs(dr).sum())


@given(fields, st.floats(-5, 5))
def test_norm_homogeneity(u, c):
    a, b = en.norms(c * u, GRID), en.norms(u, GRID)
    assert np.isclose(a.grad_lp_d2, abs(c) * b.grad_lp_d2, rtol=1e-9, atol=1e-12)
    assert np.isclose(a.grad_l2_d1, abs(c) * b.grad_l2_d1, rtol=1e-9, atol=1e-12)
    assert a.bracket_norm == a.grad_l2_d1 + a.grad_lp_d2


@given(fields)
def test_residual_vanishes_on_boundary(u):
    r = en.residual(u, EnergyVariant("F", 3.0), GRID)
    assert np.all(r[GRID.boundary] == 0)


@given(fields, fields)
def test_auxiliary_convexity(v, w):
    f = np.ones(N)
    gap = (en.auxiliary_energy(w, f, GRID) - en.auxiliary_energy(v, f, GRID)
           - en.auxiliary_residual(v, f, GRID) @ (w - v))
    assert gap >= -1e-10


@given(st.floats(0.01, 1), st.floats(0, 1), st.floats(1.01, 3), st.floats(-5, 5))
def test_truncation_is_clamped_power(lo, frac, q, s):
    hi = lo + frac
    val = en.truncation_h(s, lo, q, upper=hi)
    assert lo ** q - 1e-12 <= val <= hi ** q + 1e-12
    assert np.isclose(val, min(max(s, lo), hi) ** q)
    assert np.isclose(en.truncation_h(s, lo, q), max(s, lo) ** q)


@given(st.floats(2.01, 6), st.floats(0.01, 5))
def test_exponent_constraint_matches_rule(p, q):
    ok = 2 < q + 1 < p
    try:
        DomainSpec(p=p, q=q)
        accepted = True
    except GridError:
        accepted = False
    assert accepted == ok


@given(st.sampled_from([11, 21, 31]), st.integers(1, 9), st.integers(2, 9))
def test_grid_aligns_interface(n, ka, width):
    a, b = ka / 20, min(ka + width, 19) / 20
    try:
        g = build_grid(DomainSpec(a=a, b=b), n)
    except GridError as err:
        # only under-resolution may be refused on these aligned-able inputs
        assert "resolved" in str(err) and (b - a) * (n - 1) < 2.5
        return
    assert a in g.coords[0] and b in g.coords[0]
    assert g.shape[0] >= n
    assert g.coords[0][0] == 0.0 and g.coords[0][-1] == 1.0


@given(st.floats(0.01, 100), st.integers(5, 400))
def test_override_wins(lam, n):
    cfg, _ = parse_config(None, {"lambda": repr(lam), "n": str(n)})
    assert cfg.lam == lam and cfg.n == n
