import numpy as np
import pytest

from pxlap import energy as en
from pxlap.energy import EnergyVariant
from pxlap.mountain_pass import (COLLAPSED, FOUND, MPParams, _reparametrize, _stiffness, d1_bump,
                                 default_peak, mountain_pass)
from pxlap.solvers import minimize_truncated, monotone_iteration


@pytest.fixture(scope="module")
def setup(grid, lambda_star):
    lam = 0.5 * lambda_star.lo
    u1 = monotone_iteration(0.9 * lam, grid).solution
    u2 = monotone_iteration(1.1 * lam, grid).solution
    ut = minimize_truncated(lam, u1, u2, grid)
    return lam, u1, ut


def test_bump_supported_in_d1(grid):
    w = d1_bump(grid)
    assert w.max() == pytest.approx(1.0)
    assert np.all(w[grid.in_d2] == 0) and np.all(w[grid.boundary] == 0)


def test_peak_energy_below_minimizer(grid, setup):
    lam, u1, ut = setup
    peak = default_peak(lam, ut, u1, grid)
    v = EnergyVariant("Ghat", lam, lower=u1)
    assert en.energy(peak, v, grid) < en.energy(ut, v, grid) - 1.0


def test_reparametrize_keeps_endpoints_and_evens_spacing(coarse, rng):
    K = _stiffness(coarse)
    m = coarse.interior.size
    t = np.sort(rng.random(9))
    t[0], t[-1] = 0, 1
    a, b = rng.random(m), rng.random(m)
    path = (1 - t)[:, None] * a + t[:, None] * b
    out = _reparametrize(path, K)
    assert np.array_equal(out[0], path[0]) and np.array_equal(out[-1], path[-1])
    seg = np.sqrt(np.einsum("ij,ij->i", np.diff(out, axis=0), (K @ np.diff(out, axis=0).T).T))
    assert np.allclose(seg, seg.mean(), rtol=1e-10)


def test_found_contracts(grid, setup):
    lam, u1, ut = setup
    peak = default_peak(lam, ut, u1, grid)
    out = mountain_pass(lam, ut, peak, u1, grid)
    assert out.status in (FOUND, COLLAPSED)
    if out.status == FOUND:
        v = out.critical_point
        gh = EnergyVariant("Ghat", lam, lower=u1)
        assert np.max(np.abs(en.residual(v, gh, grid))) <= 1e-6
        assert out.level >= out.base_level - 1e-8
        assert np.min(v - u1) >= -1e-8
        assert np.max(np.abs(v - ut)) > 1e-2 * np.max(np.abs(ut))
    assert np.array_equal(out.endpoints[0], ut) and np.array_equal(out.endpoints[1], peak)


def test_rejects_bad_peak(grid, setup):
    lam, u1, ut = setup
    with pytest.raises(ValueError):
        mountain_pass(lam, ut, ut, u1, grid)


def test_max_iter_reported(grid, setup):
    lam, u1, ut = setup
    peak = default_peak(lam, ut, u1, grid)
    out = mountain_pass(lam, ut, peak, u1, grid, MPParams(max_outer=3, polish_every=1000))
    assert out.status == "MaxIter" and out.iterations == 3
