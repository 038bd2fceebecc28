import numpy as np
import pytest

from oracles import ode_blowup_time
from pxlap.blowup import (blowup_box_grid, interior_d1_box, parabolic_blowup,
                          principal_eigenvalue)
from pxlap.mesh import uniform_grid


@pytest.fixture(scope="module")
def box(grid):
    return blowup_box_grid(grid)[0]


def test_box_inside_d1(grid):
    ((lo, hi),) = interior_d1_box(grid)
    ka = grid.d2_index[0][0]
    assert 0 < lo < hi < ka


def test_principal_eigenvalue_matches_dense(box):
    from pxlap.blowup import laplacian_stiffness
    K = laplacian_stiffness(box).toarray() / box.node_measure
    assert principal_eigenvalue(box) == pytest.approx(np.linalg.eigvalsh(K)[0], rel=1e-10)


def test_zero_stays_zero(box):
    rep = parabolic_blowup(5.0, np.zeros(box.n_nodes), box, t_max=0.1)
    assert not rep.blew_up and max(rep.supnorm_trace) == 0


def test_heat_decays(box):
    z0 = np.where(box.boundary, 0.0, 10.0)
    rep = parabolic_blowup(0.0, z0, box, t_max=1.0)
    assert rep.status == "Bounded"
    assert np.all(np.diff(rep.supnorm_trace) <= 0)


def test_blowup_before_ode_bound(box):
    z0 = np.where(box.boundary, 0.0, 10.0)
    rep = parabolic_blowup(50.0, z0, box)
    assert rep.blew_up and rep.t_event < ode_blowup_time(50.0, 1.5, 10.0, principal_eigenvalue(box))
    tail = np.array(rep.supnorm_trace[-20:])
    assert np.all(np.diff(tail) > 0) and tail[-1] > 1e6


def test_dt_underflow_is_inconclusive(box):
    z0 = np.where(box.boundary, 0.0, 10.0)
    rep = parabolic_blowup(50.0, z0, box, max_growth=1e-9, dt_min=1e-6)
    assert rep.status == "Inconclusive" and not rep.blew_up


def test_rejects_negative_data(box):
    with pytest.raises(ValueError):
        parabolic_blowup(1.0, -np.ones(box.n_nodes), box)


def test_ode_oracle_sanity():
    # pure power law y' = y^2 from 1 blows up at t = 1
    assert ode_blowup_time(1.0, 2.0, 1.0, 0.0) == pytest.approx(1.0, rel=1e-8)
    assert ode_blowup_time(1.0, 1.5, 1.0, 10.0) == np.inf
