"""Split domain, interface-aligned structured grids and the edge exponent field.

The domain is a box ``Omega`` containing a closed sub-box ``D2`` where the
operator is the p-Laplacian; everywhere else (``D1``) it is the Laplacian.
Grids are tensor-product and uniform per axis, with the faces of ``D2``
sitting exactly on grid lines so that each edge belongs to one region.

Fields are plain 1-D numpy arrays of nodal values in C order over
``grid.shape``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

_ALIGN_TOL = 1e-9
_MAX_SNAP_FACTOR = 8


class GridError(ValueError):
    """Raised when a domain cannot be discretized as requested.

    ``key`` names the offending field when one can be singled out.
    """

    def __init__(self, msg, key=None):
        super().__init__(msg)
        self.key = key


@dataclass(frozen=True)
class DomainSpec:
    """Box ``Omega`` with a strictly interior box ``D2`` and exponents p, q.

    In 2D the bounds are applied to both axes: ``Omega = [x_lo, x_hi]^2`` and
    ``D2 = [a, b]^2``.
    """

    dimension: int = 1
    x_lo: float = 0.0
    x_hi: float = 1.0
    a: float = 0.4
    b: float = 0.6
    p: float = 3.0
    q: float = 1.5

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.dimension}", "dimension")
        if not self.x_lo < self.x_hi:
            raise GridError("outer box is empty: need x_lo < x_hi", "x_hi")
        if not self.a < self.b:
            raise GridError("D2 is empty: need a < b", "b")
        if not (self.x_lo < self.a and self.b < self.x_hi):
            raise GridError(
                f"D2=[{self.a}, {self.b}] must lie strictly inside "
                f"({self.x_lo}, {self.x_hi}); it touches or crosses the boundary",
                "a" if self.a <= self.x_lo else "b",
            )
        if not self.p > 2:
            raise GridError(f"need p > 2, got p={self.p}", "p")
        if not (2 < self.q + 1 < self.p):
            raise GridError(
                f"need 2 < q+1 < p, got q+1={self.q + 1} with p={self.p}", "q"
            )

    @property
    def gamma(self) -> float:
        """Scaling exponent of the D2 Dirichlet problem, 1/(p-1-q)."""
        return 1.0 / (self.p - 1.0 - self.q)


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor-product grid with per-edge exponent and difference operators.

    Edges are oriented along one axis. ``Dn`` maps nodal values to the
    difference quotient along each edge; ``Dt`` maps them to the averaged
    transverse difference (nonzero rows only for exponent-p edges in 2D).
    ``edge_weight`` is the quadrature weight of each edge term in the
    energy.
    """

    lo: tuple
    hi: tuple
    shape: tuple
    h: tuple
    coords: tuple
    p: float
    q: float
    d2_index: tuple | None  # ((ka, kb), ...) per axis, closed D2, or None
    edge_nodes: np.ndarray
    edge_axis: np.ndarray
    edge_exponent: np.ndarray
    edge_weight: np.ndarray
    Dn: sp.csr_matrix
    Dt: sp.csr_matrix
    boundary: np.ndarray
    interface: np.ndarray
    in_d2: np.ndarray
    interior: np.ndarray = field(init=False)
    node_measure: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "interior", np.flatnonzero(~self.boundary))
        object.__setattr__(self, "node_measure", float(np.prod(self.h)))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_edges(self) -> int:
        return len(self.edge_exponent)

    @property
    def points(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes, dim)."""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def p_edges(self) -> np.ndarray:
        return self.edge_exponent != 2

    @property
    def gamma(self) -> float:
        return 1.0 / (self.p - 1.0 - self.q)

    def check_field(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_nodes,):
            raise ValueError(
                f"field has shape {u.shape}, grid expects ({self.n_nodes},)"
            )
        return u


def _aligned_intervals(lo, hi, knots, n_intervals):
    """Return the knot node indices if all knots fall on nodes, else None."""
    idx = []
    for k in knots:
        s = (k - lo) / (hi - lo) * n_intervals
        r = round(s)
        if abs(s - r) > _ALIGN_TOL * max(1.0, n_intervals):
            return None
        idx.append(int(r))
    return idx


def _snap(lo, hi, knots, n, snap):
    n_int = n - 1
    idx = _aligned_intervals(lo, hi, knots, n_int)
    if idx is not None:
        return n_int, idx
    if not snap:
        raise GridError(
            f"interface {list(knots)} does not fall on nodes of a {n}-node grid "
            f"on [{lo}, {hi}]; pass snap=True or choose another n"
        )
    for m in range(n_int + 1, _MAX_SNAP_FACTOR * n_int + 1):
        idx = _aligned_intervals(lo, hi, knots, m)
        if idx is not None:
            log.info("snapped grid on [%g, %g] from %d to %d nodes", lo, hi, n, m + 1)
            return m, idx
    raise GridError(f"cannot align interface {list(knots)} with at most "
                    f"{_MAX_SNAP_FACTOR * n_int + 1} nodes")


def uniform_grid(lo, hi, n_intervals, p, q, d2_index=None, exponent_override=None):
    """Assemble a grid from per-axis bounds and interval counts.

    ``d2_index`` gives, per axis, the node indices ``(ka, kb)`` bounding the
    closed D2 box, or ``None`` for a pure-Laplacian grid. No checks on p, q
    or on the position of D2 are made here; use :func:`build_grid` for
    validated problem grids. ``exponent_override`` forces every edge to that
    exponent (used for all-D2 model problems).
    """
    lo = tuple(float(v) for v in np.atleast_1d(lo))
    hi = tuple(float(v) for v in np.atleast_1d(hi))
    n_intervals = tuple(int(v) for v in np.atleast_1d(n_intervals))
    dim = len(lo)
    shape = tuple(m + 1 for m in n_intervals)
    h = tuple((hi[d] - lo[d]) / n_intervals[d] for d in range(dim))
    coords = []
    for d in range(dim):
        c = lo[d] + (hi[d] - lo[d]) * np.arange(shape[d]) / n_intervals[d]
        c[0], c[-1] = lo[d], hi[d]
        coords.append(c)
    if d2_index is not None:
        d2_index = tuple((int(ka), int(kb)) for ka, kb in d2_index)
    n_nodes = int(np.prod(shape))
    ids = np.arange(n_nodes).reshape(shape)

    def in_d2_nodes(multi):
        if d2_index is None:
            return np.zeros(multi[0].shape, dtype=bool)
        ok = np.ones(multi[0].shape, dtype=bool)
        for d in range(dim):
            ka, kb = d2_index[d]
            ok &= (multi[d] >= ka) & (multi[d] <= kb)
        return ok

    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    in_d2 = in_d2_nodes(grids).ravel()
    boundary = np.zeros(shape, dtype=bool)
    for d in range(dim):
        sl = [slice(None)] * dim
        sl[d] = 0
        boundary[tuple(sl)] = True
        sl[d] = -1
        boundary[tuple(sl)] = True
    boundary = boundary.ravel()

    interface = np.zeros(n_nodes, dtype=bool)
    if d2_index is not None:
        on_face = np.zeros(shape, dtype=bool)
        for d in range(dim):
            ka, kb = d2_index[d]
            on_face |= (grids[d] == ka) | (grids[d] == kb)
        interface = (on_face.ravel() & in_d2) & ~boundary

    edge_nodes, edge_axis, edge_exp, edge_w = [], [], [], []
    rows_n, cols_n, vals_n = [], [], []
    rows_t, cols_t, vals_t = [], [], []
    e0 = 0
    cell = float(np.prod(h))
    for d in range(dim):
        sl0 = [slice(None)] * dim
        sl1 = [slice(None)] * dim
        sl0[d] = slice(0, -1)
        sl1[d] = slice(1, None)
        i0 = ids[tuple(sl0)]
        i1 = ids[tuple(sl1)]
        # edge lies in closed D2 iff both endpoints do (midpoint rule on an aligned grid)
        lower = [g[tuple(sl0)] for g in grids]
        upper = [g[tuple(sl1)] for g in grids]
        e_in_d2 = in_d2_nodes(lower) & in_d2_nodes(upper)
        i0, i1, e_in_d2 = i0.ravel(), i1.ravel(), e_in_d2.ravel()
        ne = i0.size
        if exponent_override is not None:
            pe = np.full(ne, float(exponent_override))
        else:
            pe = np.where(e_in_d2, float(p), 2.0)
        eidx = e0 + np.arange(ne)
        rows_n += [eidx, eidx]
        cols_n += [i0, i1]
        vals_n += [np.full(ne, -1.0 / h[d]), np.full(ne, 1.0 / h[d])]
        # exponent-p edges carry the full gradient, so each orientation gets half the cell
        w = np.where(pe != 2, 0.5 * cell, cell) if dim > 1 else np.full(ne, cell)
        if dim > 1:
            pidx = np.flatnonzero(pe != 2)
            lower_multi = [g[tuple(sl0)].ravel()[pidx] for g in grids]
            upper_multi = [m + (k == d) for k, m in enumerate(lower_multi)]
            t = 1 - d
            for endpoint in (lower_multi, upper_multi):
                plus = [m.copy() for m in endpoint]
                minus = [m.copy() for m in endpoint]
                plus[t] = np.minimum(plus[t] + 1, shape[t] - 1)
                minus[t] = np.maximum(minus[t] - 1, 0)
                span = (plus[t] - minus[t]) * h[t]
                ip = np.ravel_multi_index(tuple(plus), shape)
                im = np.ravel_multi_index(tuple(minus), shape)
                rows_t += [e0 + pidx, e0 + pidx]
                cols_t += [ip, im]
                vals_t += [0.5 / span, -0.5 / span]
        edge_nodes.append(np.stack([i0, i1], axis=1))
        edge_axis.append(np.full(ne, d))
        edge_exp.append(pe)
        edge_w.append(w)
        e0 += ne

    n_edges = e0
    Dn = sp.csr_matrix(
        (np.concatenate(vals_n), (np.concatenate(rows_n), np.concatenate(cols_n))),
        shape=(n_edges, n_nodes),
    )
    if rows_t:
        Dt = sp.csr_matrix(
            (np.concatenate(vals_t), (np.concatenate(rows_t), np.concatenate(cols_t))),
            shape=(n_edges, n_nodes),
        )
    else:
        Dt = sp.csr_matrix((n_edges, n_nodes))
    for arr in (boundary, interface, in_d2):
        arr.setflags(write=False)
    return Grid(
        lo=lo, hi=hi, shape=shape, h=h, coords=tuple(coords), p=float(p), q=float(q),
        d2_index=d2_index,
        edge_nodes=np.concatenate(edge_nodes),
        edge_axis=np.concatenate(edge_axis),
        edge_exponent=np.concatenate(edge_exp),
        edge_weight=np.concatenate(edge_w),
        Dn=Dn, Dt=Dt, boundary=boundary, interface=interface, in_d2=in_d2,
    )


def build_grid(spec: DomainSpec, n: int, snap: bool = True) -> Grid:
    """Discretize ``spec`` with about ``n`` nodes per axis.

    If the faces of D2 do not fall on nodes of the ``n``-node grid the node
    count is increased to the smallest one that aligns them (``snap=True``)
    or a :class:`GridError` is raised (``snap=False``).
    """
    if n < 5:
        raise GridError(f"need at least 5 nodes per axis, got {n}")
    n_int, (ka, kb) = _snap(spec.x_lo, spec.x_hi, (spec.a, spec.b), n, snap)
    if kb - ka + 1 < 3:
        raise GridError(
            f"D2 resolved by only {kb - ka + 1} nodes per axis (need >= 3); increase n"
        )
    dim = spec.dimension
    grid = uniform_grid(
        (spec.x_lo,) * dim, (spec.x_hi,) * dim, (n_int,) * dim, spec.p, spec.q,
        d2_index=((ka, kb),) * dim,
    )
    for c in grid.coords:
        c[ka], c[kb] = spec.a, spec.b
    return grid


def d2_subgrid(grid: Grid):
    """Grid on the closed D2 box with exponent p on every edge.

    Returns ``(subgrid, parent)`` where ``parent[k]`` is the index in
    ``grid`` of subgrid node ``k``.
    """
    if grid.d2_index is None:
        raise GridError("grid has no D2 region")
    return box_subgrid(grid, grid.d2_index, exponent=grid.p)


def box_subgrid(grid: Grid, index_box, exponent=2.0):
    """Sub-grid on the node box ``index_box`` with a single edge exponent."""
    lo = [grid.coords[d][ka] for d, (ka, kb) in enumerate(index_box)]
    hi = [grid.coords[d][kb] for d, (ka, kb) in enumerate(index_box)]
    n_int = [kb - ka for ka, kb in index_box]
    sub = uniform_grid(lo, hi, n_int, grid.p, grid.q, exponent_override=exponent)
    sub_ids = np.meshgrid(*[np.arange(ka, kb + 1) for ka, kb in index_box], indexing="ij")
    parent = np.ravel_multi_index(tuple(s.ravel() for s in sub_ids), grid.shape)
    return sub, parent


def zero_field(grid: Grid) -> np.ndarray:
    return np.zeros(grid.n_nodes)


def constant_field(grid: Grid, c: float) -> np.ndarray:
    """``c`` at interior nodes, 0 on the boundary."""
    u = np.full(grid.n_nodes, float(c))
    u[grid.boundary] = 0.0
    return u
