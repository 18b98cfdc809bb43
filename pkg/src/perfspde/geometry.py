"""Periodicity cell, perforated domain grids and transfer maps.

Both the unit cell and the perforated unit square are uniform node lattices.
The geometry is described at the level of grid *squares*: a square is either
material or hole, and everything else is derived from that indicator.

* node fluid fraction = share of the four surrounding squares that are material
  (1 inside the material, 1/2 on a hole side, 3/4 at a hole corner, 0 inside)
* edge weight = share of the two squares beside the edge that are material
  (1 in the material, 1/2 along the hole perimeter, 0 across the hole)
* perimeter edges (weight 1/2) carry the hole boundary; each node on the
  perimeter gets half of each incident perimeter edge as surface measure

With these conventions the discrete fluid area per cell is exactly
``1 - rho**2`` and the discrete perimeter is exactly ``4 * rho``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
import scipy.sparse as sp

MAX_NODES = 4_000_000


class GeometryError(ValueError):
    """Invalid geometric parameters."""


class NodeClass(IntEnum):
    FLUID = 0
    HOLE_INTERIOR = 1
    HOLE_BOUNDARY = 2
    OUTER_BOUNDARY = 3


def _frozen(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class CellSpec:
    """Unit cell [0,1)^2 with a centered square hole of side ``rho``.

    ``m`` is the number of grid intervals per cell side; the hole edges must
    fall on grid lines with at least one material layer around the hole.
    """

    rho: float
    m: int

    def __post_init__(self):
        if not (0.0 <= self.rho < 1.0):
            raise GeometryError(f"hole fraction rho must lie in [0, 1), got {self.rho}")
        if int(self.m) != self.m or self.m < 1:
            raise GeometryError(f"resolution m must be a positive integer, got {self.m}")
        layers = self.m * (1.0 - self.rho) / 2.0
        if abs(layers - round(layers)) > 1e-9 or round(layers) < 1:
            raise GeometryError(
                f"m*(1-rho)/2 = {layers:g} must be a positive integer "
                f"(hole edges on grid lines), rho={self.rho}, m={self.m}"
            )

    @property
    def offset(self) -> int:
        """Material layers between the cell boundary and the hole."""
        return int(round(self.m * (1.0 - self.rho) / 2.0))

    @property
    def hole_intervals(self) -> int:
        return self.m - 2 * self.offset

    @property
    def theta(self) -> float:
        return 1.0 - self.rho**2

    @property
    def lam(self) -> float:
        return 4.0 * self.rho

    def square_mask(self) -> np.ndarray:
        """Boolean (m, m) array, True for material squares."""
        fluid = np.ones((self.m, self.m), dtype=bool)
        a, b = self.offset, self.offset + self.hole_intervals
        fluid[a:b, a:b] = False
        return fluid


def _neighbour_squares(square_fluid: np.ndarray, periodic: bool):
    """Fluid indicator of the four squares around every node.

    Returns an array (4, N, N) ordered (sw, se, nw, ne) where N is the number of
    nodes per side (m for periodic lattices, n + 1 otherwise). Missing squares
    (outside a non-periodic domain) count as material.
    """
    sq = square_fluid.astype(float)
    if periodic:
        sw = np.roll(np.roll(sq, 1, axis=0), 1, axis=1)
        se = np.roll(sq, 1, axis=1)
        nw = np.roll(sq, 1, axis=0)
        ne = sq
        return np.stack([sw, se, nw, ne])
    padded = np.pad(sq, 1, constant_values=1.0)
    sw = padded[:-1, :-1]
    se = padded[1:, :-1]
    nw = padded[:-1, 1:]
    ne = padded[1:, 1:]
    return np.stack([sw, se, nw, ne])


def node_fractions(square_fluid: np.ndarray, periodic: bool) -> np.ndarray:
    return _neighbour_squares(square_fluid, periodic).mean(axis=0)


def _hole_normals(square_fluid: np.ndarray, periodic: bool):
    """Signs (-1, 0, 1) of the into-the-hole normal components at every node."""
    sw, se, nw, ne = 1.0 - _neighbour_squares(square_fluid, periodic)
    nx = np.sign((se + ne) - (sw + nw)).astype(np.int8)
    ny = np.sign((nw + ne) - (sw + se)).astype(np.int8)
    return nx, ny


def edge_list(square_fluid: np.ndarray, periodic: bool):
    """Lattice edges with positive weight.

    Returns ``(a, b, weight, direction)`` where ``a`` and ``b`` are flat node
    indices (row-major over (i, j), x index first), ``direction`` is 0 for
    x-edges and 1 for y-edges, and the edge runs from ``a`` to ``b`` in the
    positive coordinate direction. For non-periodic lattices edges lying on the
    outer boundary are omitted.
    """
    sq = square_fluid.astype(float)
    if periodic:
        m = sq.shape[0]
        i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        # x-edge (i,j)-(i+1,j) sits between squares (i, j-1) and (i, j)
        wx = 0.5 * (np.roll(sq, 1, axis=1) + sq)
        # y-edge (i,j)-(i,j+1) sits between squares (i-1, j) and (i, j)
        wy = 0.5 * (np.roll(sq, 1, axis=0) + sq)
        ax, bx = i * m + j, ((i + 1) % m) * m + j
        ay, by = i * m + j, i * m + (j + 1) % m
    else:
        n = sq.shape[0]
        N = n + 1
        # x-edges with 0 < j < n
        i, j = np.meshgrid(np.arange(n), np.arange(1, n), indexing="ij")
        wx = 0.5 * (sq[i, j - 1] + sq[i, j])
        ax, bx = i * N + j, (i + 1) * N + j
        i, j = np.meshgrid(np.arange(1, n), np.arange(n), indexing="ij")
        wy = 0.5 * (sq[i - 1, j] + sq[i, j])
        ay, by = i * N + j, i * N + j + 1
    a = np.concatenate([ax.ravel(), ay.ravel()])
    b = np.concatenate([bx.ravel(), by.ravel()])
    w = np.concatenate([wx.ravel(), wy.ravel()])
    d = np.concatenate([np.zeros(ax.size, dtype=np.int8), np.ones(ay.size, dtype=np.int8)])
    keep = w > 0
    return a[keep], b[keep], w[keep], d[keep]


@dataclass(frozen=True)
class CellGrid:
    """Discretized periodicity cell.

    Nodes sit at ``(i/m, j/m)`` for ``0 <= i, j < m`` with periodic wraparound.
    Unknowns of cell problems live on nodes with positive fluid fraction.
    """

    spec: CellSpec
    square_fluid: np.ndarray
    node_class: np.ndarray
    fluid_fraction: np.ndarray
    dofs: np.ndarray
    dof_index: np.ndarray
    edges: tuple
    theta: float
    lam: float

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def h(self) -> float:
        return 1.0 / self.spec.m

    def coordinates(self):
        y1 = np.arange(self.m) * self.h
        return np.meshgrid(y1, y1, indexing="ij")

    def counts(self) -> dict[str, int]:
        return {c.name.lower(): int(np.count_nonzero(self.node_class == c)) for c in NodeClass}

    def wrap_index(self, i, j):
        """Flat node index with periodic wraparound."""
        return (np.asarray(i) % self.m) * self.m + np.asarray(j) % self.m


def build_cell_grid(spec: CellSpec) -> CellGrid:
    sq = spec.square_mask()
    frac = node_fractions(sq, periodic=True)
    node_class = np.full(frac.shape, NodeClass.FLUID, dtype=np.int8)
    node_class[frac == 0] = NodeClass.HOLE_INTERIOR
    node_class[(frac > 0) & (frac < 1)] = NodeClass.HOLE_BOUNDARY
    dofs = np.flatnonzero(frac.ravel() > 0)
    dof_index = np.full(frac.size, -1, dtype=np.int64)
    dof_index[dofs] = np.arange(dofs.size)
    a, b, w, d = edge_list(sq, periodic=True)
    edges = (dof_index[a], dof_index[b], w, d)
    _frozen(sq, frac, node_class, dofs, dof_index, *edges)
    return CellGrid(
        spec=spec,
        square_fluid=sq,
        node_class=node_class,
        fluid_fraction=frac,
        dofs=dofs,
        dof_index=dof_index.reshape(frac.shape),
        edges=edges,
        theta=spec.theta,
        lam=spec.lam,
    )


@dataclass(frozen=True)
class PerforatedGrid:
    """The unit square perforated by ``n_eps**2`` periodically placed holes.

    Nodes ``(i, j)``, ``0 <= i, j <= n`` with ``n = n_eps * m`` sit at
    ``(i h, j h)``. Degrees of freedom are ordered fluid nodes first, then
    hole-boundary nodes, each group in row-major node order.
    """

    spec: CellSpec
    n_eps: int
    square_fluid: np.ndarray
    node_class: np.ndarray
    fluid_fraction: np.ndarray
    surface_measure: np.ndarray
    normal_x: np.ndarray
    normal_y: np.ndarray
    fluid_nodes: np.ndarray
    boundary_nodes: np.ndarray
    dof_index: np.ndarray
    edges: tuple = field(repr=False)

    @property
    def eps(self) -> float:
        return 1.0 / self.n_eps

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def n(self) -> int:
        return self.n_eps * self.spec.m

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def dof_nodes(self) -> np.ndarray:
        return np.concatenate([self.fluid_nodes, self.boundary_nodes])

    @property
    def n_fluid(self) -> int:
        return self.fluid_nodes.size

    @property
    def n_boundary(self) -> int:
        return self.boundary_nodes.size

    @property
    def n_dof(self) -> int:
        return self.fluid_nodes.size + self.boundary_nodes.size

    def dof_coordinates(self):
        nodes = self.dof_nodes
        N = self.n + 1
        return (nodes // N) * self.h, (nodes % N) * self.h

    def dof_values(self, grid_array: np.ndarray) -> np.ndarray:
        """Gather a full-grid nodal array onto the DOF ordering."""
        return np.asarray(grid_array).ravel()[self.dof_nodes]

    def bulk_weights(self) -> np.ndarray:
        """Lumped bulk area ``h^2 * fluid fraction`` per DOF."""
        return self.h**2 * self.dof_values(self.fluid_fraction)

    def surface_weights(self) -> np.ndarray:
        """Surface measure ``s_b`` per DOF (zero on fluid nodes)."""
        return self.dof_values(self.surface_measure)

    def counts(self) -> dict[str, int]:
        return {c.name.lower(): int(np.count_nonzero(self.node_class == c)) for c in NodeClass}

    def hole_measures(self) -> np.ndarray:
        """Summed surface measure of every hole, shape (n_eps, n_eps)."""
        N = self.n + 1
        nodes = self.boundary_nodes
        ci, cj = (nodes // N) // self.m, (nodes % N) // self.m
        out = np.zeros((self.n_eps, self.n_eps))
        np.add.at(out, (ci, cj), self.surface_measure.ravel()[nodes])
        return out


def build_perforated_grid(spec: CellSpec, n_eps: int, max_nodes: int = MAX_NODES) -> PerforatedGrid:
    if int(n_eps) != n_eps or n_eps < 1:
        raise GeometryError(f"cells per side must be a positive integer, got {n_eps}")
    n_eps = int(n_eps)
    n = n_eps * spec.m
    if (n + 1) ** 2 > max_nodes:
        raise GeometryError(f"grid with {(n + 1) ** 2} nodes exceeds the cap of {max_nodes}")
    h = 1.0 / n
    sq = np.tile(spec.square_mask(), (n_eps, n_eps))
    frac = node_fractions(sq, periodic=False)
    N = n + 1
    node_class = np.full((N, N), NodeClass.FLUID, dtype=np.int8)
    node_class[frac == 0] = NodeClass.HOLE_INTERIOR
    node_class[(frac > 0) & (frac < 1)] = NodeClass.HOLE_BOUNDARY
    outer = np.zeros((N, N), dtype=bool)
    outer[[0, -1], :] = True
    outer[:, [0, -1]] = True
    node_class[outer] = NodeClass.OUTER_BOUNDARY

    a, b, w, d = edge_list(sq, periodic=False)
    perimeter = w == 0.5
    s = np.zeros(N * N)
    np.add.at(s, a[perimeter], 0.5 * h)
    np.add.at(s, b[perimeter], 0.5 * h)
    s = s.reshape(N, N)
    nx, ny = _hole_normals(sq, periodic=False)
    not_boundary = node_class != NodeClass.HOLE_BOUNDARY
    nx[not_boundary] = 0
    ny[not_boundary] = 0

    flat = node_class.ravel()
    fluid_nodes = np.flatnonzero(flat == NodeClass.FLUID)
    boundary_nodes = np.flatnonzero(flat == NodeClass.HOLE_BOUNDARY)
    dof_index = np.full(N * N, -1, dtype=np.int64)
    dof_index[fluid_nodes] = np.arange(fluid_nodes.size)
    dof_index[boundary_nodes] = fluid_nodes.size + np.arange(boundary_nodes.size)
    frac[outer] = 0.0
    _frozen(sq, frac, node_class, s, nx, ny, fluid_nodes, boundary_nodes, dof_index, a, b, w, d)
    return PerforatedGrid(
        spec=spec,
        n_eps=n_eps,
        square_fluid=sq,
        node_class=node_class,
        fluid_fraction=frac,
        surface_measure=s,
        normal_x=nx,
        normal_y=ny,
        fluid_nodes=fluid_nodes,
        boundary_nodes=boundary_nodes,
        dof_index=dof_index,
        edges=(a, b, w, d),
    )


def zero_extend(values: np.ndarray, grid: PerforatedGrid) -> np.ndarray:
    """Extend a DOF vector (fluid then boundary values) by zero to all nodes.

    Returns an ``(n + 1, n + 1)`` nodal array; hole-interior and outer-boundary
    nodes hold 0. A trailing batch axis is carried through.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.n_dof:
        raise ValueError(f"field has {values.shape[0]} entries, grid has {grid.n_dof} DOFs")
    N = grid.n + 1
    out = np.zeros((N * N,) + values.shape[1:])
    out[grid.dof_nodes] = values
    return out.reshape((N, N) + values.shape[1:])


def nodal_l2_norm(field: np.ndarray, h: float) -> float:
    """Discrete L2 norm with weight h^2 per node."""
    return float(np.sqrt(h * h * np.sum(np.asarray(field) ** 2)))


def trapezoid_weights(n: int) -> np.ndarray:
    """Tensor trapezoid weights on the (n+1)^2 nodes of the unit square."""
    w = np.full(n + 1, 1.0 / n)
    w[[0, -1]] *= 0.5
    return np.outer(w, w)


def square_averages(field: np.ndarray, square_weights: np.ndarray | None = None) -> np.ndarray:
    """Mean of the four corner values of every grid square, optionally masked."""
    f = np.asarray(field, dtype=float)
    avg = 0.25 * (f[:-1, :-1] + f[1:, :-1] + f[:-1, 1:] + f[1:, 1:])
    if square_weights is not None:
        avg = avg * square_weights
    return avg


def restrict_to_common_grid(
    field: np.ndarray, n_c: int, square_weights: np.ndarray | None = None
) -> np.ndarray:
    """Cell-average a nodal field onto an ``n_c x n_c`` cell-centered grid.

    Each fine square takes the mean of its corners (times ``square_weights``,
    used to zero out hole squares); fine squares are then block-averaged. The
    trapezoid mean of the fine field equals the plain mean of the result.
    """
    f = np.asarray(field, dtype=float)
    n = f.shape[0] - 1
    if f.shape != (n + 1, n + 1):
        raise ValueError(f"expected a square nodal array, got shape {f.shape}")
    if n_c < 1 or n % n_c:
        raise ValueError(f"common grid {n_c} does not divide fine grid {n}")
    r = n // n_c
    sq = square_averages(f, square_weights)
    return sq.reshape(n_c, r, n_c, r).mean(axis=(1, 3))


def restriction_matrix(
    n: int, n_c: int, dof_nodes: np.ndarray, square_weights: np.ndarray | None = None
) -> sp.csr_matrix:
    """Sparse version of :func:`restrict_to_common_grid` acting on DOF vectors."""
    if n_c < 1 or n % n_c:
        raise ValueError(f"common grid {n_c} does not divide fine grid {n}")
    r = n // n_c
    N = n + 1
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    wsq = np.ones(n * n) if square_weights is None else np.asarray(square_weights, float).ravel()
    coarse = ((i // r) * n_c + j // r).ravel()
    rows, cols, vals = [], [], []
    for di in (0, 1):
        for dj in (0, 1):
            rows.append(coarse)
            cols.append(((i + di) * N + j + dj).ravel())
            vals.append(0.25 * wsq / (r * r))
    node_to_coarse = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_c * n_c, N * N)
    )
    inject = sp.csr_matrix(
        (np.ones(dof_nodes.size), (dof_nodes, np.arange(dof_nodes.size))), shape=(N * N, dof_nodes.size)
    )
    return (node_to_coarse @ inject).tocsr()


def nodal_gradient_operators(edges: tuple, dof_index: np.ndarray, fraction: np.ndarray, h: float):
    """Sparse nodal gradient (Gx, Gy) acting on DOF vectors.

    At a node p the x-derivative is ``sum_e w_e (u_b - u_a) / (2 h fraction_p)``
    over incident x-edges; this is the centered difference in the material,
    the one-sided difference next to a hole side and a weighted blend at hole
    corners. Summing ``h^2 fraction_p * grad_p`` reproduces the edge quadrature
    of the gradient exactly. Nodes outside the DOF set hold the value 0.
    """
    a, b, w, d = edges
    flat = np.asarray(dof_index).ravel()
    ia, ib = flat[a], flat[b]
    n_dof = int(flat.max()) + 1
    node_of_dof = np.empty(n_dof, dtype=np.int64)
    valid = flat >= 0
    node_of_dof[flat[valid]] = np.flatnonzero(valid)
    inv_frac = 1.0 / np.asarray(fraction).ravel()[node_of_dof]
    ops = []
    for direction in (0, 1):
        sel = d == direction
        ea, eb, coef = ia[sel], ib[sel], 0.5 * w[sel] / h
        rows, cols, vals = [], [], []
        for p in (ea, eb):
            for q, sign in ((eb, 1.0), (ea, -1.0)):
                keep = (p >= 0) & (q >= 0)
                rows.append(p[keep])
                cols.append(q[keep])
                vals.append(sign * coef[keep])
        G = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_dof, n_dof)
        )
        ops.append((sp.diags(inv_frac) @ G).tocsr())
    return ops[0], ops[1]


def grid_summary_csv(grids) -> str:
    """CSV of node counts per class and derived constants for each grid."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["epsilon", "h", "rho", "m", "fluid", "hole_interior", "hole_boundary", "outer_boundary", "theta", "lambda"]
    )
    for g in grids:
        c = g.counts()
        writer.writerow(
            [repr(g.eps), repr(g.h), repr(g.spec.rho), g.m, c["fluid"], c["hole_interior"],
             c["hole_boundary"], c["outer_boundary"], repr(g.spec.theta), repr(g.spec.lam)]
        )
    return buf.getvalue()
