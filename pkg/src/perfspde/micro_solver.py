"""Stochastic heat equation on the perforated square with dynamic hole boundaries.

Unknowns live on fluid nodes and on hole-boundary nodes (fluid first). The
discrete energy is

    sum_edges weight * (z_b - z_a)**2  +  eps * b * sum_boundary s_b * z**2

with unit transmissibility per full edge (the h^2 area and 1/h^2 difference
quotient cancel in 2D). The lumped mass of a node is ``h^2 * fluid_fraction``
plus ``eps^2 * s_b`` on hole-boundary nodes. Drift and bulk noise act on the
bulk share ``h^2 * fluid_fraction`` of every node, boundary noise on
``eps * s_b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .config import Config
from .drift import DriftSpec, Forcing, bind_drift, drift_from_settings, needs_gradient
from .geometry import CellSpec, PerforatedGrid, build_perforated_grid, nodal_gradient_operators
from .noise import SpectralNoiseSpec, path_increments
from .probes import Probe, make_probe
from .stepping import (
    NumericalError,
    PathRecord,
    SemiImplicitSystem,
    conjugate_gradient_solver,
    factor_spd,
    simulate_batches,
)


def edge_laplacian(edges: tuple, dof_index: np.ndarray, n_dof: int) -> sp.csr_matrix:
    """``D^T W D`` over the edges restricted to DOFs; non-DOF endpoints hold 0."""
    a, b, w, _ = edges
    flat = np.asarray(dof_index).ravel()
    ia, ib = flat[a], flat[b]
    rows, cols, vals = [], [], []
    for p, q in ((ia, ib), (ib, ia)):
        ok = p >= 0
        rows.append(p[ok])
        cols.append(p[ok])
        vals.append(w[ok])
        both = ok & (q >= 0)
        rows.append(p[both])
        cols.append(q[both])
        vals.append(-w[both])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_dof, n_dof)
    )


@dataclass(frozen=True)
class MicroState:
    t: float
    u: np.ndarray  # fluid DOFs
    v: np.ndarray  # hole-boundary DOFs
    grid: PerforatedGrid = field(repr=False)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])

    @classmethod
    def from_vector(cls, t: float, z: np.ndarray, grid: PerforatedGrid) -> "MicroState":
        return cls(t, z[: grid.n_fluid].copy(), z[grid.n_fluid:].copy(), grid)


@dataclass(frozen=True)
class MicroOperator:
    """Assembled stiffness, mass and factored implicit matrix for one (grid, b, dt)."""

    grid: PerforatedGrid = field(repr=False)
    b: float
    dt: float
    laplacian: sp.csr_matrix = field(repr=False)
    stiffness: sp.csr_matrix = field(repr=False)
    mass: np.ndarray = field(repr=False)
    bulk_weight: np.ndarray = field(repr=False)
    boundary_weight: np.ndarray = field(repr=False)
    gradient: tuple = field(repr=False)
    solver: object = field(repr=False)

    def system(self, noise: SpectralNoiseSpec | None, with_gradient: bool = False) -> SemiImplicitSystem:
        """Stepping system; noise loads map per-mode increments to weighted nodal values."""
        x, y = self.grid.dof_coordinates()
        if noise is None:
            maps = (np.zeros((x.size, 0)), np.zeros((x.size, 0)))
        else:
            maps = (
                self.bulk_weight[:, None] * noise.mode_matrix(x, y, 1),
                self.boundary_weight[:, None] * noise.mode_matrix(x, y, 2),
            )
        return SemiImplicitSystem(
            mass=self.mass,
            stiffness=self.stiffness,
            dt=self.dt,
            drift_weight=self.bulk_weight,
            noise_maps=maps,
            gradient=self.gradient if with_gradient else None,
            solver=self.solver,
        )


def assemble_micro(grid: PerforatedGrid, b: float, dt: float, solver: str = "direct") -> MicroOperator:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    lap = edge_laplacian(grid.edges, grid.dof_index, grid.n_dof)
    surface = grid.surface_weights()
    boundary_reaction = grid.eps * b * surface
    stiffness = (lap + sp.diags(boundary_reaction)).tocsr()
    mass = grid.bulk_weights() + grid.eps**2 * surface
    matrix = sp.diags(mass) + dt * stiffness
    try:
        factor = factor_spd(matrix)
    except NumericalError as exc:
        raise NumericalError(f"b = {b} makes the implicit micro system indefinite: {exc}") from None
    if solver == "cg":
        factor = conjugate_gradient_solver(matrix)
    elif solver != "direct":
        raise ValueError(f"unknown linear solver {solver!r}")
    gradient = nodal_gradient_operators(grid.edges, grid.dof_index, grid.fluid_fraction, grid.h)
    return MicroOperator(
        grid=grid,
        b=float(b),
        dt=float(dt),
        laplacian=lap,
        stiffness=stiffness,
        mass=mass,
        bulk_weight=grid.bulk_weights(),
        boundary_weight=grid.eps * surface,
        gradient=gradient,
        solver=factor,
    )


def step_micro(state: MicroState, op: MicroOperator, drift: DriftSpec | None, dW1, dW2, dt: float) -> MicroState:
    """One semi-implicit step.

    ``dW1`` holds ``g1 dW1`` at all DOFs, ``dW2`` holds ``g2 dW2`` at the
    hole-boundary DOFs (either may be None).
    """
    if abs(dt - op.dt) > 1e-15 * max(dt, op.dt):
        raise ValueError(f"operator was assembled for dt={op.dt}, got {dt}")
    grid = op.grid
    z = state.vector
    rhs = op.mass * z
    if drift is not None:
        x, y = grid.dof_coordinates()
        grad = (op.gradient[0] @ z, op.gradient[1] @ z) if needs_gradient(drift) else None
        rhs += dt * op.bulk_weight * bind_drift(drift, x, y)(z, grad)
    if dW1 is not None:
        rhs += op.bulk_weight * np.asarray(dW1, float)
    if dW2 is not None:
        rhs[grid.n_fluid:] += op.boundary_weight[grid.n_fluid:] * np.asarray(dW2, float)
    z_new = op.solver.solve(rhs)
    if not np.all(np.isfinite(z_new)):
        raise NumericalError("micro step produced non-finite values")
    return MicroState.from_vector(state.t + dt, z_new, grid)


def initial_vector(grid: PerforatedGrid, cfg: Config) -> np.ndarray:
    """``u0`` at all DOFs; boundary DOFs take the trace or a constant override."""
    x, y = grid.dof_coordinates()
    z0 = cfg.physics.u0(x, y)
    if cfg.physics.v0 != "trace":
        z0[grid.n_fluid:] = float(cfg.physics.v0)
    return z0


def common_grid_size(cfg: Config, ladder=None) -> int:
    if cfg.experiment.common_n:
        return cfg.experiment.common_n
    ladder = ladder or cfg.geometry.ladder
    return min(ladder) * cfg.geometry.m


def micro_probe(grid: PerforatedGrid, n_c: int, modes) -> Probe:
    return make_probe(grid.n, n_c, grid.dof_nodes, modes, grid.square_fluid.astype(float))


@dataclass
class MicroRun:
    """Everything needed to run paths at one ladder point, built once."""

    grid: PerforatedGrid
    op: MicroOperator
    system: SemiImplicitSystem
    drift: object
    z0: np.ndarray
    probe: Probe


def prepare_micro(cfg: Config, n_eps: int, n_c: int | None = None) -> MicroRun:
    spec = CellSpec(cfg.geometry.rho, cfg.geometry.m)
    grid = build_perforated_grid(spec, n_eps, cfg.geometry.max_nodes)
    op = assemble_micro(grid, cfg.physics.b, cfg.time.dt, cfg.solver.linear)
    drift = drift_from_settings(cfg.drift)
    noise = SpectralNoiseSpec(cfg.noise.J, cfg.noise.gamma, cfg.noise.q0, cfg.noise.g1, cfg.noise.g2)
    system = op.system(noise, needs_gradient(drift))
    x, y = grid.dof_coordinates()
    bound = None if isinstance(drift, Forcing) and drift.f.is_zero else bind_drift(drift, x, y)
    n_c = n_c or grid.n
    probe = micro_probe(grid, n_c, cfg.experiment.functionals)
    return MicroRun(grid, op, system, bound, initial_vector(grid, cfg), probe)


def simulate_micro_paths(
    cfg: Config, n_eps: int, path_ids, n_c: int | None = None, keep_final: bool = False, run: MicroRun | None = None
) -> list[PathRecord]:
    """Independent sample paths on the grid with ``n_eps`` cells per side."""
    run = run or prepare_micro(cfg, n_eps, n_c)
    noise = SpectralNoiseSpec(cfg.noise.J, cfg.noise.gamma, cfg.noise.q0, cfg.noise.g1, cfg.noise.g2)
    n_steps = int(round(cfg.time.T / cfg.time.dt))

    def increments(ids):
        return path_increments(noise, ids, n_steps, cfg.time.dt, cfg.seed)

    return simulate_batches(
        run.system, run.drift, run.z0, path_ids, increments, cfg.time.T, cfg.sample_times, run.probe,
        cfg.solver.batch, cfg.solver.blowup_cap, keep_final,
    )


def simulate_micro_path(cfg: Config, n_eps: int, path_id: int, **kwargs) -> PathRecord:
    return simulate_micro_paths(cfg, n_eps, [path_id], **kwargs)[0]
