"""Homogenized stochastic heat equation on the full unit square.

    dU = [div(A* grad U) / theta - r U + F(U, grad U)] dt + theta g1 dW1 + lam g2 dW2

with ``U = 0`` on the boundary. The diffusion enters dissipatively. The
reaction rate ``r`` is ``b * lam / theta`` for ``reaction="consistent"`` and
``b * lam`` for ``reaction="literal"``; ``F`` comes from
:func:`drift.bind_effective_drift`.

Grid: ``n x n`` squares, unknowns on the ``(n-1)^2`` interior nodes in
row-major order (x index first), mass ``h^2`` per node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cell_solver import HomogenizedTensor, effective_gradient_matrix
from .config import Config
from .drift import DriftSpec, Forcing, bind_effective_drift, drift_from_settings, needs_gradient
from .geometry import edge_list, nodal_gradient_operators, node_fractions
from .micro_solver import edge_laplacian
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

REACTIONS = ("consistent", "literal")
INITIAL_RULES = ("theta_times", "divided")


def reaction_rate(tensor: HomogenizedTensor, b: float, reaction: str = "consistent") -> float:
    if reaction not in REACTIONS:
        raise ValueError(f"reaction must be one of {REACTIONS}, got {reaction!r}")
    rate = b * tensor.lam
    return rate / tensor.theta if reaction == "consistent" else rate


def _square_gradients(n: int, h: float):
    """Per-square gradient operators (n^2 x (n+1)^2) from the four corner values."""
    N = n + 1
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    sq = (i * n + j).ravel()
    corners = {(di, dj): ((i + di) * N + j + dj).ravel() for di in (0, 1) for dj in (0, 1)}
    sx = {(0, 0): -1, (1, 0): 1, (0, 1): -1, (1, 1): 1}
    sy = {(0, 0): -1, (1, 0): -1, (0, 1): 1, (1, 1): 1}
    ops = []
    for signs in (sx, sy):
        rows = np.concatenate([sq] * 4)
        cols = np.concatenate([corners[c] for c in signs])
        vals = np.concatenate([np.full(sq.size, signs[c] / (2 * h)) for c in signs])
        ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(n * n, N * N)))
    return ops


def diffusion_matrix(n: int, tensor_matrix: np.ndarray) -> sp.csr_matrix:
    """Stiffness of ``-div(A grad .)`` in the h^2-mass convention on interior nodes.

    Diagonal entries of ``A`` use the 5-point edge form; the off-diagonal entry
    uses square-averaged gradients (the 4-corner cross stencil), which keeps
    the matrix symmetric.
    """
    h = 1.0 / n
    N = n + 1
    full = np.ones((n, n), dtype=bool)
    a, b, w, d = edge_list(full, periodic=False)
    dof_index = -np.ones((N, N), dtype=np.int64)
    dof_index[1:-1, 1:-1] = np.arange((n - 1) ** 2).reshape(n - 1, n - 1)
    n_dof = (n - 1) ** 2
    A = np.asarray(tensor_matrix, float)
    K = A[0, 0] * edge_laplacian((a[d == 0], b[d == 0], w[d == 0], d[d == 0]), dof_index, n_dof)
    K = K + A[1, 1] * edge_laplacian((a[d == 1], b[d == 1], w[d == 1], d[d == 1]), dof_index, n_dof)
    a12 = 0.5 * (A[0, 1] + A[1, 0])
    if a12 != 0.0:
        gx, gy = _square_gradients(n, h)
        interior = np.flatnonzero(dof_index.ravel() >= 0)
        gx, gy = gx[:, interior], gy[:, interior]
        K = K + a12 * h * h * (gx.T @ gy + gy.T @ gx)
    return sp.csr_matrix(K)


@dataclass(frozen=True)
class MacroState:
    t: float
    U: np.ndarray  # interior nodes, row-major
    n: int
    coefficients: dict = field(default_factory=dict)

    def full(self) -> np.ndarray:
        out = np.zeros((self.n + 1, self.n + 1))
        out[1:-1, 1:-1] = self.U.reshape(self.n - 1, self.n - 1)
        return out


@dataclass(frozen=True)
class MacroOperator:
    n: int
    tensor: HomogenizedTensor = field(repr=False)
    b: float
    dt: float
    reaction: str
    rate: float
    stiffness: sp.csr_matrix = field(repr=False)
    mass: np.ndarray = field(repr=False)
    gradient: tuple = field(repr=False)
    solver: object = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def dof_nodes(self) -> np.ndarray:
        N = self.n + 1
        i, j = np.meshgrid(np.arange(1, self.n), np.arange(1, self.n), indexing="ij")
        return (i * N + j).ravel()

    def coordinates(self):
        nodes = self.dof_nodes
        N = self.n + 1
        return (nodes // N) * self.h, (nodes % N) * self.h

    def coefficients(self) -> dict:
        t = self.tensor
        return {"theta": t.theta, "lambda": t.lam, "b": self.b, "A": t.matrix.tolist(), "reaction_rate": self.rate}

    def system(self, noise: SpectralNoiseSpec | None, with_gradient: bool = False) -> SemiImplicitSystem:
        x, y = self.coordinates()
        if noise is None:
            maps = (np.zeros((x.size, 0)), np.zeros((x.size, 0)))
        else:
            maps = (
                (self.tensor.theta * self.mass)[:, None] * noise.mode_matrix(x, y, 1),
                (self.tensor.lam * self.mass)[:, None] * noise.mode_matrix(x, y, 2),
            )
        return SemiImplicitSystem(
            mass=self.mass,
            stiffness=self.stiffness,
            dt=self.dt,
            drift_weight=self.mass,
            noise_maps=maps,
            gradient=self.gradient if with_gradient else None,
            solver=self.solver,
        )


def assemble_macro(
    n: int, tensor: HomogenizedTensor, b: float, dt: float, reaction: str = "consistent", solver: str = "direct"
) -> MacroOperator:
    if n < 2:
        raise ValueError(f"macro grid needs at least 2 intervals, got {n}")
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if tensor.coercivity <= 0:
        raise ValueError("homogenized tensor is not positive definite")
    h = 1.0 / n
    n_dof = (n - 1) ** 2
    rate = reaction_rate(tensor, b, reaction)
    mass = np.full(n_dof, h * h)
    K = diffusion_matrix(n, tensor.matrix) / tensor.theta + sp.diags(rate * mass)
    K = sp.csr_matrix(K)
    matrix = sp.diags(mass) + dt * K
    try:
        factor = factor_spd(matrix)
    except NumericalError as exc:
        raise NumericalError(f"b = {b} makes the implicit macro system indefinite: {exc}") from None
    if solver == "cg":
        factor = conjugate_gradient_solver(matrix)
    elif solver != "direct":
        raise ValueError(f"unknown linear solver {solver!r}")
    N = n + 1
    dof_index = -np.ones((N, N), dtype=np.int64)
    dof_index[1:-1, 1:-1] = np.arange(n_dof).reshape(n - 1, n - 1)
    full = np.ones((n, n), dtype=bool)
    gradient = nodal_gradient_operators(
        edge_list(full, periodic=False), dof_index, node_fractions(full, periodic=False), h
    )
    return MacroOperator(n, tensor, float(b), float(dt), reaction, rate, K, mass, gradient, factor)


def step_macro(state: MacroState, op: MacroOperator, drift: DriftSpec | None, dW1, dW2, dt: float,
               argument: str = "consistent") -> MacroState:
    """One semi-implicit step; ``dW1``/``dW2`` hold ``g_i dW_i`` at the interior nodes."""
    if abs(dt - op.dt) > 1e-15 * max(dt, op.dt):
        raise ValueError(f"operator was assembled for dt={op.dt}, got {dt}")
    t = op.tensor
    U = state.U
    rhs = op.mass * U
    if drift is not None:
        x, y = op.coordinates()
        fn = bind_effective_drift(drift, t.theta, effective_gradient_matrix(t), x, y, argument)
        grad = (op.gradient[0] @ U, op.gradient[1] @ U) if needs_gradient(drift) else None
        rhs += dt * op.mass * fn(U, grad)
    if dW1 is not None:
        rhs += op.mass * t.theta * np.asarray(dW1, float)
    if dW2 is not None:
        rhs += op.mass * t.lam * np.asarray(dW2, float)
    U_new = op.solver.solve(rhs)
    if not np.all(np.isfinite(U_new)):
        raise NumericalError("macro step produced non-finite values")
    return MacroState(state.t + dt, U_new, op.n, op.coefficients())


def initial_macro_vector(op: MacroOperator, u0, rule: str = "theta_times") -> np.ndarray:
    """``theta * u0`` (``rule="theta_times"``) or ``u0 / theta`` (``rule="divided"``)."""
    if rule not in INITIAL_RULES:
        raise ValueError(f"initial rule must be one of {INITIAL_RULES}, got {rule!r}")
    x, y = op.coordinates()
    theta = op.tensor.theta
    values = u0(x, y)
    return theta * values if rule == "theta_times" else values / theta


@dataclass
class MacroRun:
    op: MacroOperator
    system: SemiImplicitSystem
    drift: object
    z0: np.ndarray
    probe: Probe


def macro_probe(op: MacroOperator, n_c: int, modes) -> Probe:
    return make_probe(op.n, n_c, op.dof_nodes, modes)


def prepare_macro(cfg: Config, tensor: HomogenizedTensor, n_c: int | None = None) -> MacroRun:
    op = assemble_macro(cfg.macro.n, tensor, cfg.physics.b, cfg.time.dt, cfg.macro.reaction, cfg.solver.linear)
    drift = drift_from_settings(cfg.drift)
    noise = SpectralNoiseSpec(cfg.noise.J, cfg.noise.gamma, cfg.noise.q0, cfg.noise.g1, cfg.noise.g2)
    system = op.system(noise, needs_gradient(drift))
    x, y = op.coordinates()
    bound = None
    if not (isinstance(drift, Forcing) and drift.f.is_zero):
        bound = bind_effective_drift(drift, tensor.theta, effective_gradient_matrix(tensor), x, y,
                                     cfg.macro.drift_argument)
    probe = macro_probe(op, n_c or op.n, cfg.experiment.functionals)
    return MacroRun(op, system, bound, initial_macro_vector(op, cfg.physics.u0, cfg.macro.initial), probe)


MACRO_PATH_OFFSET = 1 << 32


def simulate_macro_paths(
    cfg: Config, tensor: HomogenizedTensor, path_ids, n_c: int | None = None, keep_final: bool = False,
    run: MacroRun | None = None, id_offset: int = 0,
) -> list[PathRecord]:
    """Sample paths of the homogenized model.

    Noise for path ``p`` is drawn at address ``p + id_offset``; with offset 0
    the increments coincide with those of the micro path ``p``.
    """
    run = run or prepare_macro(cfg, tensor, n_c)
    noise = SpectralNoiseSpec(cfg.noise.J, cfg.noise.gamma, cfg.noise.q0, cfg.noise.g1, cfg.noise.g2)
    n_steps = int(round(cfg.time.T / cfg.time.dt))

    def increments(ids):
        return path_increments(noise, [i + id_offset for i in ids], n_steps, cfg.time.dt, cfg.seed)

    return simulate_batches(
        run.system, run.drift, run.z0, path_ids, increments, cfg.time.T, cfg.sample_times, run.probe,
        cfg.solver.batch, cfg.solver.blowup_cap, keep_final,
    )


def simulate_macro_path(cfg: Config, tensor: HomogenizedTensor, path_id: int, **kwargs) -> PathRecord:
    return simulate_macro_paths(cfg, tensor, [path_id], **kwargs)[0]
