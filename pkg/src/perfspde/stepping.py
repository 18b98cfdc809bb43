"""Semi-implicit Euler-Maruyama stepping shared by both solvers.

Each step solves

    (diag(mass) + dt * K) z_new = mass * z + dt * drift_weight * N(z) + B1 dW1 + B2 dW2

for a block of paths stored as columns. ``B1`` and ``B2`` map per-mode
Brownian increments to weighted nodal loads. The matrix is factored once; the
factorization doubles as the positive-definiteness check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

BLOWUP_CAP = 1e8


class NumericalError(RuntimeError):
    """A linear system or time step could not be carried out."""


def factor_spd(matrix: sp.spmatrix):
    """Sparse LU of a symmetric matrix with a symmetric ordering.

    With identical row and column permutations and no off-diagonal pivoting,
    the diagonal of U holds the pivots of an LDL^T factorization, so the
    matrix is positive definite iff all of them are positive.
    """
    lu = spla.splu(
        sp.csc_matrix(matrix),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    if np.array_equal(lu.perm_r, lu.perm_c):
        smallest = float(lu.U.diagonal().min())
    else:  # pragma: no cover - SuperLU kept the symmetric ordering in all tested cases
        smallest = float(spla.eigsh(matrix, k=1, sigma=0, which="LM", return_eigenvectors=False)[0])
    if not smallest > 0:
        raise NumericalError(f"implicit system matrix is not positive definite (pivot {smallest:.3e})")
    return lu


def conjugate_gradient_solver(matrix: sp.spmatrix, tol: float = 1e-12):
    """Column-wise Jacobi-preconditioned CG with the ``solve`` interface of a factor."""
    A = sp.csr_matrix(matrix)
    inv_diag = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda v: inv_diag * v)

    class _Solver:
        def solve(self, rhs):
            rhs2 = rhs.reshape(rhs.shape[0], -1)
            out = np.empty_like(rhs2)
            for c in range(rhs2.shape[1]):
                x, info = spla.cg(A, rhs2[:, c], rtol=tol, atol=0.0, M=M, maxiter=10 * A.shape[0])
                if info != 0:
                    raise NumericalError(f"CG did not converge (info={info})")
                out[:, c] = x
            return out.reshape(rhs.shape)

    return _Solver()


@dataclass(frozen=True)
class SemiImplicitSystem:
    """Everything a time step needs; immutable and shared by all paths."""

    mass: np.ndarray
    stiffness: sp.csr_matrix
    dt: float
    drift_weight: np.ndarray
    noise_maps: tuple[np.ndarray, np.ndarray]
    gradient: tuple[sp.csr_matrix, sp.csr_matrix]
    solver: object = field(repr=False)

    @property
    def size(self) -> int:
        return self.mass.size

    def energy(self, z: np.ndarray) -> np.ndarray:
        """Mass-weighted squared norm per column."""
        mass = self.mass.reshape(self.mass.shape + (1,) * (z.ndim - 1))
        return np.sum(mass * z * z, axis=0)

    def form(self, z: np.ndarray) -> np.ndarray:
        """Stiffness energy ``z^T K z`` per column."""
        return np.sum((self.stiffness @ z) * z, axis=0)


def build_system(mass, stiffness, dt, drift_weight, noise_maps, gradient, solver: str = "direct") -> SemiImplicitSystem:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    mass = np.asarray(mass, float)
    if np.any(mass <= 0):
        raise NumericalError("mass matrix has non-positive entries")
    matrix = sp.diags(mass) + dt * stiffness
    if solver == "direct":
        factor = factor_spd(matrix)
    elif solver == "cg":
        factor_spd(matrix)
        factor = conjugate_gradient_solver(matrix)
    else:
        raise ValueError(f"unknown linear solver {solver!r}")
    return SemiImplicitSystem(
        mass=mass,
        stiffness=sp.csr_matrix(stiffness),
        dt=float(dt),
        drift_weight=np.asarray(drift_weight, float),
        noise_maps=tuple(np.asarray(b, float) for b in noise_maps),
        gradient=gradient,
        solver=factor,
    )


@dataclass
class BatchResult:
    """Recorded observables for a block of paths (last axis = path)."""

    sample_steps: np.ndarray
    functionals: np.ndarray  # (n_samples, n_functionals, batch)
    energy_x0: np.ndarray  # (n_samples, batch)
    energy_x1: np.ndarray  # (batch,) running sum of dt * z^T K z
    l2_time: np.ndarray  # (batch,) space-time L2 norm on the common grid
    final: np.ndarray  # (n_dof, batch)
    failed_step: np.ndarray  # (batch,) -1 when the path finished
    trajectory: list | None = None  # common-grid fields at every step, if requested


def run_batch(
    system: SemiImplicitSystem,
    drift: Callable | None,
    z0: np.ndarray,
    increments: tuple[np.ndarray | None, np.ndarray | None],
    n_steps: int,
    sample_steps,
    functional_matrix: sp.spmatrix | np.ndarray,
    restriction: sp.spmatrix,
    cell_area: float,
    blowup_cap: float = BLOWUP_CAP,
    keep_trajectory: bool = False,
    on_step: Callable | None = None,
) -> BatchResult:
    """March ``z0`` (shape ``(n_dof, batch)``) for ``n_steps`` steps.

    ``increments`` holds arrays ``(n_steps, J, batch)`` for the two noises, or
    ``None`` for a noise that is switched off. A path whose state leaves
    ``[-blowup_cap, blowup_cap]`` or turns non-finite is marked failed at that
    step and frozen at zero; its later records are NaN.
    """
    z = np.array(z0, dtype=float, copy=True)
    if z.ndim == 1:
        z = z[:, None]
    batch = z.shape[1]
    dt = system.dt
    sample_steps = np.asarray(sample_steps, dtype=int)
    sample_pos = {int(s): k for k, s in enumerate(sample_steps)}
    n_fun = functional_matrix.shape[0]
    functionals = np.full((sample_steps.size, n_fun, batch), np.nan)
    energy_x0 = np.full((sample_steps.size, batch), np.nan)
    energy_x1 = np.zeros(batch)
    l2_sq = np.zeros(batch)
    failed = np.full(batch, -1, dtype=int)
    trajectory = [] if keep_trajectory else None
    mass = system.mass[:, None]
    weight = system.drift_weight[:, None]
    loads = [(b, inc) for b, inc in zip(system.noise_maps, increments) if inc is not None]
    if 0 in sample_pos:
        functionals[sample_pos[0]] = functional_matrix @ z
        energy_x0[sample_pos[0]] = np.sum(mass * z * z, axis=0)

    for step in range(1, n_steps + 1):
        rhs = mass * z
        if drift is not None:
            grad = None
            if system.gradient is not None:
                grad = (system.gradient[0] @ z, system.gradient[1] @ z)
            with np.errstate(all="ignore"):
                rhs += dt * weight * drift(z, grad)
        for b, inc in loads:
            # not BLAS: gemm blocking depends on the column count, which would tie a path's bits to its batch
            rhs += np.einsum("nj,jb->nb", b, inc[step - 1])
        z = system.solver.solve(rhs)
        bad = ~np.all(np.isfinite(z), axis=0) | (np.max(np.abs(z), axis=0, initial=0.0) > blowup_cap)
        fresh = bad & (failed < 0)
        if np.any(fresh):
            failed[fresh] = step
        if np.any(failed >= 0):
            z[:, failed >= 0] = 0.0
        alive = failed < 0
        energy_x1 += np.where(alive, dt * system.form(z), 0.0)
        coarse = restriction @ z
        l2_sq += dt * cell_area * np.sum(coarse * coarse, axis=0)
        if keep_trajectory:
            trajectory.append(coarse)
        if step in sample_pos:
            k = sample_pos[step]
            functionals[k] = np.where(alive, functional_matrix @ z, np.nan)
            energy_x0[k] = np.where(alive, np.sum(mass * z * z, axis=0), np.nan)
        if on_step is not None:
            on_step(step, z)

    dead = failed >= 0
    energy_x1[dead] = np.nan
    l2 = np.sqrt(l2_sq)
    l2[dead] = np.nan
    return BatchResult(sample_steps, functionals, energy_x0, energy_x1, l2, z, failed, trajectory)


def step_counts(T: float, dt: float, sample_times) -> tuple[int, np.ndarray]:
    """Number of steps to reach ``T`` and the step index of each sample time."""
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError(f"final time {T} is not a whole number of steps of {dt}")
    steps = np.array([int(round(t / dt)) for t in sample_times], dtype=int)
    if np.any(steps < 0) or np.any(steps > n_steps):
        raise ValueError("sample times must lie in [0, T]")
    return n_steps, steps


@dataclass(frozen=True)
class PathRecord:
    """Observables of one sample path."""

    path_id: int
    sample_times: tuple[float, ...]
    functionals: np.ndarray  # (n_samples, n_functionals)
    energy_x0: np.ndarray  # (n_samples,)
    energy_x1: float
    l2_norm: float
    failed_step: int | None = None
    final: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def failed(self) -> bool:
        return self.failed_step is not None


def simulate_batches(
    system: SemiImplicitSystem,
    drift: Callable | None,
    z0: np.ndarray,
    path_ids,
    increments: Callable,
    T: float,
    sample_times,
    probe,
    batch_size: int = 100,
    blowup_cap: float = BLOWUP_CAP,
    keep_final: bool = False,
) -> list[PathRecord]:
    """Run paths in fixed-size column blocks; output does not depend on ``batch_size``.

    ``increments(ids)`` returns the noise increment pair for a block of path ids.
    """
    path_ids = list(path_ids)
    n_steps, steps = step_counts(T, system.dt, sample_times)
    records = []
    for start in range(0, len(path_ids), batch_size):
        ids = path_ids[start:start + batch_size]
        z = np.repeat(np.asarray(z0, float)[:, None], len(ids), axis=1)
        result = run_batch(
            system, drift, z, increments(ids), n_steps, steps, probe.functionals, probe.restriction,
            probe.cell_area, blowup_cap,
        )
        records.extend(records_from_batch(result, ids, sample_times, keep_final))
    return records


def records_from_batch(result: BatchResult, ids, sample_times, keep_final: bool = False) -> list[PathRecord]:
    out = []
    for c, pid in enumerate(ids):
        failed = int(result.failed_step[c])
        out.append(
            PathRecord(
                path_id=int(pid),
                sample_times=tuple(float(t) for t in sample_times),
                functionals=result.functionals[:, :, c].copy(),
                energy_x0=result.energy_x0[:, c].copy(),
                energy_x1=float(result.energy_x1[c]),
                l2_norm=float(result.l2_time[c]),
                failed_step=None if failed < 0 else failed,
                final=result.final[:, c].copy() if keep_final else None,
            )
        )
    return out
