"""Periodic cell problems and the homogenized tensor.

The corrector for direction ``i`` is written ``w_i = y_i + phi_i`` with a
periodic fluctuation ``phi_i`` that minimizes the cell energy

    sum_e weight_e * (delta_{dir(e), i} + (phi_b - phi_a) / h)**2 * h**2

over the lattice edges of the material part of the cell. Edges into the hole
carry zero weight, which is the discrete zero-flux condition on the hole
boundary. The minimizer is unique up to constants; it is pinned by a zero
fluid-weighted mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import CellGrid, CellSpec, build_cell_grid

DEFAULT_TOL = 1e-10


class CellSolverError(RuntimeError):
    """Corrector solve failed."""


def conjugate_gradient(apply, rhs, precond=None, tol=1e-10, maxiter=None, project=None):
    """Preconditioned conjugate gradients for a symmetric positive semidefinite operator.

    ``project`` (optional) removes null-space components from every residual
    and search direction; the right-hand side must already be consistent.
    Returns ``(x, relative_residual, iterations)``. Raises CellSolverError when
    the relative residual does not drop below ``tol`` within ``maxiter``.
    """
    n = rhs.size
    maxiter = 10 * n if maxiter is None else maxiter
    precond = (lambda r: r) if precond is None else precond
    project = (lambda v: v) if project is None else project
    x = np.zeros_like(rhs)
    r = project(rhs.copy())
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return x, 0.0, 0
    z = project(precond(r))
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        q = apply(p)
        step = rz / (p @ q)
        x += step * p
        r -= step * q
        r = project(r)
        res = np.linalg.norm(r) / norm_b
        if res < tol:
            return x, res, it
        z = project(precond(r))
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CellSolverError(f"CG did not reach tolerance {tol:g} in {maxiter} iterations (residual {res:.3e})")


def _difference_matrix(grid: CellGrid) -> sp.csr_matrix:
    a, b, _, _ = grid.edges
    n_edges = a.size
    rows = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
    cols = np.concatenate([b, a])
    vals = np.concatenate([np.ones(n_edges), -np.ones(n_edges)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_edges, grid.dofs.size))


def _unit_gradient(grid: CellGrid, direction: int) -> np.ndarray:
    """Edge differences of the linear function ``y_direction`` (times no 1/h)."""
    return np.where(grid.edges[3] == direction, grid.h, 0.0)


@dataclass(frozen=True)
class CorrectorField:
    """Periodic fluctuation ``phi_i`` on the material nodes of a cell grid.

    ``direction`` is 1 or 2. Values follow ``grid.dofs`` ordering.
    """

    direction: int
    values: np.ndarray
    grid: CellGrid = field(repr=False)
    residual: float
    iterations: int

    def as_array(self, fill: float = np.nan) -> np.ndarray:
        """Values on the full (m, m) node array; hole-interior nodes get ``fill``."""
        out = np.full(self.grid.m * self.grid.m, fill)
        out[self.grid.dofs] = self.values
        return out.reshape(self.grid.m, self.grid.m)

    def edge_gradient(self) -> np.ndarray:
        """``h * (e_i + grad phi_i)`` projected on every edge."""
        a, b, _, _ = self.grid.edges
        return _unit_gradient(self.grid, self.direction - 1) + self.values[b] - self.values[a]


def solve_corrector(grid: CellGrid, direction: int, tol: float = DEFAULT_TOL, maxiter: int | None = None) -> CorrectorField:
    if direction not in (1, 2):
        raise ValueError(f"direction must be 1 or 2, got {direction}")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    D = _difference_matrix(grid)
    W = sp.diags(grid.edges[2])
    L = (D.T @ W @ D).tocsr()
    rhs = -(D.T @ (grid.edges[2] * _unit_gradient(grid, direction - 1)))
    scale = np.abs(rhs).sum()
    if scale > 0 and abs(rhs.sum()) > 1e-12 * scale:
        raise CellSolverError("cell system is inconsistent; the geometry is not periodic")
    diag = L.diagonal()
    if np.any(diag <= 0):
        raise CellSolverError("isolated material node in the cell grid")

    def project(v):
        return v - v.mean()

    phi, res, its = conjugate_gradient(lambda v: L @ v, rhs, lambda r: r / diag, tol, maxiter, project)
    frac = grid.fluid_fraction.ravel()[grid.dofs]
    phi -= (frac @ phi) / frac.sum()
    return CorrectorField(direction, phi, grid, float(res), its)


@dataclass(frozen=True)
class HomogenizedTensor:
    """Effective diffusion matrix with the cell constants it was derived from.

    ``matrix`` is the energy-form tensor. ``literal_matrix`` holds the
    zeroth-order product ``int_{Y*} w_i w_j`` for documentation only.
    """

    matrix: np.ndarray
    theta: float
    lam: float
    rho: float | None = None
    m: int | None = None
    tol: float | None = None
    iterations: tuple[int, int] = (0, 0)
    residuals: tuple[float, float] = (0.0, 0.0)
    literal_matrix: np.ndarray | None = field(default=None, repr=False)
    correctors: tuple | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_values(cls, a11: float, a12: float, a22: float, theta: float, lam: float) -> "HomogenizedTensor":
        """Tensor given directly (synthetic or read back from a cell table)."""
        mat = np.array([[a11, a12], [a12, a22]], dtype=float)
        return cls(matrix=mat, theta=float(theta), lam=float(lam))

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))

    @property
    def coercivity(self) -> float:
        """Smallest eigenvalue: ``xi . A xi >= coercivity`` for unit ``xi``."""
        return float(self.eigenvalues[0])

    @property
    def alpha(self) -> float:
        """Mean diagonal entry (the scalar value for isotropic tensors)."""
        return float(0.5 * (self.matrix[0, 0] + self.matrix[1, 1]))

    def csv_row(self) -> dict:
        a = self.matrix
        return {
            "rho": self.rho, "m": self.m, "theta": self.theta, "lambda": self.lam,
            "a11": a[0, 0], "a12": a[0, 1], "a21": a[1, 0], "a22": a[1, 1],
            "residual1": self.residuals[0], "residual2": self.residuals[1],
            "iters1": self.iterations[0], "iters2": self.iterations[1],
        }


def homogenized_tensor(correctors, grid: CellGrid) -> HomogenizedTensor:
    c1, c2 = sorted(correctors, key=lambda c: c.direction)
    if (c1.direction, c2.direction) != (1, 2) or c1.grid is not grid or c2.grid is not grid:
        raise ValueError("need the direction-1 and direction-2 correctors of this grid")
    w = grid.edges[2]
    grads = [c1.edge_gradient(), c2.edge_gradient()]
    mat = np.array([[np.sum(w * gi * gj) for gj in grads] for gi in grads])
    y1, y2 = grid.coordinates()
    frac = grid.fluid_fraction.ravel()[grid.dofs]
    full = [y1.ravel()[grid.dofs] + c1.values, y2.ravel()[grid.dofs] + c2.values]
    literal = np.array([[grid.h**2 * np.sum(frac * wi * wj) for wj in full] for wi in full])
    return HomogenizedTensor(
        matrix=mat,
        theta=grid.theta,
        lam=grid.lam,
        rho=grid.spec.rho,
        m=grid.m,
        tol=None,
        iterations=(c1.iterations, c2.iterations),
        residuals=(c1.residual, c2.residual),
        literal_matrix=literal,
        correctors=(c1, c2),
    )


def compute_tensor(spec: CellSpec, tol: float = DEFAULT_TOL) -> HomogenizedTensor:
    """Build the cell grid, solve both correctors and assemble the tensor."""
    grid = build_cell_grid(spec)
    correctors = [solve_corrector(grid, i, tol) for i in (1, 2)]
    tensor = homogenized_tensor(correctors, grid)
    return HomogenizedTensor(**{**tensor.__dict__, "tol": tol})


def effective_gradient_matrix(tensor: HomogenizedTensor) -> np.ndarray:
    """``A* / theta``: maps the macroscopic gradient to the cell-averaged flux factor."""
    return tensor.matrix / tensor.theta
