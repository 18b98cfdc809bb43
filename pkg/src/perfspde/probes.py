"""Linear probes of solution fields on a common comparison grid.

Fields from different grids are first cell-averaged onto an ``n_c x n_c``
grid of squares (see :func:`geometry.restrict_to_common_grid`) and then tested
against sine modes with the midpoint rule at the square centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import restriction_matrix
from .noise import dirichlet_mode


def cell_centers(n_c: int) -> np.ndarray:
    return (np.arange(n_c) + 0.5) / n_c


def functional(field, mode: tuple[int, int], layout: str = "cells") -> float:
    """``<field, e_kl>`` by grid quadrature.

    ``layout="cells"``: ``field`` is ``(n_c, n_c)`` square averages, midpoint
    rule. ``layout="nodes"``: ``field`` is ``(n+1, n+1)`` nodal values on the
    closed unit square, trapezoid rule.
    """
    f = np.asarray(field, float)
    k, l = mode
    if layout == "cells":
        c = cell_centers(f.shape[0])
        x, y = np.meshgrid(c, c, indexing="ij")
        return float(np.sum(f * dirichlet_mode(k, l, x, y)) / f.size)
    if layout == "nodes":
        n = f.shape[0] - 1
        t = np.linspace(0.0, 1.0, n + 1)
        x, y = np.meshgrid(t, t, indexing="ij")
        w = np.full(n + 1, 1.0 / n)
        w[[0, -1]] *= 0.5
        return float(np.sum(np.outer(w, w) * f * dirichlet_mode(k, l, x, y)))
    raise ValueError(f"unknown layout {layout!r}")


def mode_weights(n_c: int, modes) -> np.ndarray:
    """Rows ``e_kl(center) / n_c^2`` so that ``weights @ cells.ravel()`` gives the functionals."""
    c = cell_centers(n_c)
    x, y = np.meshgrid(c, c, indexing="ij")
    return np.stack([dirichlet_mode(k, l, x, y).ravel() / n_c**2 for k, l in modes])


@dataclass(frozen=True)
class Probe:
    """Restriction of DOF vectors to the common grid plus the mode functionals."""

    n_c: int
    modes: tuple
    restriction: sp.csr_matrix
    functionals: sp.csr_matrix

    @property
    def cell_area(self) -> float:
        return 1.0 / self.n_c**2


def make_probe(n: int, n_c: int, dof_nodes: np.ndarray, modes, square_weights=None) -> Probe:
    R = restriction_matrix(n, n_c, dof_nodes, square_weights)
    F = sp.csr_matrix(mode_weights(n_c, modes) @ R)
    return Probe(n_c, tuple(tuple(m) for m in modes), R, F)
