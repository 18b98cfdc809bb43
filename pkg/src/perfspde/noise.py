"""Truncated Q-Wiener increments in the Dirichlet sine basis of the unit square.

Every Gaussian draw is addressed by ``(master_seed, path_id, noise_id, step)``.
The four integers are folded through a splitmix64 chain into a 128-bit key for
a Philox-4x64-10 counter generator; its raw 64-bit output is turned into
uniforms on 53 bits and then into normals by the inverse normal CDF. No
generator state is shared between draws, so any path can be regenerated in
isolation and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtri

from .fields import FieldExpr

RNG_ALGORITHM = (
    "philox4x64-10 keyed by splitmix64 chain over (seed, path_id, noise_id, step); "
    "uniform = ((raw >> 11) + 0.5) * 2**-53; normal = inverse normal cdf"
)

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64(*coords: int) -> int:
    """Fold integer coordinates into one 64-bit value."""
    state = 0
    for c in coords:
        state = splitmix64(state ^ splitmix64(int(c) & _MASK))
    return state


def standard_normals(master_seed: int, path_id: int, noise_id: int, step: int, count: int) -> np.ndarray:
    """``count`` standard normals addressed by the four counter coordinates."""
    k0 = mix64(master_seed, path_id, noise_id, step)
    bitgen = np.random.Philox(key=np.array([k0, splitmix64(k0)], dtype=np.uint64))
    raw = bitgen.random_raw(count)
    uniforms = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(uniforms)


def mode_order(count: int) -> list[tuple[int, int]]:
    """First ``count`` index pairs (k, l) by eigenvalue k^2 + l^2, ties by (k, l)."""
    if count < 1:
        return []
    radius = 1
    while True:
        pairs = [(k, l) for k in range(1, radius + 1) for l in range(1, radius + 1)]
        pairs.sort(key=lambda kl: (kl[0] ** 2 + kl[1] ** 2, kl[0], kl[1]))
        # every pair with eigenvalue below (radius+1)^2 + 1 is inside the box
        limit = (radius + 1) ** 2 + 1
        if sum(1 for k, l in pairs if k * k + l * l < limit) >= count:
            return pairs[:count]
        radius *= 2


def dirichlet_mode(k: int, l: int, x, y) -> np.ndarray:
    """L2-normalized Dirichlet eigenfunction ``2 sin(k pi x) sin(l pi y)``."""
    return 2.0 * np.sin(k * np.pi * np.asarray(x, float)) * np.sin(l * np.pi * np.asarray(y, float))


@dataclass(frozen=True)
class SpectralNoiseSpec:
    """Diagonal covariance ``q_j = q0 * j**-gamma`` on the first ``J`` sine modes."""

    J: int = 16
    gamma: float = 2.0
    q0: float = 0.1
    g1: FieldExpr = field(default_factory=lambda: FieldExpr.constant(1.0))
    g2: FieldExpr = field(default_factory=lambda: FieldExpr.constant(1.0))

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 1:
            raise ValueError(f"mode count J must be a positive integer, got {self.J}")
        if self.q0 < 0:
            raise ValueError(f"q0 must be nonnegative, got {self.q0}")

    @cached_property
    def modes(self) -> list[tuple[int, int]]:
        return mode_order(self.J)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        j = np.arange(1, self.J + 1, dtype=float)
        return self.q0 * j ** (-self.gamma)

    def multiplier(self, noise_id: int) -> FieldExpr:
        if noise_id not in (1, 2):
            raise ValueError(f"noise id must be 1 or 2, got {noise_id}")
        return self.g1 if noise_id == 1 else self.g2

    def mode_matrix(self, x, y, noise_id: int | None = None) -> np.ndarray:
        """Columns ``sqrt(q_j) e_j`` at the points, times ``g_noise_id`` if given.

        Multiplying by a (J,) or (J, batch) array of increments yields the noise
        field at the points.
        """
        x = np.asarray(x, float).ravel()
        y = np.asarray(y, float).ravel()
        cols = np.stack([dirichlet_mode(k, l, x, y) for k, l in self.modes], axis=1)
        cols *= np.sqrt(self.eigenvalues)
        if noise_id is not None:
            cols *= self.multiplier(noise_id)(x, y)[:, None]
        return cols


@dataclass(frozen=True)
class NoiseIncrement:
    values: np.ndarray
    dt: float
    noise_id: int


def sample_increment(
    spec: SpectralNoiseSpec, path_id: int, noise_id: int, step: int, dt: float, master_seed: int
) -> NoiseIncrement:
    """Per-mode Brownian increments ``N(0, dt)`` for one (path, noise, step)."""
    if dt < 0:
        raise ValueError("time step must be nonnegative")
    z = standard_normals(master_seed, path_id, noise_id, step, spec.J)
    return NoiseIncrement(np.sqrt(dt) * z, dt, noise_id)


def increment_block(
    spec: SpectralNoiseSpec, path_ids, noise_id: int, n_steps: int, dt: float, master_seed: int
) -> np.ndarray:
    """Increments for many paths and steps, shape ``(n_steps, J, len(path_ids))``."""
    out = np.empty((n_steps, spec.J, len(path_ids)))
    sq = np.sqrt(dt)
    for c, pid in enumerate(path_ids):
        for s in range(n_steps):
            out[s, :, c] = standard_normals(master_seed, pid, noise_id, s, spec.J)
    out *= sq
    return out


def evaluate_noise_field(
    inc: NoiseIncrement, spec: SpectralNoiseSpec, x, y, apply_multiplier: bool = True
) -> np.ndarray:
    """``sum_j sqrt(q_j) e_j(x) dbeta_j``, optionally times ``g_i`` for the increment's noise."""
    noise_id = inc.noise_id if apply_multiplier else None
    return spec.mode_matrix(x, y, noise_id) @ inc.values


@dataclass(frozen=True)
class TraceReport:
    noise_id: int
    J: int
    gamma: float
    partial_sum: float
    convergent: bool

    @property
    def verdict(self) -> str:
        return "convergent" if self.convergent else "divergent"


def check_trace_condition(spec: SpectralNoiseSpec, noise_id: int, quadrature_n: int = 128) -> TraceReport:
    """Partial sum of ``q_j ||g_i e_j||^2`` (trapezoid quadrature) and the decay verdict."""
    g = spec.multiplier(noise_id)
    t = np.linspace(0.0, 1.0, quadrature_n + 1)
    x, y = np.meshgrid(t, t, indexing="ij")
    w = np.full(quadrature_n + 1, 1.0 / quadrature_n)
    w[[0, -1]] *= 0.5
    weights = np.outer(w, w)
    gv = g(x, y) ** 2
    total = 0.0
    for qj, (k, l) in zip(spec.eigenvalues, spec.modes):
        if qj == 0.0:
            continue
        total += qj * float(np.sum(weights * gv * dirichlet_mode(k, l, x, y) ** 2))
    return TraceReport(noise_id, spec.J, float(spec.gamma), float(total), spec.gamma > 1.0)


def noise_active(spec: SpectralNoiseSpec, noise_id: int) -> bool:
    return spec.q0 > 0 and not spec.multiplier(noise_id).is_zero


def path_increments(
    spec: SpectralNoiseSpec, path_ids, n_steps: int, dt: float, master_seed: int
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Increment blocks of both noises for a set of paths; ``None`` for a switched-off noise."""
    return tuple(
        increment_block(spec, path_ids, nid, n_steps, dt, master_seed) if noise_active(spec, nid) else None
        for nid in (1, 2)
    )
