"""Drift catalog for the perforated-domain equation and its homogenized limit.

All nonlinear entries are oriented dissipatively: the drift pairs negatively
with the state, ``(f(u) - f(v)) (u - v) <= 0`` for the polynomial and cube-root
kinds.

The homogenized drift needs to translate between the macroscopic unknown
``U`` (zero-extended average, ``U ~ theta * u``) and the material value ``u``.
``argument="consistent"`` evaluates the nonlinearity at ``U / theta``;
``argument="literal"`` evaluates it at ``U`` itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .cell_solver import CorrectorField
from .fields import FieldExpr

DRIFT_ARGUMENTS = ("consistent", "literal")


@dataclass(frozen=True)
class Forcing:
    """State-independent source ``f(x)``."""

    f: FieldExpr = field(default_factory=lambda: FieldExpr.constant(0.0))
    kind = "forcing"


@dataclass(frozen=True)
class Lipschitz:
    """``c u + d sin(u)`` with Lipschitz constant ``|c| + |d|``."""

    c: float = -1.0
    d: float = 0.0
    kind = "lipschitz"

    @property
    def lipschitz_constant(self) -> float:
        return abs(self.c) + abs(self.d)


@dataclass(frozen=True)
class Polynomial:
    """``-a(x) |u|^p u`` with ``a`` bounded away from zero."""

    a: FieldExpr = field(default_factory=lambda: FieldExpr.constant(1.0))
    p: float = 2.0
    kind = "polynomial"

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"exponent p must be positive, got {self.p}")
        lo, _ = self.a.bounds()
        if not lo > 0:
            raise ValueError(f"coefficient a must be bounded below by a positive constant, min is {lo}")


@dataclass(frozen=True)
class MonotoneSublinear:
    """``-s cbrt(u)``: monotone, sublinear, not Lipschitz at 0."""

    s: float = 1.0
    kind = "monotone"

    def __post_init__(self):
        if self.s < 0:
            raise ValueError(f"scale s must be nonnegative, got {self.s}")


_H_KINDS = ("linear", "sin")


@dataclass(frozen=True)
class Gradient:
    """``h(u) . grad u`` with ``h_i(u) = c_i u`` or ``c_i sin(u)``."""

    h1: tuple[str, float] = ("sin", 1.0)
    h2: tuple[str, float] = ("sin", 0.0)
    kind = "gradient"

    def __post_init__(self):
        for name, _ in (self.h1, self.h2):
            if name not in _H_KINDS:
                raise ValueError(f"gradient coefficient kind must be one of {_H_KINDS}, got {name!r}")

    @property
    def lipschitz_constant(self) -> float:
        return max(abs(self.h1[1]), abs(self.h2[1]))

    def coefficients(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for name, c in (self.h1, self.h2):
            out.append(c * u if name == "linear" else c * np.sin(u))
        return out[0], out[1]


DriftSpec = Union[Forcing, Lipschitz, Polynomial, MonotoneSublinear, Gradient]

_COEFF = re.compile(r"^\s*(linear|sin)\s*\(\s*([^()]+?)\s*\)\s*$")


def parse_coefficient(text: str) -> tuple[str, float]:
    """``linear(c)`` or ``sin(c)`` for the gradient-drift coefficients."""
    match = _COEFF.match(text)
    if match is None:
        raise ValueError(f"expected linear(c) or sin(c), got {text!r}")
    try:
        return match.group(1), float(match.group(2))
    except ValueError:
        raise ValueError(f"non-numeric coefficient in {text!r}") from None


def drift_from_settings(settings) -> DriftSpec:
    """Drift spec from a ``[drift]`` settings namespace."""
    kind = settings.kind
    if kind == "forcing":
        return Forcing(settings.f)
    if kind == "lipschitz":
        return Lipschitz(settings.c, settings.d)
    if kind == "polynomial":
        return Polynomial(settings.a, settings.p)
    if kind == "monotone":
        return MonotoneSublinear(settings.s)
    if kind == "gradient":
        return Gradient(parse_coefficient(settings.h1), parse_coefficient(settings.h2))
    raise ValueError(f"unknown drift kind {kind!r}")


def needs_gradient(spec: DriftSpec) -> bool:
    return isinstance(spec, Gradient)


def bind_drift(spec: DriftSpec, x, y) -> Callable:
    """Precompute spatial coefficients at fixed nodes.

    Returns ``evaluate(u, grad=None)`` for ``u`` of shape ``(n,)`` or
    ``(n, batch)``; ``grad`` is a pair of arrays shaped like ``u``. No input
    validation happens here, so non-finite states propagate.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)

    def col(values, u):
        return values.reshape(values.shape + (1,) * (u.ndim - 1))

    if isinstance(spec, Forcing):
        fx = spec.f(x, y)
        return lambda u, grad=None: np.broadcast_to(col(fx, u), u.shape).copy()
    if isinstance(spec, Lipschitz):
        return lambda u, grad=None: spec.c * u + spec.d * np.sin(u)
    if isinstance(spec, Polynomial):
        ax = spec.a(x, y)
        return lambda u, grad=None: -col(ax, u) * np.abs(u) ** spec.p * u
    if isinstance(spec, MonotoneSublinear):
        return lambda u, grad=None: -spec.s * np.cbrt(u)
    if isinstance(spec, Gradient):

        def evaluate(u, grad=None):
            if grad is None:
                raise ValueError("gradient drift needs the state gradient")
            h1, h2 = spec.coefficients(u)
            return h1 * grad[0] + h2 * grad[1]

        return evaluate
    raise TypeError(f"unknown drift spec {spec!r}")


def _check_inputs(spec, u, grad):
    if needs_gradient(spec) and grad is None:
        raise ValueError("gradient drift needs the state gradient")
    if not np.all(np.isfinite(u)):
        raise ValueError("state contains non-finite values")
    if grad is not None and not all(np.all(np.isfinite(g)) for g in grad):
        raise ValueError("gradient contains non-finite values")


def eval_drift(spec: DriftSpec, t: float, u, x, y, grad_u=None) -> np.ndarray:
    """Pointwise drift ``f(t, x, u, grad u)`` at the nodes ``(x, y)``.

    Coefficients are time-independent; ``t`` is accepted for interface
    uniformity.
    """
    u = np.asarray(u, float)
    grad_u = None if grad_u is None else tuple(np.asarray(g, float) for g in grad_u)
    _check_inputs(spec, u, grad_u)
    return bind_drift(spec, x, y)(u, grad_u)


def bind_effective_drift(spec: DriftSpec, theta: float, flux_matrix, x, y, argument: str = "consistent") -> Callable:
    """Homogenized counterpart of :func:`bind_drift`.

    ``flux_matrix`` is ``A*/theta``. For the gradient kind the result is
    ``h(arg) . (flux_matrix grad U)``; otherwise ``theta * f(arg)``, where
    ``arg`` is ``U / theta`` or ``U`` depending on ``argument``.
    """
    if argument not in DRIFT_ARGUMENTS:
        raise ValueError(f"drift argument must be one of {DRIFT_ARGUMENTS}, got {argument!r}")
    base = bind_drift(spec, x, y)
    scale = 1.0 / theta if argument == "consistent" else 1.0
    if isinstance(spec, Gradient):
        mat = np.asarray(flux_matrix, float)

        def evaluate(U, grad=None):
            if grad is None:
                raise ValueError("gradient drift needs the state gradient")
            gx = mat[0, 0] * grad[0] + mat[0, 1] * grad[1]
            gy = mat[1, 0] * grad[0] + mat[1, 1] * grad[1]
            return base(scale * U, (gx, gy))

        return evaluate
    return lambda U, grad=None: theta * base(scale * U, grad)


def eval_effective_drift(
    spec: DriftSpec, theta: float, flux_matrix, t: float, U, x, y, grad_U=None, argument: str = "consistent"
) -> np.ndarray:
    U = np.asarray(U, float)
    grad_U = None if grad_U is None else tuple(np.asarray(g, float) for g in grad_U)
    _check_inputs(spec, U, grad_U)
    return bind_effective_drift(spec, theta, flux_matrix, x, y, argument)(U, grad_U)


def cell_average_fstar_oracle(h_values, grad_U, correctors: tuple[CorrectorField, CorrectorField], theta: float) -> float:
    """Direct cell quadrature of ``h . chi [grad U + sum_i dU/dx_i grad phi_i] / theta``.

    Each lattice edge stands for the area ``weight * h^2`` of material and
    carries the gradient component along its own direction.
    """
    c1, c2 = sorted(correctors, key=lambda c: c.direction)
    grid = c1.grid
    _, _, w, d = grid.edges
    hv = np.asarray(h_values, float)
    gU = np.asarray(grad_U, float)
    # component of the bracket along each edge, times h
    comp = gU[0] * c1.edge_gradient() + gU[1] * c2.edge_gradient()
    return float(np.sum(w * grid.h * hv[d] * comp) / theta)
