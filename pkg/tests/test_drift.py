import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfspde.cell_solver import compute_tensor, effective_gradient_matrix, solve_corrector
from perfspde.drift import (
    Forcing,
    Gradient,
    Lipschitz,
    MonotoneSublinear,
    Polynomial,
    cell_average_fstar_oracle,
    eval_drift,
    eval_effective_drift,
    parse_coefficient,
)
from perfspde.fields import FieldExpr
from perfspde.geometry import CellSpec, build_cell_grid

X = np.array([0.3])
Y = np.array([0.6])


def test_polynomial_value():
    assert eval_drift(Polynomial(FieldExpr.constant(1.0), 2.0), 0.0, [2.0], X, Y)[0] == -8.0


def test_monotone_at_zero():
    assert eval_drift(MonotoneSublinear(1.0), 0.0, [0.0], X, Y)[0] == 0.0


def test_gradient_value():
    spec = Gradient(("linear", 1.0), ("linear", 0.0))
    out = eval_drift(spec, 0.0, [3.0], X, Y, (np.array([2.0]), np.array([0.0])))
    assert out[0] == 6.0


def test_gradient_needs_gradient():
    with pytest.raises(ValueError):
        eval_drift(Gradient(), 0.0, [1.0], X, Y)


def test_non_finite_state_rejected():
    with pytest.raises(ValueError):
        eval_drift(Lipschitz(), 0.0, [np.nan], X, Y)


@pytest.mark.parametrize("bad", [dict(p=0.0), dict(a=FieldExpr.constant(0.0)), dict(a=FieldExpr.parse("sines(1,1,1)"))])
def test_polynomial_preconditions(bad):
    with pytest.raises(ValueError):
        Polynomial(**bad)


def test_parse_coefficient():
    assert parse_coefficient("sin(0.5)") == ("sin", 0.5)
    assert parse_coefficient(" linear( -2 ) ") == ("linear", -2.0)
    with pytest.raises(ValueError):
        parse_coefficient("cos(1)")


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.sampled_from([Forcing(FieldExpr.constant(2.0)), Lipschitz(-1.0, 0.5),
                                          Polynomial(), MonotoneSublinear(2.0)]))
def test_effective_drift_degenerates_without_holes(u, spec):
    direct = eval_drift(spec, 0.0, [u], X, Y)
    eff = eval_effective_drift(spec, 1.0, np.eye(2), 0.0, [u], X, Y)
    np.testing.assert_array_equal(direct, eff)


def test_effective_polynomial_literal_argument():
    out = eval_effective_drift(Polynomial(), 0.75, np.eye(2), 0.0, [2.0], X, Y, argument="literal")
    assert out[0] == pytest.approx(-6.0)


def test_effective_polynomial_consistent_argument():
    out = eval_effective_drift(Polynomial(), 0.75, np.eye(2), 0.0, [2.0], X, Y)
    assert out[0] == pytest.approx(-0.75 * (2 / 0.75) ** 3)


def test_unknown_argument_rejected():
    with pytest.raises(ValueError):
        eval_effective_drift(Polynomial(), 0.75, np.eye(2), 0.0, [2.0], X, Y, argument="other")


@pytest.fixture(scope="module")
def half_cell():
    spec = CellSpec(0.5, 32)
    grid = build_cell_grid(spec)
    correctors = (solve_corrector(grid, 1), solve_corrector(grid, 2))
    return compute_tensor(spec), correctors


def test_oracle_without_holes_is_plain_product():
    grid = build_cell_grid(CellSpec(0.0, 8))
    correctors = (solve_corrector(grid, 1), solve_corrector(grid, 2))
    assert cell_average_fstar_oracle([0.7, -1.3], [2.0, 3.0], correctors, 1.0) == pytest.approx(0.7 * 2 - 1.3 * 3,
                                                                                                abs=1e-14)
    assert cell_average_fstar_oracle([0.7, -1.3], [0.0, 0.0], correctors, 1.0) == 0.0


def test_gradient_closed_form_matches_cell_quadrature(half_cell):
    tensor, correctors = half_cell
    spec = Gradient(("sin", 1.0), ("linear", 0.5))
    M = effective_gradient_matrix(tensor)
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(100):
        U = rng.uniform(-2, 2)
        grad = rng.normal(size=2)
        closed = eval_effective_drift(spec, tensor.theta, M, 0.0, [U], X, Y, (grad[:1], grad[1:]))[0]
        h1, h2 = spec.coefficients(U / tensor.theta)
        oracle = cell_average_fstar_oracle([h1, h2], grad, correctors, tensor.theta)
        worst = max(worst, abs(closed - oracle))
    assert worst < 1e-6
