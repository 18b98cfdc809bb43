import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfspde.geometry import (
    CellSpec,
    GeometryError,
    NodeClass,
    build_cell_grid,
    build_perforated_grid,
    nodal_gradient_operators,
    nodal_l2_norm,
    restrict_to_common_grid,
    restriction_matrix,
    trapezoid_weights,
    zero_extend,
)


def test_no_hole_cell_is_all_fluid():
    spec = CellSpec(0.0, 8)
    grid = build_cell_grid(spec)
    assert spec.theta == 1.0 and spec.lam == 0.0
    assert np.all(grid.node_class == NodeClass.FLUID)
    assert grid.counts()["fluid"] == 64


def test_half_hole_cell_classification():
    spec = CellSpec(0.5, 4)
    grid = build_cell_grid(spec)
    assert (spec.offset, spec.hole_intervals) == (1, 2)
    assert grid.counts() == {"fluid": 7, "hole_interior": 1, "hole_boundary": 8, "outer_boundary": 0}
    assert grid.node_class[2, 2] == NodeClass.HOLE_INTERIOR
    assert (spec.theta, spec.lam) == (0.75, 2.0)


@pytest.mark.parametrize("rho, m", [(0.5, 3), (0.25, 6), (1.0, 4), (-0.1, 4), (0.5, 0)])
def test_incompatible_cells_rejected(rho, m):
    with pytest.raises(GeometryError):
        CellSpec(rho, m)


@pytest.mark.parametrize("rho, m", [(0.25, 8), (0.5, 4), (0.5, 16)])
def test_discrete_fraction_and_surface_density_are_exact(rho, m):
    grid = build_cell_grid(CellSpec(rho, m))
    assert grid.theta == pytest.approx(1 - rho**2, abs=1e-14)
    assert grid.lam == pytest.approx(4 * rho, abs=1e-14)


def test_perforated_grid_sizes_and_hole_measure():
    grid = build_perforated_grid(CellSpec(0.5, 4), 2)
    assert (grid.eps, grid.h, grid.n) == (0.5, 0.125, 8)
    np.testing.assert_allclose(grid.hole_measures(), np.ones((2, 2)))


def test_no_hole_domain_has_no_boundary_dofs():
    for n_eps in (1, 3, 5):
        assert build_perforated_grid(CellSpec(0.0, 4), n_eps).n_boundary == 0


def test_total_surface_measure():
    grid = build_perforated_grid(CellSpec(0.5, 4), 4)
    total = grid.surface_weights().sum()
    assert total == pytest.approx(4**2 * 4 * 0.5 * grid.eps, abs=1e-13)
    # eps-weighted surface measure equals the surface density times |D|
    assert grid.eps * total == pytest.approx(2.0, abs=1e-13)


def test_fluid_area_tends_to_volume_fraction():
    areas = [build_perforated_grid(CellSpec(0.5, 8), n).bulk_weights().sum() for n in (2, 4, 8)]
    errors = [abs(a - 0.75) for a in areas]
    assert errors[0] > errors[1] > errors[2]


def test_normals_point_into_the_hole():
    grid = build_perforated_grid(CellSpec(0.5, 4), 1)
    # left side of the hole (x = 1/4), away from corners
    i, j = 1, 2
    assert grid.node_class[i, j] == NodeClass.HOLE_BOUNDARY
    assert (grid.normal_x[i, j], grid.normal_y[i, j]) == (1, 0)
    assert (grid.normal_x[3, 2], grid.normal_y[2, 3]) == (-1, -1)


def test_zero_extension_of_constant():
    grid = build_perforated_grid(CellSpec(0.5, 8), 4)
    ext = zero_extend(np.ones(grid.n_dof), grid)
    assert ext.shape == (grid.n + 1, grid.n + 1)
    assert ext[0].sum() == 0 and ext[:, -1].sum() == 0
    inside = grid.node_class == NodeClass.HOLE_INTERIOR
    assert np.all(ext[inside] == 0)
    mean = restrict_to_common_grid(ext, 4, grid.square_fluid.astype(float)).mean()
    assert mean == pytest.approx(0.75, abs=0.1)


def test_zero_extension_of_zero():
    grid = build_perforated_grid(CellSpec(0.5, 4), 3)
    assert not zero_extend(np.zeros(grid.n_dof), grid).any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(0.5, 4, 2), (0.25, 8, 2), (0.5, 8, 3)]))
def test_zero_extension_preserves_norm(seed, case):
    rho, m, n_eps = case
    grid = build_perforated_grid(CellSpec(rho, m), n_eps)
    values = np.random.default_rng(seed).normal(size=grid.n_dof)
    direct = np.sqrt(grid.h**2 * np.sum(values**2))
    assert nodal_l2_norm(zero_extend(values, grid), grid.h) == pytest.approx(direct, rel=1e-14)


def test_restriction_of_constant_is_constant():
    np.testing.assert_allclose(restrict_to_common_grid(np.full((65, 65), 2.5), 16), 2.5, rtol=1e-15)


def test_restriction_of_linear_ramp_samples_cell_centers():
    t = np.linspace(0, 1, 129)
    x, y = np.meshgrid(t, t, indexing="ij")
    coarse = restrict_to_common_grid(3 * x - y + 1, 32)
    c = (np.arange(32) + 0.5) / 32
    cx, cy = np.meshgrid(c, c, indexing="ij")
    np.testing.assert_allclose(coarse, 3 * cx - cy + 1, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(16, 4), (32, 8), (24, 6)]))
def test_restriction_preserves_trapezoid_mean(seed, sizes):
    n, n_c = sizes
    field = np.random.default_rng(seed).normal(size=(n + 1, n + 1))
    w = trapezoid_weights(n)
    expected = np.sum(w * field)
    assert restrict_to_common_grid(field, n_c).mean() == pytest.approx(expected, abs=1e-14)


def test_restriction_matrix_matches_restriction():
    grid = build_perforated_grid(CellSpec(0.5, 4), 4)
    values = np.random.default_rng(3).normal(size=grid.n_dof)
    R = restriction_matrix(grid.n, 8, grid.dof_nodes, grid.square_fluid.astype(float))
    direct = restrict_to_common_grid(zero_extend(values, grid), 8, grid.square_fluid.astype(float))
    np.testing.assert_allclose(R @ values, direct.ravel(), atol=1e-15)


def test_gradient_of_linear_field_is_exact_in_fluid():
    grid = build_perforated_grid(CellSpec(0.5, 4), 2)
    x, y = grid.dof_coordinates()
    gx, gy = nodal_gradient_operators(grid.edges, grid.dof_index, grid.fluid_fraction, grid.h)
    u = 2 * x - 3 * y
    fluid = np.arange(grid.n_fluid)
    interior = (x[fluid] > grid.h) & (x[fluid] < 1 - grid.h) & (y[fluid] > grid.h) & (y[fluid] < 1 - grid.h)
    np.testing.assert_allclose((gx @ u)[fluid][interior], 2, atol=1e-12)
    np.testing.assert_allclose((gy @ u)[fluid][interior], -3, atol=1e-12)


def test_node_cap_enforced():
    with pytest.raises(GeometryError):
        build_perforated_grid(CellSpec(0.5, 8), 64, max_nodes=1000)
