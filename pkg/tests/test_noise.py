import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfspde.fields import FieldExpr
from perfspde.noise import (
    NoiseIncrement,
    SpectralNoiseSpec,
    check_trace_condition,
    dirichlet_mode,
    evaluate_noise_field,
    increment_block,
    mix64,
    mode_order,
    path_increments,
    sample_increment,
    standard_normals,
)


def test_mode_values():
    assert dirichlet_mode(1, 1, 0.5, 0.5) == pytest.approx(2.0, abs=1e-15)
    edge = np.array([0.0, 1.0, 0.3, 0.7])
    for k, l in [(1, 1), (2, 3), (5, 1)]:
        assert np.all(np.abs(dirichlet_mode(k, l, edge, [0, 0, 1, 1])) < 1e-14)
        assert np.all(np.abs(dirichlet_mode(k, l, [0, 1, 0, 1], edge)) < 1e-14)


def test_discrete_orthogonality():
    t = np.arange(65) / 64
    x, y = np.meshgrid(t, t, indexing="ij")
    inner = np.sum(dirichlet_mode(1, 1, x, y) * dirichlet_mode(2, 1, x, y)) / 64**2
    assert abs(inner) < 1e-12


def test_mode_order():
    assert mode_order(6) == [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1)]
    modes = mode_order(200)
    values = [k * k + l * l for k, l in modes]
    assert values == sorted(values) and len(set(modes)) == 200


def test_zero_step_gives_zero_increment():
    inc = sample_increment(SpectralNoiseSpec(), 3, 1, 0, 0.0, 7)
    assert not inc.values.any()


def test_increments_are_reproducible():
    spec = SpectralNoiseSpec(J=8)
    a = sample_increment(spec, 11, 2, 5, 0.01, 42).values
    b = sample_increment(spec, 11, 2, 5, 0.01, 42).values
    np.testing.assert_array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**40), st.integers(0, 2**40), st.integers(1, 2), st.integers(0, 10**6))
def test_addresses_are_distinct(seed, path, noise, step):
    base = standard_normals(seed, path, noise, step, 4)
    for other in [(seed + 1, path, noise, step), (seed, path + 1, noise, step), (seed, path, 3 - noise, step),
                  (seed, path, noise, step + 1)]:
        assert not np.array_equal(base, standard_normals(*other, 4))


def test_mixing_is_order_sensitive():
    assert mix64(1, 2, 3, 4) != mix64(2, 1, 3, 4)


def test_increment_variance():
    # 10^5 draws of the first mode increment, dt = 0.01
    draws = np.array([standard_normals(9, p, 1, 0, 1)[0] for p in range(100_000)]) * 0.1
    var = draws.var(ddof=1)
    se = 0.01 * np.sqrt(2 / (draws.size - 1))
    assert abs(var - 0.01) < 3 * se


def test_block_matches_single_draws():
    spec = SpectralNoiseSpec(J=5)
    block = increment_block(spec, [4, 9], 2, 3, 0.02, 1)
    np.testing.assert_array_equal(block[2, :, 1], sample_increment(spec, 9, 2, 2, 0.02, 1).values)


def test_single_mode_field():
    spec = SpectralNoiseSpec(J=1, q0=1.0)
    x = np.linspace(0, 1, 9)
    X, Y = np.meshgrid(x, x, indexing="ij")
    field = evaluate_noise_field(NoiseIncrement(np.array([1.0]), 1.0, 1), spec, X.ravel(), Y.ravel())
    np.testing.assert_allclose(field, dirichlet_mode(1, 1, X, Y).ravel(), atol=1e-15)


def test_zero_increment_field():
    spec = SpectralNoiseSpec()
    assert not evaluate_noise_field(NoiseIncrement(np.zeros(spec.J), 0.1, 1), spec, [0.3], [0.4]).any()


def test_parseval():
    spec = SpectralNoiseSpec(J=10, gamma=2.0, q0=1.0)
    beta = np.random.default_rng(5).normal(size=spec.J)
    t = np.arange(129) / 128
    X, Y = np.meshgrid(t, t, indexing="ij")
    field = evaluate_noise_field(NoiseIncrement(beta, 1.0, 1), spec, X.ravel(), Y.ravel())
    assert np.sum(field**2) / 128**2 == pytest.approx(np.sum(spec.eigenvalues * beta**2), abs=1e-6)


def test_trace_partial_sum_convergent():
    rep = check_trace_condition(SpectralNoiseSpec(J=100, gamma=2.0, q0=1.0), 1)
    assert rep.verdict == "convergent"
    expected = np.sum(1.0 / np.arange(1, 101) ** 2)
    assert rep.partial_sum == pytest.approx(expected, rel=1e-10)
    assert rep.partial_sum <= np.pi**2 / 6


def test_trace_zero_scale_and_slow_decay():
    assert check_trace_condition(SpectralNoiseSpec(q0=0.0), 2).partial_sum == 0
    assert check_trace_condition(SpectralNoiseSpec(gamma=0.5), 1).verdict == "divergent"


def test_switched_off_noise_draws_nothing():
    spec = SpectralNoiseSpec(J=3, g1=FieldExpr.constant(0.0))
    inc1, inc2 = path_increments(spec, [0, 1], 4, 0.01, 1)
    assert inc1 is None and inc2.shape == (4, 3, 2)


def test_invalid_spec():
    with pytest.raises(ValueError):
        SpectralNoiseSpec(J=0)
    with pytest.raises(ValueError):
        SpectralNoiseSpec(q0=-1.0)
