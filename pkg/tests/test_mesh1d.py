import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import basis_values, gram_1d
from tensorocp import (
    DimensionError,
    InvalidMeshError,
    assemble_mass_1d,
    assemble_mass_1d_interior,
    assemble_stiffness_1d,
    assemble_stiffness_1d_interior,
    build_basis,
    build_mesh,
    gauss_rule,
    interp_Ih,
    project_Qh,
)
from tensorocp.mesh1d import Tri1D, composite_points, thomas_solve


def l2(values, weights):
    return math.sqrt(float(np.sum(weights * values ** 2)))


def fine_rule(basis, npts=8):
    return composite_points(basis.mesh, gauss_rule(npts))


# build_mesh

def test_mesh_n4():
    mesh = build_mesh(4)
    assert mesh.h == 0.25
    np.testing.assert_array_equal(mesh.nodes, [0, 0.25, 0.5, 0.75, 1])


def test_mesh_n8_uniform():
    mesh = build_mesh(8)
    assert mesh.h == 0.125 and mesh.nodes.size == 9
    np.testing.assert_allclose(np.diff(mesh.nodes), 0.125, rtol=0, atol=1e-15)
    assert mesh.nodes[0] == 0 and mesh.nodes[-1] == 1


@pytest.mark.parametrize("n", [3, 2, 0, -4, 4.5])
def test_mesh_too_small(n):
    with pytest.raises(InvalidMeshError):
        build_mesh(n)


# basis

@settings(max_examples=25, deadline=None)
@given(st.sampled_from([4, 8, 16]), st.integers(0, 2 ** 31 - 1))
def test_partition_of_unity(n, seed):
    x = np.random.default_rng(seed).uniform(0, 1, 100)
    np.testing.assert_allclose(build_basis(n).evaluate(x).sum(axis=1), 1.0, rtol=0, atol=1e-14)


@pytest.mark.parametrize("n", [4, 8, 16])
def test_basis_matches_nodal_oracle(n):
    x = np.linspace(0, 1, 301)
    np.testing.assert_allclose(build_basis(n).evaluate(x), basis_values(n, x), atol=1e-14)


@pytest.mark.parametrize("n", [4, 8, 16])
def test_zero_endpoint_derivatives(n):
    b = build_basis(n)
    h = b.h
    left = (b.evaluate([h]) - b.evaluate([0.0])) / h
    right = (b.evaluate([1.0]) - b.evaluate([1.0 - h])) / h
    assert np.all(left == 0.0) and np.all(right == 0.0)
    assert np.all(b.evaluate_derivative([0.0, 0.5 * h, 1.0 - 0.5 * h]) == 0.0)


def test_end_function_shape():
    b = build_basis(8)
    h = b.h
    phi1 = b.evaluate([0.0, 0.5 * h, h, 1.5 * h, 2 * h])[:, 0]
    np.testing.assert_allclose(phi1, [1, 1, 1, 0.5, 0], atol=1e-15)


# 1D matrices

def test_mass_n4():
    h = 0.25
    mass = assemble_mass_1d(build_basis(4))
    np.testing.assert_allclose(mass.diag, [4 * h / 3, 2 * h / 3, 4 * h / 3], rtol=1e-15)
    np.testing.assert_allclose(mass.sub, [h / 6, h / 6], rtol=1e-15)


@pytest.mark.parametrize("n", [4, 8, 32])
def test_mass_row_sums(n):
    h = 1.0 / n
    sums = assemble_mass_1d(build_basis(n)).row_sums()
    expected = np.full(n - 1, h)
    expected[[0, -1]] = 1.5 * h
    np.testing.assert_allclose(sums, expected, rtol=0, atol=1e-14)


def test_mass_matches_quadrature_oracle():
    np.testing.assert_allclose(assemble_mass_1d(build_basis(8)).dense(), gram_1d(8, "mass"), rtol=0, atol=1e-14)


def test_stiffness_n4():
    h = 0.25
    k = assemble_stiffness_1d(build_basis(4))
    np.testing.assert_allclose(k.diag, [1 / h, 2 / h, 1 / h])
    np.testing.assert_allclose(k.sub, [-1 / h, -1 / h])


@pytest.mark.parametrize("n", [4, 8, 64])
def test_stiffness_kernel(n):
    assert np.max(np.abs(assemble_stiffness_1d(build_basis(n)).row_sums())) <= 1e-14 * n


def test_stiffness_matches_quadrature_oracle():
    np.testing.assert_allclose(assemble_stiffness_1d(build_basis(8)).dense(), gram_1d(8, "stiff"),
                               rtol=0, atol=1e-13)


def test_interior_mass_n4():
    h = 0.25
    mi = assemble_mass_1d_interior(build_basis(4))
    np.testing.assert_allclose(mi.diag, [h / 3, 2 * h / 3, h / 3])
    np.testing.assert_allclose(mi.sub, [h / 6, h / 6])


def test_interior_mass_difference_only_corners():
    b = build_basis(8)
    diff = assemble_mass_1d(b).dense() - assemble_mass_1d_interior(b).dense()
    expected = np.zeros_like(diff)
    expected[0, 0] = expected[-1, -1] = b.h
    np.testing.assert_allclose(diff, expected, atol=1e-15)


def test_interior_mass_matches_oracle():
    np.testing.assert_allclose(assemble_mass_1d_interior(build_basis(8)).dense(),
                               gram_1d(8, "mass", elems=range(1, 7)), rtol=0, atol=1e-14)


@pytest.mark.parametrize("n", [4, 16])
def test_interior_stiffness_equals_full(n):
    b = build_basis(n)
    assert np.max(np.abs(assemble_stiffness_1d_interior(b).dense() - assemble_stiffness_1d(b).dense())) == 0.0


def test_interior_stiffness_matches_oracle():
    np.testing.assert_allclose(assemble_stiffness_1d_interior(build_basis(8)).dense(),
                               gram_1d(8, "stiff", elems=range(1, 7)), rtol=0, atol=1e-13)


@pytest.mark.parametrize("n", [4, 8, 16])
def test_tri_kinds_definiteness(n):
    b = build_basis(n)
    assert np.linalg.eigvalsh(assemble_mass_1d(b).dense()).min() > 0
    assert np.linalg.eigvalsh(assemble_mass_1d_interior(b).dense()).min() > 0
    ev = np.linalg.eigvalsh(assemble_stiffness_1d(b).dense())
    assert abs(ev[0]) < 1e-12 and ev[1] > 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2 ** 31 - 1))
def test_thomas_matches_dense(m, seed):
    rng = np.random.default_rng(seed)
    sub = rng.uniform(-1, 1, m - 1)
    diag = 2.5 + rng.uniform(0, 1, m)
    tri = Tri1D(diag, sub)
    rhs = rng.standard_normal((m, 3))
    np.testing.assert_allclose(thomas_solve(tri, rhs), np.linalg.solve(tri.dense(), rhs), rtol=1e-10, atol=1e-12)


# quadrature

def test_gauss_order1_midpoint():
    q = gauss_rule(1)
    np.testing.assert_allclose(q.points, [0.5])
    np.testing.assert_allclose(q.weights, [1.0])


def test_gauss_cubic_exact():
    q = gauss_rule(3)
    assert float(np.sum(q.weights * q.points ** 3)) == pytest.approx(0.25, abs=1e-15)


def test_gauss_cosine():
    q = gauss_rule(5)
    assert abs(float(np.sum(q.weights * np.cos(np.pi * q.points)))) <= 1e-12


@pytest.mark.parametrize("npts", range(1, 11))
def test_gauss_weights_and_exactness(npts):
    q = gauss_rule(npts)
    assert q.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for k in range(q.order + 1):
        assert float(np.sum(q.weights * q.points ** k)) == pytest.approx(1.0 / (k + 1), abs=1e-13)


@pytest.mark.parametrize("npts", [0, 11, -1])
def test_gauss_unsupported(npts):
    with pytest.raises(ValueError):
        gauss_rule(npts)


# interpolation

def test_interp_constant():
    b = build_basis(8)
    c = interp_Ih(lambda x: np.ones_like(x), b)
    np.testing.assert_array_equal(c, np.ones(7))
    np.testing.assert_allclose(b.function_values(c, np.linspace(0, 1, 50)), 1.0, atol=1e-15)


def test_interp_cosine_l2_estimate():
    b = build_basis(16)
    x, w = fine_rule(b)
    err = l2(np.cos(np.pi * x) - b.function_values(interp_Ih(lambda t: np.cos(np.pi * t), b), x), w)
    assert err <= 0.5 * b.h ** 2 * l2(np.pi ** 2 * np.cos(np.pi * x), w)


@pytest.mark.parametrize("n", [4, 8, 16])
def test_interp_linear_derivative_norm(n):
    b = build_basis(n)
    x, w = fine_rule(b)
    d = b.function_derivative(interp_Ih(lambda t: t, b), x)
    assert l2(d, w) == pytest.approx(math.sqrt(1 - 2 * b.h), rel=1e-13)


def test_interp_samples_and_mismatch():
    b = build_basis(8)
    np.testing.assert_array_equal(interp_Ih(np.arange(7.0), b), np.arange(7.0))
    with pytest.raises(DimensionError):
        interp_Ih(np.arange(8.0), b)


# L2 projection

def test_projection_constants():
    np.testing.assert_allclose(project_Qh(lambda x: np.ones_like(x), build_basis(16)), 1.0, rtol=0, atol=1e-13)


@pytest.mark.parametrize("n", [8, 16, 32])
def test_projection_error_bound(n):
    b = build_basis(n)
    x, w = fine_rule(b)
    err = l2(np.cos(np.pi * x) - b.function_values(project_Qh(lambda t: np.cos(np.pi * t), b), x), w)
    assert err <= 0.5 * b.h ** 2 * l2(np.pi ** 2 * np.cos(np.pi * x), w)


@pytest.mark.parametrize("n", [8, 16, 32])
def test_projection_gradient_stability(n):
    b = build_basis(n)
    x, w = fine_rule(b)
    dq = b.function_derivative(project_Qh(lambda t: np.cos(np.pi * t), b), x)
    assert l2(dq, w) <= (1 + 4 * math.sqrt(6)) * l2(-np.pi * np.sin(np.pi * x), w)


def test_projection_needs_enough_points():
    with pytest.raises(ValueError):
        project_Qh(np.cos, build_basis(8), gauss_rule(3))


def test_projection_l2_stability_random_piecewise_polynomials():
    rng = np.random.default_rng(11)
    b = build_basis(16)
    x, w = fine_rule(b)
    for _ in range(20):
        # random piecewise cubic on a random partition into five pieces
        breaks = np.sort(rng.uniform(0, 1, 4))
        coefs = rng.standard_normal((5, 4))

        def f(t, breaks=breaks, coefs=coefs):
            return np.choose(np.searchsorted(breaks, t), [np.polyval(c, t) for c in coefs])

        q = b.function_values(project_Qh(f, b, gauss_rule(10)), x)
        assert l2(q, w) <= l2(f(x), w) * (1 + 1e-12)


def test_projection_order():
    errs = []
    for n in (8, 16, 32, 64):
        b = build_basis(n)
        x, w = fine_rule(b)
        errs.append(l2(np.cos(np.pi * x) - b.function_values(project_Qh(lambda t: np.cos(np.pi * t), b), x), w))
    assert min(math.log2(a / c) for a, c in zip(errs[:-1], errs[1:])) >= 1.9


def test_inverse_inequality():
    rng = np.random.default_rng(5)
    for n in (8, 16, 32):
        b = build_basis(n)
        x, w = fine_rule(b)
        for _ in range(50):
            c = rng.standard_normal(b.m)
            assert l2(b.function_derivative(c, x), w) <= math.sqrt(12) / b.h * l2(b.function_values(c, x), w)
