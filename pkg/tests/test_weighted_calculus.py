import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from stefan_melt.laguerre_basis import build_basis
from stefan_melt.weighted_calculus import (
    GridError,
    QuadratureError,
    RadialGrid,
    WeightedFunction,
    check_poincare,
    clustered_grid,
    derivative,
    fd_weights,
    inner_product_renorm,
    inner_product_rho,
    integrate,
    lambda_op,
    make_grid,
    radial_laplacian,
    sample,
)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def test_uniform_three_nodes():
    assert make_grid(0.0, 1.0, 3).nodes.tolist() == [0.0, 0.5, 1.0]


def test_uniform_spacing_arithmetic():
    g = make_grid(math.sqrt(0.01), 12.0, 2000)
    assert np.allclose(g.steps, (12.0 - 0.1) / 1999, rtol=1e-10, atol=0.0)
    assert g.left_endpoint == pytest.approx(0.1, abs=1e-15)
    assert g.truncation_point == 12.0


def test_graded_ratio_bound():
    g = make_grid(1.0, 200.0, 4000, "graded", 1.002)
    h = g.steps
    assert h[-1] / h[0] <= 1.002**3999 * (1 + 1e-9)
    assert np.allclose(h[1:] / h[:-1], 1.002, rtol=1e-8)
    assert g.nodes[0] == 1.0 and g.nodes[-1] == 200.0


def test_clustered_grid_halving():
    a = clustered_grid(0.1, 10.0, 101, 5.0, 0.3)
    b = clustered_grid(0.1, 10.0, 201, 5.0, 0.3)
    assert np.allclose(b.nodes[::2], a.nodes, rtol=0, atol=1e-12)
    assert a.steps[0] < a.steps[-1]


@pytest.mark.parametrize("nodes", [[0.0, 1.0], [0.0, 2.0, 1.0], [0.0, np.nan, 1.0], [0.0, 1.0, 1.0]])
def test_invalid_grids_rejected(nodes):
    with pytest.raises(GridError):
        RadialGrid(np.array(nodes))


def test_make_grid_rejects_reversed_interval():
    with pytest.raises(GridError):
        make_grid(1.0, 0.0, 5)
    with pytest.raises(GridError):
        make_grid(0.0, 1.0, 5, "graded", 0.5)


def test_values_must_be_finite_and_match():
    g = make_grid(0.0, 1.0, 5)
    with pytest.raises(GridError):
        WeightedFunction(g, np.zeros(4))
    with pytest.raises(ValueError):
        WeightedFunction(g, np.array([0.0, 1.0, np.inf, 0.0, 0.0]))


def test_functions_on_different_grids_do_not_combine():
    f = sample(make_grid(0.0, 1.0, 5), np.sin)
    g = sample(make_grid(0.0, 1.1, 5), np.sin)
    with pytest.raises(GridError):
        f + g


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------


def test_gaussian_moment():
    g = make_grid(0.0, 14.0, 4001)
    one = sample(g, np.ones_like)
    rep = inner_product_rho(one, one, 0.0)
    assert rep.value == pytest.approx(math.sqrt(math.pi / 2.0), abs=1e-10)
    assert rep.quadrature_error_estimate < 1e-8


def test_basis_orthonormal_under_rho():
    t = build_basis(2)
    g = make_grid(0.0, 14.0, 4001)
    p0 = sample(g, lambda z: t.P(0, z))
    p1 = sample(g, lambda z: t.P(1, z))
    assert inner_product_rho(p0, p1, 0.0).value == pytest.approx(0.0, abs=1e-11)
    assert inner_product_rho(p0, p0, 0.0).value == pytest.approx(1.0, abs=1e-11)


def test_renorm_constant_against_adaptive_quadrature():
    oracle, _ = quad(lambda y: y * y * math.exp(-y * y), 1.0, math.inf, epsabs=1e-14, epsrel=1e-13)
    # closed form sqrt(pi) erfc(1) / 4 + 1 / (2e), frozen from the adaptive quadrature
    assert oracle == pytest.approx(0.25364111690588675, rel=1e-12)
    assert oracle == pytest.approx(math.sqrt(math.pi) * math.erfc(1.0) / 4 + 0.5 / math.e, rel=1e-13)
    g = make_grid(1.0, 9.0, 4001)
    one = sample(g, np.ones_like)
    assert inner_product_renorm(one, one, 2.0).value == pytest.approx(oracle, rel=1e-10)


def test_renorm_change_of_variables():
    b = 0.01
    rb = math.sqrt(b)
    z = clustered_grid(rb, 13.0, 3001, 5.0, 0.3)
    y = RadialGrid(z.nodes / rb)
    f = lambda zz: (zz - rb) * np.exp(-zz * zz / 4)  # noqa: E731
    g = lambda zz: np.cos(zz)  # noqa: E731
    lhs = inner_product_renorm(sample(y, lambda yy: f(rb * yy)), sample(y, lambda yy: g(rb * yy)), b).value
    rhs = b**-1.5 * inner_product_rho(sample(z, f), sample(z, g), b).value
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_truncation_too_short_is_rejected():
    g = make_grid(0.0, 3.0, 101)
    one = sample(g, np.ones_like)
    with pytest.raises(QuadratureError):
        inner_product_rho(one, one, 0.0)


def test_grid_must_start_at_the_hole():
    g = make_grid(0.0, 14.0, 101)
    one = sample(g, np.ones_like)
    with pytest.raises(GridError):
        inner_product_rho(one, one, 0.01)
    with pytest.raises(GridError):
        inner_product_renorm(one, one, 0.01)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.floats(-2, 2))
def test_inner_product_symmetric_and_linear(cf, cg, alpha):
    g = make_grid(0.0, 14.0, 801)
    z = g.nodes
    f = WeightedFunction(g, cf[0] + cf[1] * z + cf[2] * np.sin(z))
    h = WeightedFunction(g, cg[0] + cg[1] * z * z + cg[2] * np.cos(z))
    fh = inner_product_rho(f, h, 0.0).value
    assert fh == pytest.approx(inner_product_rho(h, f, 0.0).value, rel=1e-12, abs=1e-12)
    lin = inner_product_rho(f * alpha + h, h, 0.0).value
    assert lin == pytest.approx(alpha * fh + inner_product_rho(h, h, 0.0).value, rel=1e-10, abs=1e-10)


def test_simpson_error_estimate_is_honest():
    x = make_grid(0.0, math.pi, 33).nodes
    rep = integrate(x, np.sin(x))
    assert abs(rep.value - 2.0) <= 20 * rep.quadrature_error_estimate


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def test_laplacian_of_quadratic_is_six():
    g = make_grid(0.0, 5.0, 51)
    lap = radial_laplacian(sample(g, lambda z: z * z))
    assert np.allclose(lap.values, 6.0, atol=1e-10)


def test_laplacian_of_inverse_radius_vanishes():
    g = make_grid(0.5, 5.0, 4001, "graded", 1.0005)
    lap = radial_laplacian(sample(g, lambda z: 1.0 / z))
    # second order: interior error ~ h^2 / z^5 with h ~ 5e-4
    assert np.max(np.abs(lap.values)) < 1e-4


def test_oscillator_on_quadratic_eigenfunction():
    g = make_grid(0.0, 6.0, 61)
    f = sample(g, lambda z: 1.5 - 0.5 * z * z)
    hf = radial_laplacian(f) * -1.0 + lambda_op(f)
    assert np.allclose(hf.values, 2.0 * f.values, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2), st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(-0.3, 0.3))
def test_fd_weights_exact_on_polynomials(order, coeffs, shift):
    stencil = np.array([0.0, 0.3, 0.7])
    x0 = float(stencil[0] + shift)
    w = fd_weights(stencil, x0, order)
    p = np.polynomial.Polynomial(coeffs)
    assert w @ p(stencil) == pytest.approx(p.deriv(order)(x0), abs=1e-11)


def test_derivative_second_order_at_ends():
    errs = []
    for n in (41, 81):
        g = make_grid(0.0, 1.0, n)
        d = derivative(sample(g, np.exp))
        errs.append(max(abs(d.values[0] - 1.0), abs(d.values[-1] - math.e)))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


# ---------------------------------------------------------------------------
# Poincare inequality
# ---------------------------------------------------------------------------


def _poincare_oracle(f, df):
    w = lambda z: math.exp(-z * z / 2) * z * z  # noqa: E731
    lhs = quad(lambda z: (z * f(z)) ** 2 * w(z), 0, math.inf)[0]
    rhs = 6 * quad(lambda z: f(z) ** 2 * w(z), 0, math.inf)[0] + 4 * quad(lambda z: df(z) ** 2 * w(z), 0, math.inf)[0]
    return lhs, rhs


def test_poincare_gaussian_against_quadrature():
    g = make_grid(0.0, 14.0, 4001)
    rec = check_poincare(sample(g, lambda z: np.exp(-z * z / 4)))
    lhs, rhs = _poincare_oracle(lambda z: math.exp(-z * z / 4), lambda z: -z / 2 * math.exp(-z * z / 4))
    assert rec.holds
    assert rec.lhs == pytest.approx(lhs, rel=1e-8)
    assert rec.rhs == pytest.approx(rhs, rel=1e-6)


def test_poincare_first_basis_function():
    t = build_basis(1)
    g = make_grid(0.0, 14.0, 4001)
    rec = check_poincare(sample(g, lambda z: t.P(1, z)))
    lhs, rhs = _poincare_oracle(lambda z: float(t.P(1, z)), lambda z: float(t.dP(1, z)))
    assert rec.holds
    assert rec.lhs == pytest.approx(lhs, rel=1e-8)
    assert rec.rhs == pytest.approx(rhs, rel=1e-6)


def test_poincare_zero_function():
    rec = check_poincare(sample(make_grid(0.0, 14.0, 101), np.zeros_like))
    assert (rec.lhs, rec.rhs) == (0.0, 0.0)
    assert rec.holds


def test_poincare_needs_origin():
    with pytest.raises(GridError):
        check_poincare(sample(make_grid(0.1, 14.0, 101), np.zeros_like))
