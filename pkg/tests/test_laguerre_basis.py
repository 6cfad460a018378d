import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_genlaguerre, gamma, roots_genlaguerre

from stefan_melt.laguerre_basis import (
    build_basis,
    gram_matrix,
    harmonic_residual,
    lambda_recurrence_check,
    laguerre,
    laguerre_sum,
    projector_kernel,
    q_profile,
    q_projection,
)
from stefan_melt.weighted_calculus import GridError, make_grid


# ---------------------------------------------------------------------------
# Laguerre polynomials
# ---------------------------------------------------------------------------


def test_degree_zero_is_one():
    x = np.linspace(0, 30, 7)
    assert np.array_equal(laguerre(0, 0.5, x), np.ones_like(x))


def test_degree_one():
    x = np.linspace(0, 5, 11)
    assert np.allclose(laguerre(1, 0.5, x), 1.5 - x, atol=1e-15)
    assert np.allclose(laguerre_sum(1, 0.5, x), 1.5 - x, atol=1e-14)


def test_orthogonality_by_gauss_laguerre():
    x, w = roots_genlaguerre(20, 0.5)
    assert np.sum(w * laguerre(2, 0.5, x) * laguerre(3, 0.5, x)) == pytest.approx(0.0, abs=1e-12)
    norm = np.sum(w * laguerre(3, 0.5, x) ** 2)
    assert norm == pytest.approx(gamma(4.5) / math.factorial(3), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 12), st.sampled_from([0.5, 1.5, 2.5, 0.0, 3.0]), st.floats(0.0, 20.0))
def test_recurrence_matches_scipy_and_explicit_sum(n, mu, x):
    ref = eval_genlaguerre(n, mu, x)
    scale = max(1.0, abs(ref))
    assert float(laguerre(n, mu, x)) == pytest.approx(ref, abs=1e-10 * scale)
    assert float(laguerre_sum(n, mu, x)) == pytest.approx(ref, abs=1e-8 * scale * max(1.0, x) ** n)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        laguerre(2, -1.0, 0.0)
    with pytest.raises(ValueError):
        laguerre(61, 0.5, 0.0)
    assert np.all(laguerre(-1, 0.5, np.ones(3)) == 0.0)


# ---------------------------------------------------------------------------
# basis constants
# ---------------------------------------------------------------------------


def test_first_constants():
    t = build_basis(3)
    assert t.A[0] == pytest.approx(2**0.25 * math.sqrt(gamma(1.5)), rel=1e-14)
    # 2^{1/4} sqrt(Gamma(3/2)) = 1.11951513...; C_0 = 1 / A_0
    assert t.A[0] == pytest.approx(1.1195151349, abs=1e-10)
    assert t.C[0] == pytest.approx(0.8932438, abs=5e-8)
    assert t.B[1] == pytest.approx(1.5, rel=1e-15)
    assert t.C[1] ** 2 == pytest.approx(3.0 / math.sqrt(2 * math.pi), rel=1e-13)
    assert t.C[1] ** 2 == pytest.approx(1.1968268, abs=5e-8)
    assert t.C[0] ** 2 == pytest.approx(math.sqrt(2 / math.pi), abs=1e-12)


def test_values_at_origin_are_C(table):
    for k in range(table.k_max + 1):
        assert float(table.P(k, 0.0)) == pytest.approx(table.C[k], abs=1e-12)


def test_orthonormal_by_gauss_laguerre(table):
    # <P_j, P_k>_0 = int_0^inf P_j P_k e^{-x} x^{1/2} dx / sqrt 2 with z^2 = 2x
    x, w = roots_genlaguerre(40, 0.5)
    z = np.sqrt(2 * x)
    P = np.array([table.P(k, z) for k in range(11)])
    gram = (P * w) @ P.T * math.sqrt(2.0)
    assert np.max(np.abs(gram - np.eye(11))) < 1e-12


def test_stored_coefficients_reproduce_P(table):
    z = np.linspace(0, 6, 25)
    for k in range(9):
        assert np.allclose(table.P_from_coeffs(k, z), table.P(k, z), rtol=1e-10, atol=1e-10)


def test_json_round_trip(table):
    doc = json.loads(table.to_json())
    assert doc["k_max"] == table.k_max
    assert np.allclose(doc["C"], table.C, rtol=0, atol=0)


def test_build_basis_range():
    with pytest.raises(ValueError):
        build_basis(-1)
    with pytest.raises(IndexError):
        build_basis(2).P(3, 0.0)


# ---------------------------------------------------------------------------
# operator identities
# ---------------------------------------------------------------------------


def test_harmonic_residual_small(table):
    grid = make_grid(0.0, 16.0, 4001)
    for k in range(11):
        assert harmonic_residual(table, k, grid) <= 1e-8


def test_lambda_recurrence_k1_explicit(table):
    assert table.A[0] / table.A[1] == pytest.approx(math.sqrt(2 / 3), rel=1e-14)
    z = np.linspace(0, 5, 21)
    lhs = table.lambda_P(1, z)
    rhs = 2 * (table.P(1, z) - 1.5 * math.sqrt(2 / 3) * table.P(0, z))
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_lambda_of_constant_vanishes(table):
    assert np.all(table.lambda_P(0, np.linspace(0, 5, 11)) == 0.0)


def test_lambda_recurrence_high_degree(table):
    grid = make_grid(0.0, 12.0, 201)
    for k in range(2, 9):
        assert lambda_recurrence_check(table, k, grid) <= 1e-10
    with pytest.raises(ValueError):
        lambda_recurrence_check(table, 0, grid)


# ---------------------------------------------------------------------------
# correction profile
# ---------------------------------------------------------------------------


def test_q_diagonal_projection(table):
    for k in range(5):
        assert q_projection(table, k, k) == pytest.approx(-table.C[k] ** 2, abs=1e-10)


def test_q0_closed_form(table):
    grid = make_grid(0.05, 10.0, 101)
    prof = q_profile(table, 0, grid)
    assert np.allclose(prof.samples.values, -table.C[0] / grid.nodes, rtol=1e-13)
    assert prof.projections[0] == pytest.approx(-table.C[0] ** 2, abs=1e-10)


def test_q1_off_diagonal_converged(table):
    coarse = q_projection(table, 1, 0, n=4001)
    fine = q_projection(table, 1, 0, n=8001)
    assert abs(coarse - fine) <= 1e-8
    # independent oracle: Gauss-Laguerre in x = z^2/2 of z Q_1 P_0 e^{-z^2/2} z dz
    x, w = roots_genlaguerre(30, 0.0)
    z = np.sqrt(2 * x)
    zq = -(table.P(1, z) + 2.0 * laguerre(0, 1.5, x) / table.A[1])
    assert fine == pytest.approx(float(np.sum(w * zq * table.P(0, z))), abs=1e-10)


def test_q_profile_needs_positive_left_end(table):
    with pytest.raises(GridError):
        q_profile(table, 1, make_grid(0.0, 5.0, 11))


# ---------------------------------------------------------------------------
# Gram matrix and projector
# ---------------------------------------------------------------------------


def test_gram_tends_to_identity(table):
    g = gram_matrix(table, 1e-12, 4)
    assert np.max(np.abs(g.entries - np.eye(5))) < 1e-16


def test_gram_deviation_scales_like_b_three_halves(table):
    consts = [gram_matrix(table, b, 3).constant for b in (1e-2, 1e-3, 1e-4)]
    # max |M - Id| / b^{3/2} tends to a finite limit
    assert consts[-1] == pytest.approx(consts[-2], rel=0.05)
    assert all(0.0 < c < 10.0 for c in consts)


def test_projector_kernel_limit(table):
    z = np.linspace(0, 4, 9)
    g = gram_matrix(table, 1e-6, 3)
    m = projector_kernel(table, g, z)
    ref = sum(table.C[j] * table.P(j, z) for j in range(4))
    assert np.allclose(m, ref, atol=1e-4)


def test_gram_domain(table):
    with pytest.raises(ValueError):
        gram_matrix(table, 0.5, 2)
