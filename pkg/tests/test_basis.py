"""Basis matrices, difference operators, and constraint projections."""

import numpy as np
import pytest

from tmmp.basis import (
    BasisSpec,
    basis_from_name,
    bspline_basis,
    build_basis,
    constraint_projection,
    difference_matrix,
    extend_basis,
    identity_basis,
    n_basis_functions,
)
from tmmp.errors import GridError, ParameterError


def test_identity_basis_is_identity():
    B = build_basis(identity_basis(), np.arange(5.0))
    np.testing.assert_array_equal(B, np.eye(5))


def test_bspline_partition_of_unity():
    spec = bspline_basis(degree=3, knot_spacing=2.5, domain=(0.0, 10.0))
    B = build_basis(spec, np.arange(11.0))
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert B.shape == (11, 7)


def test_bspline_full_column_rank_random_domains():
    rng = np.random.default_rng(0)
    for _ in range(25):
        start = rng.uniform(-50, 50)
        span = rng.uniform(5, 40)
        times = np.linspace(start, start + span, 60)
        spec = bspline_basis(degree=3, knot_spacing=rng.uniform(1.0, 4.0))
        B = build_basis(spec, times)
        assert np.linalg.matrix_rank(B) == B.shape[1]
        assert B.shape[1] <= B.shape[0]


def test_bspline_reproduces_cubic_polynomial():
    # least-squares projection of t^3 onto a cubic basis is exact
    spec = bspline_basis(degree=3, knot_spacing=2.5, domain=(0.0, 10.0))
    times = np.linspace(0.0, 10.0, 41)
    B = build_basis(spec, times)
    y = times ** 3
    coef, *_ = np.linalg.lstsq(B, y, rcond=None)
    np.testing.assert_allclose(B @ coef, y, atol=1e-8)


def test_difference_matrix_first_order():
    D = difference_matrix(4, 1)
    np.testing.assert_allclose(D @ np.array([1.0, 2.0, 3.0, 4.0]), [1.0, 1.0, 1.0])


def test_difference_matrix_annihilates_linear():
    D = difference_matrix(5, 2)
    for a, b in [(0.0, 1.0), (3.0, -2.0), (1.5, 0.0)]:
        seq = a + b * np.arange(5.0)
        np.testing.assert_allclose(D @ seq, np.zeros(3), atol=1e-12)


def test_difference_matrix_second_order_rows():
    D = difference_matrix(5, 2)
    for i in range(3):
        row = np.zeros(5)
        row[i : i + 3] = [1.0, -2.0, 1.0]
        np.testing.assert_array_equal(D[i], row)


def test_difference_matrix_size_error():
    with pytest.raises(ParameterError):
        difference_matrix(2, 2)
    with pytest.raises(ParameterError):
        difference_matrix(5, 0)


def test_constraint_projection_hand_case():
    # d=1, K=3: minimum-norm solution of the 2x2 normal equations
    P = constraint_projection(difference_matrix(3, 1))
    delta = P @ np.array([1.0, 1.0])
    np.testing.assert_allclose(delta, [-1.0, 0.0, 1.0], atol=1e-12)
    assert abs(delta.sum()) < 1e-12


def test_constraint_projection_is_right_inverse():
    rng = np.random.default_rng(1)
    for K in range(5, 31):
        for d in (1, 2):
            D = difference_matrix(K, d)
            P = constraint_projection(D)
            np.testing.assert_allclose(D @ P, np.eye(K - d), atol=1e-10)
            gamma = rng.standard_normal(K - d)
            np.testing.assert_allclose(D @ (P @ gamma), gamma, atol=1e-10)
    np.testing.assert_allclose(
        constraint_projection(difference_matrix(6, 1)) @ np.zeros(5), np.zeros(6)
    )


def test_extend_basis_empty_projection():
    spec = bspline_basis(3, 2.5, domain=(0.0, 10.0))
    times = np.arange(11.0)
    np.testing.assert_array_equal(
        extend_basis(spec, times, np.array([])), build_basis(spec, times)
    )


def test_extend_basis_adds_expected_columns():
    spec = bspline_basis(3, 2.5, domain=(0.0, 10.0))
    times = np.arange(11.0)
    proj = np.arange(11.0, 16.0)  # five extra years
    B = build_basis(spec, times)
    Bstar = extend_basis(spec, times, proj)
    assert Bstar.shape == (16, B.shape[1] + 2)
    # original block is untouched
    np.testing.assert_allclose(Bstar[: len(times), : B.shape[1]], B, atol=1e-12)
    np.testing.assert_allclose(Bstar.sum(axis=1), 1.0, atol=1e-12)


def test_extend_basis_identity():
    spec = identity_basis()
    out = extend_basis(spec, np.arange(4.0), np.arange(4.0, 7.0))
    np.testing.assert_array_equal(out, np.eye(7))


def test_extend_basis_overlap_error():
    spec = bspline_basis(3, 2.5)
    with pytest.raises(GridError):
        extend_basis(spec, np.arange(11.0), np.arange(10.0, 14.0))


def test_extend_basis_consistent_epsilon():
    # coefficients fitted on the observation window give identical values
    # there whether evaluated with B or the restriction of B*
    spec = bspline_basis(3, 2.5, domain=(0.0, 10.0))
    times = np.linspace(0.0, 10.0, 21)
    proj = np.array([11.0, 12.0, 13.0])
    B = build_basis(spec, times)
    Bstar = extend_basis(spec, times, proj)
    rng = np.random.default_rng(5)
    coef = rng.standard_normal(B.shape[1])
    np.testing.assert_allclose(B @ coef, Bstar[: len(times), : B.shape[1]] @ coef, atol=1e-12)


def test_degenerate_domain_error():
    spec = bspline_basis(3, 2.5, domain=(5.0, 5.0))
    with pytest.raises(GridError):
        build_basis(spec, np.array([5.0]))


def test_n_basis_functions_matches_matrix():
    spec = bspline_basis(3, 2.5, domain=(0.0, 10.0))
    times = np.arange(11.0)
    assert n_basis_functions(spec, times) == build_basis(spec, times).shape[1]
    assert n_basis_functions(identity_basis(), times) == 11


def test_basis_from_name():
    assert basis_from_name("identity") == identity_basis()
    assert basis_from_name("bspline", degree=3, knot_spacing=2.5) == bspline_basis(3, 2.5)
    with pytest.raises(ParameterError):
        basis_from_name("identity", degree=2)
    with pytest.raises(ParameterError):
        basis_from_name("fourier")


def test_basis_spec_validation():
    with pytest.raises(ParameterError):
        BasisSpec("bspline", degree=3, knot_spacing=0.0)
    with pytest.raises(ParameterError):
        BasisSpec("wavelet")
