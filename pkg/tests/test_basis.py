import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcreg import (
    BasisSystem,
    DomainError,
    difference_penalty,
    evaluate_basis,
    tensor_basis,
    trapezoid_weights,
)


def deboor_basis_row(knots, degree, x):
    """Independent Cox-de Boor recursion (0/0 := 0), one point at a time."""
    n = len(knots) - degree - 1
    # degree-0 indicators; the last nonempty interval is closed on the right
    N = np.zeros(len(knots) - 1)
    for j in range(len(knots) - 1):
        if knots[j] <= x < knots[j + 1]:
            N[j] = 1.0
    if x == knots[-1]:
        for j in range(len(knots) - 2, -1, -1):
            if knots[j] < knots[j + 1]:
                N[j] = 1.0
                break
    for d in range(1, degree + 1):
        N_new = np.zeros(len(knots) - d - 1)
        for j in range(len(knots) - d - 1):
            left = 0.0
            if knots[j + d] > knots[j]:
                left = (x - knots[j]) / (knots[j + d] - knots[j]) * N[j]
            right = 0.0
            if knots[j + d + 1] > knots[j + 1]:
                right = (knots[j + d + 1] - x) / (knots[j + d + 1] - knots[j + 1]) * N[j + 1]
            N_new[j] = left + right
        N = N_new
    return N[:n]


def test_degree0_indicator():
    basis = BasisSystem(0.0, 1.0, 2, degree=0, penalty_order=1)
    row = evaluate_basis(basis, [0.25])[0]
    assert np.array_equal(row, [1.0, 0.0])


def test_partition_of_unity_examples():
    for num_basis, degree in [(4, 1), (7, 2), (10, 3), (12, 5)]:
        basis = BasisSystem(-2.0, 5.0, num_basis, degree=degree)
        t = np.linspace(-2.0, 5.0, 57)
        M = evaluate_basis(basis, t)
        assert np.all(M >= 0)
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    num_extra=st.integers(1, 8),
    degree=st.integers(0, 4),
    frac=st.floats(0.0, 1.0, allow_nan=False),
)
def test_partition_of_unity_property(num_extra, degree, frac):
    num_basis = degree + 1 + num_extra
    order = min(2, num_basis - 1)
    basis = BasisSystem(1.0, 24.0, num_basis, degree=degree, penalty_order=order)
    t = 1.0 + 23.0 * frac
    row = evaluate_basis(basis, [t])[0]
    assert abs(row.sum() - 1.0) < 1e-12
    assert np.all(row >= -1e-15)


def test_matches_deboor_oracle():
    basis = BasisSystem(0.0, 1.0, 10, degree=3)
    t = np.linspace(0.0, 1.0, 100)
    M = evaluate_basis(basis, t)
    oracle = np.array([deboor_basis_row(basis.knots, 3, x) for x in t])
    np.testing.assert_allclose(M, oracle, atol=1e-10)


def test_local_support():
    degree = 3
    basis = BasisSystem(0.0, 1.0, 10, degree=degree)
    M = evaluate_basis(basis, np.linspace(0.0, 1.0, 201))
    t = np.linspace(0.0, 1.0, 201)
    for l in range(basis.num_basis):
        lo, hi = basis.knots[l], basis.knots[l + degree + 1]
        outside = (t < lo - 1e-12) | (t > hi + 1e-12)
        assert np.all(M[outside, l] == 0.0)


def test_domain_error_names_value():
    basis = BasisSystem(0.0, 1.0, 6)
    with pytest.raises(DomainError, match="1.5"):
        evaluate_basis(basis, [0.5, 1.5])


def test_second_difference_matrix():
    D = difference_penalty(4, 2)
    np.testing.assert_array_equal(
        D.entries, [[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]]
    )


def test_first_difference_sign_convention():
    D = difference_penalty(3, 1)
    np.testing.assert_array_equal(D.entries, [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]])


@pytest.mark.parametrize("order", [1, 2, 3])
def test_constants_annihilated(order):
    D = difference_penalty(8, order)
    np.testing.assert_allclose(D.entries @ np.ones(8), 0.0, atol=1e-14)


def test_order_too_large_rejected():
    with pytest.raises(ValueError):
        difference_penalty(3, 3)


def test_gram_psd_and_null_space():
    for num_basis, order in [(6, 1), (10, 2), (9, 3)]:
        G = difference_penalty(num_basis, order).gram()
        ev = np.linalg.eigvalsh(G)
        assert ev.min() >= -1e-12
        assert int(np.sum(ev < 1e-10)) == order
        # null space is exactly polynomials of degree < order in the index
        idx = np.arange(num_basis, dtype=float)
        for d in range(order):
            np.testing.assert_allclose(
                difference_penalty(num_basis, order).entries @ idx**d, 0.0, atol=1e-9
            )


def test_applies_finite_differences():
    rng = np.random.default_rng(1)
    b = rng.normal(size=9)
    for order in (1, 2, 3):
        D = difference_penalty(9, order)
        np.testing.assert_allclose(D.entries @ b, np.diff(b, n=order), atol=1e-12)


def test_tensor_degree0_single_indicator():
    bt = BasisSystem(0.0, 1.0, 2, degree=0, penalty_order=1)
    bu = BasisSystem(0.0, 1.0, 3, degree=0, penalty_order=1)
    v = tensor_basis(bt, bu, 0.75, 0.1)
    assert np.sum(v == 1.0) == 1
    assert np.sum(v == 0.0) == v.size - 1


def test_tensor_is_flattened_outer_product():
    bt = BasisSystem(1.0, 24.0, 8)
    bu = BasisSystem(25.0, 36.0, 6)
    rng = np.random.default_rng(3)
    for _ in range(50):
        t = rng.uniform(1.0, 24.0)
        u = rng.uniform(25.0, 36.0)
        v = tensor_basis(bt, bu, t, u)
        rt = np.array(deboor_basis_row(bt.knots, bt.degree, t))
        ru = np.array(deboor_basis_row(bu.knots, bu.degree, u))
        np.testing.assert_allclose(v, np.outer(rt, ru).ravel(), atol=1e-12)
        assert abs(v.sum() - 1.0) < 1e-12


def test_evaluation_deterministic():
    basis = BasisSystem(1.0, 24.0, 20)
    t = np.linspace(1.0, 24.0, 97)
    first = evaluate_basis(basis, t)
    assert np.array_equal(first, evaluate_basis(basis, t))


def test_json_round_trip():
    basis = BasisSystem(1.0, 24.0, 20, degree=3, penalty_order=2)
    again = BasisSystem.from_json(basis.to_json())
    assert again == basis
    assert json.loads(basis.to_json())["domain"] == [1.0, 24.0]


def test_penalty_csv_export(tmp_path):
    D = difference_penalty(5, 2)
    path = tmp_path / "penalty.csv"
    D.to_csv(path)
    back = np.loadtxt(path, delimiter=",")
    np.testing.assert_array_equal(back, D.entries)


def test_knot_structure():
    basis = BasisSystem(0.0, 1.0, 10, degree=3)
    assert basis.num_basis == (basis.knots.size - 2 * (basis.degree + 1)) + basis.degree + 1
    assert np.all(np.diff(basis.knots) >= 0)
    interior = basis.knots[basis.degree + 1:-(basis.degree + 1)]
    assert np.all((interior > 0.0) & (interior < 1.0))


def test_trapezoid_weights_sum_to_span():
    grid = np.array([1.0, 2.0, 4.0, 7.0])
    w = trapezoid_weights(grid)
    assert np.all(w > 0)
    assert np.isclose(w.sum(), 6.0)
