import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcreg import (
    FpcaResult,
    FunctionalSample,
    InputError,
    fit_fpca,
    fit_twostep,
    holm_adjust,
    induce_functional_coefficients,
    regress_scores,
    trapezoid_weights,
)

from conftest import single_component_data


def make_fpca(grid, phi_cols, scores, mean=None):
    """Hand-built FPCA result for regression tests (scores known exactly)."""
    K = phi_cols.shape[1]
    return FpcaResult(
        grid=grid,
        mean=np.zeros(grid.size) if mean is None else mean,
        eigenfunctions=phi_cols,
        eigenvalues=np.linspace(2.0, 1.0, K),
        scores=scores,
        noise_variance=0.1,
        pve=np.linspace(0.5, 1.0, K),
        subject_ids=[f"s{i}" for i in range(scores.shape[0])],
    )


def orthonormal_cols(grid, k):
    w = trapezoid_weights(grid)
    rng = np.random.default_rng(42)
    raw = rng.normal(size=(grid.size, k))
    cols = []
    for j in range(k):
        v = raw[:, j]
        for u in cols:
            v = v - (w @ (v * u)) * u
        cols.append(v / np.sqrt(w @ v**2))
    return np.column_stack(cols)


def test_holm_example():
    np.testing.assert_allclose(
        holm_adjust([0.01, 0.04, 0.03]), [0.03, 0.06, 0.06], atol=1e-12
    )


def test_holm_all_ones():
    np.testing.assert_array_equal(holm_adjust([1.0, 1.0]), [1.0, 1.0])


def test_holm_single():
    np.testing.assert_array_equal(holm_adjust([0.2]), [0.2])


def test_holm_rejects_out_of_range():
    with pytest.raises(InputError):
        holm_adjust([0.5, 1.2])
    with pytest.raises(InputError):
        holm_adjust([-0.1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=12))
def test_holm_dominates_and_permutation_equivariant(p):
    p = np.asarray(p)
    adj = holm_adjust(p)
    assert np.all(adj >= p - 1e-15)
    assert np.all(adj <= 1.0)
    perm = np.random.default_rng(0).permutation(p.size)
    np.testing.assert_allclose(holm_adjust(p[perm]), adj[perm], atol=1e-12)


def test_exact_linear_scores_recovered():
    grid = np.linspace(0.0, 1.0, 20)
    n = 50
    rng = np.random.default_rng(1)
    x = rng.normal(size=n)
    scores = (2.5 * x)[:, None]  # exactly linear, zero noise
    fp = make_fpca(grid, orthonormal_cols(grid, 1), scores)
    tables = regress_scores(fp, x[:, None], ["x"])
    row = tables[0].set_index("term")
    assert abs(row.loc["x", "estimate"] - 2.5) <= 1e-10
    assert row.loc["x", "p_value"] <= 1e-12


def test_null_covariates_within_4se():
    # independent covariates: |gamma| within 4 SE of 0 in >= 95% of replicates
    grid = np.linspace(0.0, 1.0, 10)
    phi = orthonormal_cols(grid, 1)
    hits, total = 0, 0
    for rep in range(200):
        rng = np.random.default_rng(10_000 + rep)
        n = 500
        x = rng.normal(size=(n, 1))
        scores = rng.normal(size=(n, 1))
        fp = make_fpca(grid, phi, scores)
        row = regress_scores(fp, x, ["x"])[0].set_index("term")
        total += 1
        if abs(row.loc["x", "estimate"]) <= 4.0 * row.loc["x", "se"]:
            hits += 1
    assert hits / total >= 0.95


def test_rank_deficient_names_columns():
    grid = np.linspace(0.0, 1.0, 10)
    n = 30
    rng = np.random.default_rng(2)
    x1 = rng.normal(size=n)
    X = np.column_stack([x1, 2.0 * x1])
    fp = make_fpca(grid, orthonormal_cols(grid, 1), rng.normal(size=(n, 1)))
    with pytest.raises(InputError, match="dup"):
        regress_scores(fp, X, ["x1", "dup"])


def test_induce_constant_eigenfunction():
    grid = np.linspace(0.0, 2.0, 9)
    c = 1.0 / np.sqrt(2.0)  # constant, quadrature-normalized
    phi = np.full((9, 1), c)
    table = pd.DataFrame(
        {
            "eigenfunction": 1,
            "term": ["intercept", "x"],
            "estimate": [0.0, 2.0],
            "se": [1.0, 1.0],
            "p_value": [1.0, 1.0],
            "p_adjusted": [np.nan, 1.0],
        }
    )
    fp = make_fpca(grid, phi, np.zeros((5, 1)))
    fit = induce_functional_coefficients([table], fp, grid)
    np.testing.assert_allclose(fit.induced_coefficients["x"], 2.0 * c, atol=1e-12)


def test_induce_zero_gammas():
    grid = np.linspace(0.0, 1.0, 7)
    mean = np.sin(grid)
    phi = orthonormal_cols(grid, 2)
    tables = []
    for k in range(2):
        tables.append(
            pd.DataFrame(
                {
                    "eigenfunction": k + 1,
                    "term": ["intercept", "x"],
                    "estimate": [0.0, 0.0],
                    "se": [1.0, 1.0],
                    "p_value": [1.0, 1.0],
                    "p_adjusted": [np.nan, 1.0],
                }
            )
        )
    fp = make_fpca(grid, phi, np.zeros((5, 2)), mean=mean)
    fit = induce_functional_coefficients(tables, fp, grid)
    np.testing.assert_array_equal(fit.induced_coefficients["x"], 0.0)
    np.testing.assert_array_equal(fit.induced_intercept, mean)


def test_induce_matches_matrix_product_oracle():
    grid = np.linspace(0.0, 1.0, 15)
    phi = orthonormal_cols(grid, 2)
    rng = np.random.default_rng(3)
    gam = rng.normal(size=(2, 3))  # 2 components x 3 covariates
    names = ["a", "b", "c"]
    tables = []
    for k in range(2):
        tables.append(
            pd.DataFrame(
                {
                    "eigenfunction": k + 1,
                    "term": ["intercept"] + names,
                    "estimate": [0.5 * k] + list(gam[k]),
                    "se": 1.0,
                    "p_value": 1.0,
                    "p_adjusted": 1.0,
                }
            )
        )
    fp = make_fpca(grid, phi, np.zeros((5, 2)))
    fit = induce_functional_coefficients(tables, fp, grid)
    for j, name in enumerate(names):
        np.testing.assert_allclose(
            fit.induced_coefficients[name], phi @ gam[:, j], atol=1e-12
        )


def test_span_constraint():
    grid, _, _, _, _, samples = single_component_data(seed=20, n=120, G=30)
    fp = fit_fpca(samples, grid=grid, pve_threshold=0.95)
    rng = np.random.default_rng(4)
    for s in samples:
        s.covariates = {"x": float(rng.normal()), "z": float(rng.normal())}
    fit = fit_twostep(samples, fp, ["x", "z"], grid=grid)
    w = trapezoid_weights(grid)
    phi = fp.eigenfunctions
    for curve in fit.induced_coefficients.values():
        proj = phi @ (phi.T @ (w * curve))
        assert float(w @ (curve - proj) ** 2) <= 1e-10


def test_component_additivity():
    # refit with K and K+1: induced coefficient changes by gamma_{K+1} phi_{K+1}
    grid = np.linspace(0.0, 1.0, 12)
    phi = orthonormal_cols(grid, 3)
    rng = np.random.default_rng(5)
    n = 80
    x = rng.normal(size=(n, 1))
    scores3 = rng.normal(size=(n, 3))
    fp2 = make_fpca(grid, phi[:, :2], scores3[:, :2])
    fp3 = make_fpca(grid, phi, scores3)
    t2 = regress_scores(fp2, x, ["x"])
    t3 = regress_scores(fp3, x, ["x"])
    fit2 = induce_functional_coefficients(t2, fp2, grid)
    fit3 = induce_functional_coefficients(t3, fp3, grid)
    g3 = float(t3[2].set_index("term").loc["x", "estimate"])
    np.testing.assert_allclose(
        fit3.induced_coefficients["x"] - fit2.induced_coefficients["x"],
        g3 * phi[:, 2],
        atol=1e-10,
    )


def test_grid_outside_fpca_grid_rejected():
    grid = np.linspace(0.0, 1.0, 8)
    fp = make_fpca(grid, orthonormal_cols(grid, 1), np.zeros((5, 1)))
    table = pd.DataFrame(
        {
            "eigenfunction": 1,
            "term": ["intercept"],
            "estimate": [0.0],
            "se": [1.0],
            "p_value": [1.0],
            "p_adjusted": [np.nan],
        }
    )
    with pytest.raises(InputError):
        induce_functional_coefficients([table], fp, np.array([2.0]))


def test_tables_frame_layout():
    grid, _, _, _, _, samples = single_component_data(seed=21, n=60, G=20)
    fp = fit_fpca(samples, grid=grid)
    rng = np.random.default_rng(6)
    for s in samples:
        s.covariates = {"x": float(rng.normal())}
    fit = fit_twostep(samples, fp, ["x"], grid=grid)
    frame = fit.tables_frame()
    assert list(frame.columns) == [
        "eigenfunction", "term", "estimate", "se", "p_value", "p_adjusted"
    ]
    # intercept excluded from the Holm family
    assert frame.loc[frame.term == "intercept", "p_adjusted"].isna().all()
