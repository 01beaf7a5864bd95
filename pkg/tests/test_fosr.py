import numpy as np
import pytest

from funcreg import (
    BasisSystem,
    FosrSpec,
    FunctionalSample,
    InputError,
    assemble_long_design,
    difference_penalty,
    evaluate_basis,
    fit_fosr,
    fit_fpca,
    fit_report,
    predict_coefficient,
)
from funcreg.fosr import fit_fosr_fixed_lambda
from funcreg.plsq import MixedDesign, PenaltyComponent, select_lambdas, solve_plsq

from conftest import shifted_subjects_data, single_component_data


def small_fpca(samples, grid):
    return fit_fpca(samples, grid=grid)


def test_toy_identity_penalized_solve():
    # X = I2, y = (1, 2), first-order difference penalty, lambda = 1
    D = difference_penalty(2, 1).gram()
    design = MixedDesign(
        [np.eye(2)], [np.array([1.0, 2.0])], None, np.zeros(0),
        [PenaltyComponent("b", 0, 2, D)],
    )
    sol = solve_plsq(design, [1.0])
    np.testing.assert_allclose(sol.beta, [4.0 / 3.0, 5.0 / 3.0], atol=1e-12)


def test_lambda_zero_no_random_effects_equals_ols():
    grid, beta0, beta1, samples = shifted_subjects_data(seed=1, n=20, shift_sd=0.0)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 6), num_random_components=0)
    fit = fit_fosr_fixed_lambda(samples, spec, _dummy_fpca(grid), lam=0.0)
    # closed-form oracle on the stacked basis-expanded design
    B = evaluate_basis(spec.basis, grid)
    X = np.vstack([
        np.hstack([B, s.covariates["x"] * B]) for s in samples
    ])
    y = np.concatenate([s.values for s in samples])
    oracle = np.linalg.solve(X.T @ X, X.T @ y)
    fitted = np.concatenate([fit.functional_coefficients[:, 0],
                             fit.functional_coefficients[:, 1]])
    np.testing.assert_allclose(fitted, oracle, rtol=1e-8, atol=1e-10)


def _dummy_fpca(grid):
    from funcreg import FpcaResult

    return FpcaResult(
        grid=grid,
        mean=np.zeros(grid.size),
        eigenfunctions=np.ones((grid.size, 1)),
        eigenvalues=np.array([1.0]),
        scores=np.zeros((1, 1)),
        noise_variance=1.0,
        pve=np.ones(1),
        subject_ids=["s0"],
    )


def test_design_dimensions():
    # 2 subjects x 3 times, 1 varying covariate, L=4, K=1
    grid = np.array([0.0, 0.5, 1.0])
    samples = [
        FunctionalSample("a", grid, np.array([1.0, 2.0, 3.0]), covariates={"x": 1.0}),
        FunctionalSample("b", grid, np.array([0.0, 1.0, 0.0]), covariates={"x": 0.0}),
    ]
    fp = _dummy_fpca(grid)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 4), num_random_components=1,
                    min_obs=3)
    bundle = assemble_long_design(samples, spec, fp)
    assert bundle.design.n_rows == 6
    assert bundle.design.p_fixed == 8
    assert bundle.design.n_subjects * bundle.design.K == 2


def test_min_obs_exclusion():
    grid = np.linspace(0.0, 1.0, 10)
    good = FunctionalSample("good", grid, np.zeros(10), covariates={"x": 1.0})
    sparse = FunctionalSample("sparse", grid[:3], np.zeros(3), covariates={"x": 0.0})
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 5), num_random_components=0,
                    min_obs=4)
    bundle = assemble_long_design([good, sparse], spec, _dummy_fpca(grid))
    assert bundle.excluded_subjects == ["sparse"]
    assert len(bundle.samples) == 1
    with pytest.raises(InputError):
        assemble_long_design([sparse], spec, _dummy_fpca(grid))


def test_hand_assembled_design_small():
    # n=2, L=3, one varying covariate: block layout must match by hand
    grid = np.array([0.0, 1.0])
    samples = [
        FunctionalSample("a", grid, np.array([1.0, 2.0]), covariates={"x": 2.0}),
        FunctionalSample("b", grid, np.array([3.0, 4.0]), covariates={"x": -1.0}),
    ]
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 3, degree=1), min_obs=1,
                    num_random_components=0)
    bundle = assemble_long_design(samples, spec, _dummy_fpca(grid))
    B = evaluate_basis(spec.basis, grid)
    np.testing.assert_array_equal(bundle.design.F_blocks[0][:, :3], B)
    np.testing.assert_array_equal(bundle.design.F_blocks[0][:, 3:], 2.0 * B)
    np.testing.assert_array_equal(bundle.design.F_blocks[1][:, 3:], -1.0 * B)


def test_estimable_with_single_observation_subjects():
    # deleting unobserved rows is the fitting path; min_obs is policy above it
    rng = np.random.default_rng(0)
    grid = np.linspace(0.0, 1.0, 8)
    samples = [
        FunctionalSample(f"s{i}", grid[[i % 8]], rng.normal(size=1),
                         covariates={"x": float(i % 2)})
        for i in range(24)
    ]
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 4), num_random_components=0,
                    min_obs=1, lambda_grid=np.array([1.0]))
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    assert np.all(np.isfinite(fit.functional_coefficients))


def test_large_lambda_gives_linear_coefficient():
    grid, beta0, beta1, samples = shifted_subjects_data(seed=2, n=40)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8),
                    num_random_components=0, lambda_grid=np.array([1e12]))
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    tt = np.linspace(0.0, 1.0, 50)
    for term in ("intercept", "x"):
        curve = predict_coefficient(fit, term, tt)
        slope, icept = np.polyfit(tt, curve, 1)
        np.testing.assert_allclose(curve, icept + slope * tt, atol=1e-4)


def test_intercept_only_constant_fit():
    grid = np.linspace(0.0, 1.0, 12)
    samples = [FunctionalSample(f"s{i}", grid, np.full(12, 5.0)) for i in range(6)]
    spec = FosrSpec([], [], BasisSystem(0.0, 1.0, 6), num_random_components=0,
                    lambda_grid=np.array([1e-8]))
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    np.testing.assert_allclose(
        predict_coefficient(fit, "intercept", grid), 5.0, atol=1e-6
    )


def test_zero_coefficients_zero_function():
    grid = np.linspace(0.0, 1.0, 5)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 4), num_random_components=0)
    samples = [
        FunctionalSample(f"s{i}", grid, np.zeros(5), covariates={"x": float(i % 2)})
        for i in range(6)
    ]
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    np.testing.assert_allclose(predict_coefficient(fit, "x", grid), 0.0, atol=1e-10)


def test_nested_grid_agreement():
    grid, _, _, samples = shifted_subjects_data(seed=3, n=24)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 7), num_random_components=0)
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    coarse = np.linspace(0.0, 1.0, 5)
    fine = np.linspace(0.0, 1.0, 9)  # contains the coarse grid
    c = predict_coefficient(fit, "x", coarse)
    f = predict_coefficient(fit, "x", fine)
    np.testing.assert_array_equal(c, f[::2])


def test_unknown_covariate_lookup_error():
    grid, _, _, samples = shifted_subjects_data(seed=4, n=10)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 5), num_random_components=0)
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    with pytest.raises(KeyError):
        predict_coefficient(fit, "nonexistent", grid)


def test_determinism_bitwise():
    grid, _, _, samples = shifted_subjects_data(seed=5, n=30)
    fp = small_fpca(samples, grid)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8),
                    num_random_components=min(1, fp.num_components))
    fit1 = fit_fosr(samples, spec, fp)
    fit2 = fit_fosr(samples, spec, fp)
    assert np.array_equal(fit1.functional_coefficients, fit2.functional_coefficients)
    assert fit1.lambdas == fit2.lambdas


def test_penalized_normal_equations_gradient():
    grid, _, _, samples = shifted_subjects_data(seed=6, n=30)
    fp = small_fpca(samples, grid)
    K = min(1, fp.num_components)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8), num_random_components=K)
    bundle = assemble_long_design(samples, spec, fp)
    lambdas, _, sol = select_lambdas(bundle.design, spec.lambda_grid)
    # assemble the full gradient M'(Mb - y) + P b
    F = np.vstack(bundle.design.F_blocks)
    y = np.concatenate(bundle.design.y_blocks)
    n_sub = bundle.design.n_subjects
    Z = np.zeros((len(y), n_sub * K))
    row = 0
    for i, Zi in enumerate(bundle.design.Z_blocks):
        Z[row:row + Zi.shape[0], i * K:(i + 1) * K] = Zi
        row += Zi.shape[0]
    M = np.hstack([F, Z])
    coef = np.concatenate([sol.beta, sol.zeta.ravel()])
    P = np.zeros((M.shape[1], M.shape[1]))
    P[:F.shape[1], :F.shape[1]] = bundle.design.penalty_matrix(lambdas)
    P[F.shape[1]:, F.shape[1]:] = np.diag(np.tile(bundle.design.ridge, n_sub))
    grad = M.T @ (M @ coef - y) + P @ coef
    scale = np.linalg.norm(M.T @ y)
    assert np.linalg.norm(grad) <= 1e-8 * scale


def test_effective_df_monotone_in_lambda():
    grid, _, _, samples = shifted_subjects_data(seed=7, n=30)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8), num_random_components=0)
    bundle = assemble_long_design(samples, spec, _dummy_fpca(grid))
    lams = np.logspace(-6, 8, 15)
    prev = None
    for lam in lams:
        sol = solve_plsq(bundle.design, [lam, 1.0])
        edf = sol.edf(0, 8)
        if prev is not None:
            assert edf <= prev + 1e-10
        prev = edf
    # null-space floor and full-rank ceiling
    lo = solve_plsq(bundle.design, [1e14, 1.0]).edf(0, 8)
    hi = solve_plsq(bundle.design, [0.0, 1.0]).edf(0, 8)
    assert lo >= 2.0 - 1e-6 and hi <= 8.0 + 1e-9


def test_effective_df_limit_is_null_space_dimension():
    grid, _, _, samples = shifted_subjects_data(seed=8, n=30)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8),
                    num_random_components=0, lambda_grid=np.array([1e12]))
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    assert abs(fit.effective_df["x"] - 2.0) <= 0.05
    assert abs(fit.effective_df["intercept"] - 2.0) <= 0.05


def test_fit_report_random_effects_absorb_shifts():
    grid, _, _, samples = shifted_subjects_data(seed=9, n=60, shift_sd=1.0)
    fp = small_fpca(samples, grid)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8),
                    num_random_components=min(1, fp.num_components))
    report = fit_report(fit_fosr(samples, spec, fp))
    assert report.sd_with_z <= 0.25 * report.sd_without_z
    assert set(report.residual_mean_by_subject.columns) == {
        "subject_id", "with_z", "without_z"
    }


def test_fit_report_no_heterogeneity_ratio_near_one():
    grid, _, _, samples = shifted_subjects_data(seed=10, n=80, shift_sd=0.0)
    fp = small_fpca(samples, grid)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8),
                    num_random_components=min(1, fp.num_components))
    report = fit_report(fit_fosr(samples, spec, fp))
    assert 0.8 <= report.shrink_ratio <= 1.25


def test_boundary_lambda_flagged():
    grid, _, _, samples = shifted_subjects_data(seed=11, n=30)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8),
                    num_random_components=0, lambda_grid=np.array([1e10, 1e12]))
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    assert set(fit.lambda_boundary.values()) <= {"lo", "hi", None}
    assert any(v is not None for v in fit.lambda_boundary.values())


def test_reml_criterion_runs():
    grid, _, beta1, samples = shifted_subjects_data(seed=12, n=40, shift_sd=0.2)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 8),
                    num_random_components=0, criterion="reml",
                    lambda_grid=np.logspace(-4, 6, 11))
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    est = predict_coefficient(fit, "x", grid)
    # sane recovery under the alternative criterion
    assert float(np.mean((est - beta1) ** 2)) < 0.05


def test_fit_json_and_curve_frame():
    grid, _, _, samples = shifted_subjects_data(seed=13, n=20)
    spec = FosrSpec(["x"], [], BasisSystem(0.0, 1.0, 6), num_random_components=0)
    fit = fit_fosr(samples, spec, _dummy_fpca(grid))
    payload = fit.to_json()
    assert '"lambdas"' in payload and '"effective_df"' in payload
    frame = fit.coefficient_frame(grid)
    assert list(frame.columns) == ["covariate", "t", "estimate"]
    assert set(frame["covariate"]) == {"intercept", "x"}
