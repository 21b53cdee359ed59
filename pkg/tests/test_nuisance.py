import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from excursion_kit import kernels
from excursion_kit.data import design_matrix
from excursion_kit.errors import (ConfigurationError, DataError, DegenerateArmError, DegenerateFoldError,
                                  NumericalError)
from excursion_kit.nuisance import (EPS_CLIP, ColumnSpec, LogisticModel, NuisanceSpec, build_nuisance, cross_fit,
                                    expit, fit_logistic, fit_nuisance, from_design, predict_prob, subject_folds)

from conftest import hand_panel, make_panel

EXPIT_HALF = 0.622459331202  # mpmath, 12 significant digits


def penalized_loglik(X, y, beta, lam):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0, eta)) - 0.5 * lam * beta @ beta)


def grid_argmax(X, y, lam, lo=-5.0, hi=5.0):
    """Brute-force maximizer over a 2-d box, refined by successively finer grids."""
    center = np.zeros(2)
    half, step = (hi - lo) / 2, 0.01
    for _ in range(4):
        a = np.arange(-half, half + step / 2, step)
        b0, b1 = np.meshgrid(center[0] + a, center[1] + a, indexing="ij")
        B = np.stack([b0.ravel(), b1.ravel()], axis=1)
        eta = X @ B.T
        ll = (y[:, None] * eta - np.logaddexp(0, eta)).sum(0) - 0.5 * lam * (B ** 2).sum(1)
        center = B[np.argmax(ll)]
        half, step = 5 * step, step / 10
    return center


def test_fit_matches_brute_force_grid_search():
    rng = np.random.default_rng(11)
    x = rng.standard_normal(20)
    y = (rng.random(20) < 1 / (1 + np.exp(-(0.4 + 1.1 * x)))).astype(float)
    X = np.column_stack([np.ones(20), x])
    model = fit_logistic(X, y, ridge_lambda=1e-6)
    assert model.converged
    np.testing.assert_allclose(model.coefficients, grid_argmax(X, y, 1e-6), atol=1e-4)


@given(st.integers(0, 10_000))
def test_score_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d = 30, 3
    X = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
    y = (rng.random(n) < 0.5).astype(float)
    beta = rng.normal(0, 1, d)
    lam = 0.3
    _, score, _ = kernels.logistic_terms(X, y, np.ones(n), beta, lam)
    h = 1e-6
    fd = np.array([(penalized_loglik(X, y, beta + h * e, lam) - penalized_loglik(X, y, beta - h * e, lam)) / (2 * h)
                   for e in np.eye(d)])
    np.testing.assert_allclose(score, fd, rtol=1e-4, atol=1e-6)


@given(st.integers(0, 10_000))
def test_loglik_non_decreasing_across_iterations(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(40), rng.standard_normal((40, 2)) * 3])
    y = (rng.random(40) < 0.3).astype(float)
    model = fit_logistic(X, y)
    trace = np.array(model.trace)
    assert np.all(np.diff(trace) >= -1e-9 * np.maximum(1, np.abs(trace[:-1])))


def test_all_zero_outcome_stays_finite_and_small():
    X = np.ones((50, 1))
    model = fit_logistic(X, np.zeros(50), ridge_lambda=1e-8)
    assert np.all(np.isfinite(model.coefficients))
    assert model.coefficients[0] < 0
    assert np.all(predict_prob(model, X) < 0.01)


def test_balanced_intercept_only_is_half():
    y = np.array([0, 1] * 10, dtype=float)
    model = fit_logistic(np.ones((20, 1)), y)
    assert model.coefficients[0] == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(predict_prob(model, np.ones((3, 1))), 0.5)


def test_separation_escalates_ridge():
    x = np.linspace(-1, 1, 40)
    X = np.column_stack([np.ones(40), x])
    model = fit_logistic(X, (x > 0).astype(float))
    assert model.ridge_lambda > 1e-6
    assert np.all(np.isfinite(model.coefficients))


def test_rank_deficient_without_ridge_raises():
    X = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(NumericalError, match="ridge"):
        fit_logistic(X, np.r_[np.zeros(5), np.ones(5)], ridge_lambda=0.0)


def test_dimension_mismatch_raises():
    with pytest.raises(ConfigurationError):
        fit_logistic(np.ones((5, 1)), np.zeros(4))
    with pytest.raises(ConfigurationError):
        fit_logistic(np.ones((4, 1)), np.array([0, 1, 2, 0]))


def test_weighted_fit_equals_replicated_rows():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(15), rng.standard_normal(15)])
    y = (rng.random(15) < 0.5).astype(float)
    w = rng.integers(1, 4, 15)
    a = fit_logistic(X, y, weights=w.astype(float))
    b = fit_logistic(np.repeat(X, w, axis=0), np.repeat(y, w))
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-7)


def test_predict_prob_examples():
    spec = ColumnSpec(("x",))
    zero = LogisticModel(np.zeros(2), spec, 0.0, True, 0)
    np.testing.assert_array_equal(predict_prob(zero, np.ones((3, 2))), 0.5)
    big = LogisticModel(np.array([20.0, 0.0]), spec, 0.0, True, 0)
    np.testing.assert_array_equal(predict_prob(big, np.ones((2, 2))), 1 - EPS_CLIP)
    m = LogisticModel(np.array([0.3, 0.2]), spec, 0.0, True, 0)
    assert predict_prob(m, np.array([[1.0, 1.0]]))[0] == pytest.approx(EXPIT_HALF, abs=1e-5)
    with pytest.raises(ConfigurationError):
        predict_prob(m, np.ones((2, 3)))


def test_expit_is_stable_in_the_tails():
    assert expit(800.0) == 1.0 and expit(-800.0) == 0.0


def test_cross_fit_is_deterministic(panel):
    a = cross_fit(panel, K=2, seed=5)
    b = cross_fit(panel, K=2, seed=5)
    np.testing.assert_array_equal(a.fold_assignment, b.fold_assignment)
    for f in ("p_hat", "p_tilde", "m1_hat", "m0_hat"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert a.source == "cross-fitted"


def test_cross_fit_folds_follow_subjects(panel):
    fits = cross_fit(panel, K=3, seed=1)
    starts = panel.subject_starts()
    for g in range(panel.n_subjects):
        assert len(set(fits.fold_assignment[starts[g]:starts[g + 1]])) == 1


def test_cross_fit_null_panel_matches_complement_rates():
    panel = make_panel(n=100, T=30, gamma=(0, 0, 0), beta=0.0, seed=9)
    fits = cross_fit(panel, K=2, seed=0)
    A, Y = panel.A.astype(float), panel.Y.astype(float)
    for k in (0, 1):
        test, train = fits.fold_assignment == k, fits.fold_assignment != k
        for vec, target in ((fits.p_hat, A[train].mean()), (fits.p_tilde, A[train].mean()),
                            (fits.m1_hat, Y[train & (A == 1)].mean()), (fits.m0_hat, Y[train & (A == 0)].mean())):
            # per-row spread reflects slope noise (~0.035 RMS at this size); the fold-level level must match
            assert abs(vec[test].mean() - target) < 0.05
            assert np.max(np.abs(vec[test] - target)) < 0.25


def test_cross_fit_empty_moderators_gives_complement_treatment_rate(panel):
    fits = cross_fit(panel, NuisanceSpec(moderator_columns=()), K=2, seed=3)
    A = panel.A.astype(float)
    for k in (0, 1):
        rate = A[fits.fold_assignment != k].mean()
        np.testing.assert_allclose(fits.p_tilde[fits.fold_assignment == k], rate, atol=1e-6)


def test_cross_fit_predictions_come_from_the_complement_model():
    panel = make_panel(n=30, T=10, seed=4)
    fits = cross_fit(panel, K=3, seed=2)
    spec = NuisanceSpec().resolve(panel)
    Xt = design_matrix(panel, spec.treatment_columns)
    A = panel.A.astype(float)
    for k in range(3):
        test = fits.fold_assignment == k
        m = fit_logistic(Xt[~test], A[~test], column_spec=ColumnSpec(spec.treatment_columns))
        np.testing.assert_allclose(fits.p_hat[test], predict_prob(m, Xt[test]), rtol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_cross_fit_fold_predictions_ignore_own_rows(k):
    panel = make_panel(n=30, T=10, seed=8)
    fits = cross_fit(panel, K=3, seed=0)
    own = fits.fold_assignment == k
    A, Y = panel.A.copy(), panel.Y.copy()
    A[own], Y[own] = 1 - A[own], 1 - Y[own]
    other = cross_fit(panel.replace(A=A, Y=Y), K=3, seed=0)
    for f in ("p_hat", "p_tilde", "m1_hat", "m0_hat"):
        np.testing.assert_array_equal(getattr(fits, f)[own], getattr(other, f)[own])


def test_cross_fit_degenerate_fold_is_named():
    panel = make_panel(n=4, T=5, seed=1)
    A = np.zeros(panel.n_rows, dtype=int)
    A[:5] = 1  # only subject 0 ever treated
    with pytest.raises(DegenerateFoldError, match="fold"):
        cross_fit(panel.replace(A=A), K=2, seed=0)


def test_cross_fit_requires_two_folds(panel):
    with pytest.raises(ConfigurationError):
        cross_fit(panel, K=1)


def test_from_design_constant_half():
    panel = make_panel(p=0.5)
    fits = from_design(panel, NuisanceSpec(moderator_columns=()))
    np.testing.assert_array_equal(fits.p_tilde, 0.5)
    assert fits.source == "design-known" and not fits.outcome_fitted
    np.testing.assert_array_equal(fits.m1_hat, fits.m0_hat)


def test_from_design_constant_cancels_in_stabilized_ratio():
    from excursion_kit.weights import stabilized_weights
    panel = make_panel(p=0.1, seed=2)
    fits = from_design(panel)
    np.testing.assert_allclose(stabilized_weights(fits, panel), 1.0, rtol=1e-14)


def test_from_design_mixed_probabilities_average():
    panel = make_panel(n=3, T=4)
    pk = np.where(panel.t % 2 == 0, 0.3, 0.7)
    fits = from_design(panel.replace(p_known=pk))
    np.testing.assert_allclose(fits.p_tilde, 0.5, rtol=1e-12)


def test_from_design_missing_probability_is_data_error():
    panel = make_panel(p_known=False)
    with pytest.raises(DataError):
        from_design(panel)


def test_fit_nuisance_arm_without_rows():
    panel = make_panel(n=3, T=4)
    with pytest.raises(DegenerateArmError):
        fit_nuisance(panel.replace(A=np.zeros(panel.n_rows, dtype=int)))


def test_probabilities_are_clipped(panel):
    fits = fit_nuisance(panel)
    for f in ("p_hat", "p_tilde", "m1_hat", "m0_hat"):
        v = getattr(fits, f)
        assert np.all((v >= EPS_CLIP) & (v <= 1 - EPS_CLIP))


def test_build_nuisance_dispatch(panel):
    assert build_nuisance(panel, "design").source == "design-known"
    assert build_nuisance(panel, "fit").source == "fitted"
    assert build_nuisance(panel, "crossfit:3").source == "cross-fitted"
    with pytest.raises(ConfigurationError):
        build_nuisance(panel, "crossfit:x")
    with pytest.raises(ConfigurationError):
        build_nuisance(panel, "bootstrap")


def test_unavailable_rows_are_excluded_from_fits():
    rows = {"a": [(1, 1, 1, (0.0,), 0.5), (0, 0, 0, (9.0,), 0.5), (0, 1, 1, (1.0,), 0.5)],
            "b": [(1, 0, 1, (2.0,), 0.5), (0, 0, 1, (3.0,), 0.5)]}
    fits = fit_nuisance(hand_panel(rows))
    assert fits.n_rows == 4
