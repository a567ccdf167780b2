"""Tests for the dose-response estimator variants."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from isodose.estimator import (
    LearnerConfig,
    evaluate,
    fit_causal_isotonic,
    fit_cross_fitted,
    fit_discrete,
    fit_no_transform,
    fit_sample_split,
    make_folds,
    primitive_gamma,
    pseudo_outcomes,
)
from isodose.isotonic import isotonic_regression
from isodose.nuisance import (
    ConstantOutcome,
    ConstantRatio,
    Dataset,
    FunctionOutcome,
    FunctionRatio,
)
from tests.test_isotonic import brute_force_monotone_ls

IDENTITY = LearnerConfig(
    fit_mu=lambda ds: ConstantOutcome(0.0),
    fit_g=lambda ds: ConstantRatio(1.0),
)


def random_dataset(rng, n, p=2):
    return Dataset(
        y=rng.normal(size=n),
        a=rng.normal(size=n),
        w=rng.normal(size=(n, p)),
    )


class TestPseudoOutcomes:
    def test_identity_nuisances_return_y(self):
        rng = np.random.default_rng(0)
        ds = random_dataset(rng, 20)
        po = pseudo_outcomes(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        assert_allclose(po.xi, ds.y, atol=1e-14)

    def test_w_free_mu_cancels(self):
        rng = np.random.default_rng(1)
        ds = random_dataset(rng, 25)
        mu = FunctionOutcome(lambda a, w: np.sin(a))
        po = pseudo_outcomes(ds, mu, ConstantRatio(1.0))
        # residual plus added-back mean: xi = y - sin(a) + sin(a)
        assert_allclose(po.xi, ds.y, atol=1e-12)

    def test_handworked_two_points(self):
        ds = Dataset(y=[1.0, 3.0], a=[0.0, 1.0], w=[[2.0], [4.0]])
        mu = FunctionOutcome(lambda a, w: w[:, 0])
        po = pseudo_outcomes(ds, mu, ConstantRatio(2.0))
        expected0 = (1.0 - 2.0) / 2.0 + (2.0 + 4.0) / 2.0
        expected1 = (3.0 - 4.0) / 2.0 + (2.0 + 4.0) / 2.0
        assert_allclose(po.xi, [expected0, expected1])

    def test_nonfinite_nuisance_rejected(self):
        ds = Dataset(y=[0.0, 1.0], a=[0.0, 1.0], w=[[0.0], [1.0]])
        bad = FunctionRatio(lambda a, w: np.where(a > 0.5, 0.0, 1.0))
        with pytest.raises(ValueError, match="non-finite"):
            pseudo_outcomes(ds, ConstantOutcome(0.0), bad)


class TestPrimitiveGamma:
    def test_endpoints(self):
        rng = np.random.default_rng(2)
        ds = random_dataset(rng, 30)
        po = pseudo_outcomes(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        gamma = primitive_gamma(ds, po)
        assert_allclose(gamma(ds.a.max()), po.xi.mean(), rtol=1e-12)
        assert gamma(ds.a.min() - 1.0) == 0.0

    def test_matches_double_sum_form(self):
        # cumulative form vs the explicit residual sum + n^-2 double sum
        rng = np.random.default_rng(3)
        ds = random_dataset(rng, 3)
        mu = FunctionOutcome(lambda a, w: 0.3 * a + 0.5 * w[:, 0])
        g = FunctionRatio(lambda a, w: 1.5 + 0.2 * np.tanh(w[:, 1]))
        po = pseudo_outcomes(ds, mu, g)
        gamma = primitive_gamma(ds, po)
        n = ds.n
        for a0 in ds.a:
            resid = (ds.y - mu(ds.a, ds.w)) / g(ds.a, ds.w)
            ind = ds.a <= a0
            direct = np.sum(ind * resid) / n
            for i in range(n):
                if ds.a[i] <= a0:
                    for j in range(n):
                        direct += mu(ds.a[i : i + 1], ds.w[j : j + 1])[0] / n**2
            assert_allclose(gamma(a0), direct, atol=1e-12)


class TestStandardFit:
    def test_reduces_to_classical_isotonic(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            ds = random_dataset(rng, rng.integers(5, 60))
            fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
            classical = isotonic_regression(ds.y, ds.a)
            assert_allclose(evaluate(fit, ds.a), classical(ds.a), atol=1e-12)

    def test_monotone_xi_interpolated(self):
        a = np.arange(10.0)
        y = np.linspace(-1, 1, 10)
        ds = Dataset(y=y, a=a, w=np.zeros((10, 1)))
        fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        assert_allclose(evaluate(fit, a), y, atol=1e-12)

    def test_matches_brute_force_small_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n = rng.integers(2, 9)
            ds = random_dataset(rng, n)
            fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
            order = np.argsort(ds.a)
            oracle = brute_force_monotone_ls(ds.y[order])
            assert_allclose(evaluate(fit, ds.a[order]), oracle, atol=1e-10)

    def test_projection_identities(self):
        rng = np.random.default_rng(6)
        ds = random_dataset(rng, 40)
        mu = FunctionOutcome(lambda a, w: 0.2 * a * w[:, 0])
        g = FunctionRatio(lambda a, w: np.exp(0.3 * np.sin(w[:, 1])))
        fit = fit_causal_isotonic(ds, mu, g)
        assert_allclose(np.sum(evaluate(fit, ds.a)), np.sum(fit.xi.xi), rtol=1e-10)
        fitted = evaluate(fit, np.sort(ds.a))
        assert np.all(np.diff(fitted) >= 0)

    def test_theta_is_psi_of_ranks(self):
        rng = np.random.default_rng(7)
        ds = random_dataset(rng, 35)
        fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        assert_array_equal(evaluate(fit, ds.a), fit.psi(fit.f_hat(ds.a)))
        assert_array_equal(fit.theta(ds.a), evaluate(fit, ds.a))

    def test_restriction_runs_pipeline_on_subsample(self):
        rng = np.random.default_rng(8)
        ds = random_dataset(rng, 50)
        lo, hi = np.quantile(ds.a, [0.2, 0.8])
        fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0), restriction=(lo, hi))
        mask = (ds.a >= lo) & (ds.a <= hi)
        classical = isotonic_regression(ds.y[mask], ds.a[mask])
        assert_allclose(evaluate(fit, ds.a[mask]), classical(ds.a[mask]), atol=1e-12)

    def test_empty_restriction_rejected(self):
        rng = np.random.default_rng(9)
        ds = random_dataset(rng, 20)
        with pytest.raises(ValueError):
            fit_causal_isotonic(
                ds, ConstantOutcome(0.0), ConstantRatio(1.0), restriction=(1e6, 2e6)
            )


class TestCrossFitted:
    def test_residual_only_case(self):
        ds = Dataset(y=[1.0, 0.0, 1.0, 1.0], a=[0.1, 0.2, 0.3, 0.4], w=np.zeros((4, 1)))
        folds = make_folds(4, 2, seed=0)
        fit = fit_cross_fitted(ds, IDENTITY, folds)
        for a0 in ds.a:
            assert_allclose(fit.gamma(a0), np.mean((ds.a <= a0) * ds.y), atol=1e-12)

    def test_matches_direct_formula_with_fixed_nuisances(self):
        rng = np.random.default_rng(10)
        ds = random_dataset(rng, 24)
        mu = FunctionOutcome(lambda a, w: 0.4 * a + 0.3 * w[:, 0] ** 2)
        g = FunctionRatio(lambda a, w: 1.2 + 0.1 * np.cos(a))
        learners = LearnerConfig(fit_mu=lambda ds_: mu, fit_g=lambda ds_: g)
        folds = make_folds(ds.n, 3, seed=1)
        fit = fit_cross_fitted(ds, learners, folds)
        V = folds.V
        for a0 in np.quantile(ds.a, [0.25, 0.5, 0.9]):
            total = 0.0
            for fold in folds.folds:
                N = len(fold)
                af, wf, yf = ds.a[fold], ds.w[fold], ds.y[fold]
                ind = af <= a0
                term1 = np.sum(ind * (yf - mu(af, wf)) / g(af, wf)) / N
                term2 = 0.0
                for i in fold:
                    if ds.a[i] <= a0:
                        for j in fold:
                            term2 += mu(ds.a[i : i + 1], ds.w[j : j + 1])[0]
                total += (term1 + term2 / N**2) / V
            assert_allclose(fit.gamma(a0), total, atol=1e-12)

    def test_monotone_for_any_fold_seed(self):
        rng = np.random.default_rng(11)
        ds = random_dataset(rng, 30)
        for seed in range(5):
            fit = fit_cross_fitted(ds, IDENTITY, make_folds(30, 5, seed=seed))
            vals = evaluate(fit, np.sort(ds.a))
            assert np.all(np.diff(vals) >= 0)

    def test_coincides_with_standard_under_full_j_average(self):
        rng = np.random.default_rng(12)
        ds = random_dataset(rng, 24)  # divisible by V: equal folds
        mu = FunctionOutcome(lambda a, w: 0.4 * a + 0.3 * w[:, 0])
        g = FunctionRatio(lambda a, w: 1.0 + 0.2 * np.tanh(a))
        learners = LearnerConfig(fit_mu=lambda ds_: mu, fit_g=lambda ds_: g)
        cf = fit_cross_fitted(ds, learners, make_folds(24, 4, seed=3), _full_j_average=True)
        standard = fit_causal_isotonic(ds, mu, g)
        assert_allclose(evaluate(cf, ds.a), evaluate(standard, ds.a), atol=1e-12)

    def test_fold_validation(self):
        with pytest.raises(ValueError):
            make_folds(10, 6, seed=0)  # V > n/2
        with pytest.raises(ValueError):
            make_folds(10, 1, seed=0)


class TestNoTransform:
    def test_uniform_grid_reduction(self):
        rng = np.random.default_rng(13)
        n = 40
        a = (np.arange(n) + 1.0) / n
        y = rng.normal(size=n)
        ds = Dataset(y=y, a=a, w=np.zeros((n, 1)))
        fit = fit_no_transform(ds, ConstantOutcome(0.0), lambda a_, w_: np.ones(a_.size), 0.0, 1.0)
        classical = isotonic_regression(y, a)
        assert_allclose(evaluate(fit, a), classical(a), atol=1e-12)

    def test_matches_exposure_axis_hull_oracle(self):
        rng = np.random.default_rng(14)
        n = 7
        a = np.sort(rng.uniform(size=n))
        y = rng.normal(size=n)
        ds = Dataset(y=y, a=a, w=np.zeros((n, 1)))
        a_minus = 0.0
        fit = fit_no_transform(ds, ConstantOutcome(0.0), lambda a_, w_: np.ones(a_.size), a_minus, 1.0)
        # oracle: cumulative sums over the exposure axis, weighted PAVA with
        # spacing weights
        theta_vals = np.cumsum(y) / n
        nodes = np.concatenate(([a_minus], a))
        gaps = np.diff(nodes)
        slopes = np.diff(np.concatenate(([0.0], theta_vals))) / gaps
        from isodose.isotonic import pava_weighted

        oracle = pava_weighted(slopes, gaps)
        assert_allclose(evaluate(fit, a), oracle, atol=1e-10)

    def test_requires_observations_in_window(self):
        rng = np.random.default_rng(15)
        ds = random_dataset(rng, 10)
        with pytest.raises(ValueError):
            fit_no_transform(ds, ConstantOutcome(0.0), lambda a, w: np.ones(a.size), 100.0, 101.0)


def const_prob_pi(prob_by_level):
    def pi(a, w):
        return np.array([prob_by_level[val] for val in np.asarray(a)])

    return pi


class TestDiscrete:
    def test_two_level_means(self):
        y = np.array([0.0, 1.0, 1.0, 1.0, 0.0, 0.0])
        a = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
        ds = Dataset(y=y, a=a, w=np.zeros((6, 1)))
        # pi(a_j | w) = n_j / n makes g = 1: pseudo-outcomes are the outcomes
        pi = const_prob_pi({1.0: 0.5, 2.0: 0.5})
        fit = fit_discrete(ds, ConstantOutcome(0.0), pi)
        assert_allclose(fit.theta_dagger, [2 / 3, 1 / 3])
        # isotonic correction pools the two violating levels
        assert_allclose(evaluate(fit, np.array([1.0, 2.0])), [0.5, 0.5], atol=1e-12)

    def test_monotone_dagger_passthrough(self):
        y = np.array([0.0, 0.0, 1.0, 1.0])
        a = np.array([1.0, 1.0, 2.0, 2.0])
        ds = Dataset(y=y, a=a, w=np.zeros((4, 1)))
        pi = const_prob_pi({1.0: 0.5, 2.0: 0.5})
        fit = fit_discrete(ds, ConstantOutcome(0.0), pi)
        assert_allclose(evaluate(fit, fit.levels), fit.theta_dagger, atol=1e-14)

    def test_exactly_isotonic_regression_of_pseudo_outcomes(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            m = rng.integers(2, 6)
            levels = np.sort(rng.choice(np.arange(10.0), size=m, replace=False))
            n = rng.integers(2 * m, 60)
            a = rng.choice(levels, size=n)
            while np.unique(a).size < m:
                a = rng.choice(levels, size=n)
            w = rng.normal(size=(n, 2))
            y = (rng.uniform(size=n) < 0.5).astype(float)
            ds = Dataset(y=y, a=a, w=w)
            mu = FunctionOutcome(lambda a_, w_: 0.1 * a_ + 0.05 * w_[:, 0])

            def pi(a_, w_, levels=levels):
                base = 0.2 + 0.6 * (np.searchsorted(levels, a_) + 1) / (levels.size + 1)
                return np.clip(base + 0.05 * np.tanh(w_[:, 1]), 0.05, 0.95)

            fit = fit_discrete(ds, mu, pi)
            classical = isotonic_regression(fit.xi.xi, ds.a)
            assert_array_equal(evaluate(fit, ds.a), classical(ds.a))

    def test_dagger_matches_aipw_display(self):
        rng = np.random.default_rng(17)
        levels = np.array([0.0, 1.0, 2.0])
        a = rng.choice(levels, size=40)
        w = rng.normal(size=(40, 1))
        y = (rng.uniform(size=40) < 0.6).astype(float)
        ds = Dataset(y=y, a=a, w=w)
        mu = FunctionOutcome(lambda a_, w_: 0.2 * a_ + 0.1 * w_[:, 0])
        pi = lambda a_, w_: np.full(a_.size, 1 / 3)
        fit = fit_discrete(ds, mu, pi)
        for j, aj in enumerate(fit.levels):
            direct = np.mean(
                (a == aj) * (y - mu(np.full(40, aj), w)) / (1 / 3)
                + mu(np.full(40, aj), w)
            )
            assert_allclose(fit.theta_dagger[j], direct, atol=1e-12)

    def test_bad_probability_rejected(self):
        ds = Dataset(y=[0.0, 1.0, 1.0, 0.0], a=[0.0, 0.0, 1.0, 1.0], w=np.zeros((4, 1)))
        with pytest.raises(ValueError, match="zero estimated"):
            fit_discrete(ds, ConstantOutcome(0.0), lambda a, w: np.zeros(a.size))

    def test_declared_support_checked(self):
        ds = Dataset(y=[0.0, 1.0, 1.0, 0.0], a=[0.0, 0.0, 1.0, 1.0], w=np.zeros((4, 1)))
        pi = lambda a, w: np.full(a.size, 0.5)
        with pytest.raises(ValueError, match="empty exposure level"):
            fit_discrete(ds, ConstantOutcome(0.0), pi, support=[0.0, 1.0, 2.0])


class TestSampleSplit:
    def test_m_one_rejected(self):
        rng = np.random.default_rng(18)
        ds = random_dataset(rng, 40)
        with pytest.raises(ValueError):
            fit_sample_split(ds, 1, IDENTITY)

    def test_too_small_split_rejected(self):
        rng = np.random.default_rng(19)
        ds = random_dataset(rng, 30)
        with pytest.raises(ValueError):
            fit_sample_split(ds, 4, IDENTITY)

    def test_identical_splits_average_to_single_fit(self):
        rng = np.random.default_rng(20)
        base = random_dataset(rng, 25)
        tiled = Dataset(
            y=np.tile(base.y, 2), a=np.tile(base.a, 2), w=np.tile(base.w, (2, 1))
        )
        assignments = [np.arange(25), np.arange(25, 50)]
        split = fit_sample_split(tiled, 2, IDENTITY, assignments=assignments)
        single = fit_causal_isotonic(base, ConstantOutcome(0.0), ConstantRatio(1.0))
        assert_allclose(evaluate(split, base.a), evaluate(single, base.a), atol=1e-12)

    def test_average_curve_monotone(self):
        rng = np.random.default_rng(21)
        ds = random_dataset(rng, 60)
        split = fit_sample_split(ds, 3, IDENTITY, seed=5)
        grid = np.linspace(split.theta.x[0], ds.a.max(), 50)
        vals = evaluate(split, grid)
        assert np.all(np.diff(vals) >= -1e-15)

    def test_below_common_support_rejected(self):
        rng = np.random.default_rng(22)
        ds = random_dataset(rng, 60)
        split = fit_sample_split(ds, 3, IDENTITY, seed=5)
        with pytest.raises(ValueError, match="common support"):
            evaluate(split, split.theta.x[0] - 1e-6)


class TestEvaluate:
    def test_max_point_gives_last_level(self):
        rng = np.random.default_rng(22)
        ds = random_dataset(rng, 20)
        fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        assert evaluate(fit, ds.a.max()) == fit.theta.y[-1]

    def test_between_points_uses_left_step(self):
        ds = Dataset(y=[0.0, 1.0, 2.0], a=[0.0, 1.0, 2.0], w=np.zeros((3, 1)))
        fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        assert evaluate(fit, 0.5) == evaluate(fit, 0.0)

    def test_below_support_rejected(self):
        rng = np.random.default_rng(23)
        ds = random_dataset(rng, 20)
        fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        with pytest.raises(ValueError):
            evaluate(fit, ds.a.min() - 1.0)

    def test_monotone_over_grid(self):
        rng = np.random.default_rng(24)
        ds = random_dataset(rng, 50)
        fit = fit_causal_isotonic(ds, ConstantOutcome(0.0), ConstantRatio(1.0))
        grid = np.linspace(ds.a.min(), ds.a.max(), 100)
        assert np.all(np.diff(evaluate(fit, grid)) >= -1e-15)


class TestTransformInvariance:
    def test_exact_invariance_with_rank_based_nuisances(self):
        from isodose.nuisance import (
            LogisticOutcomeModel,
            ExposureDesign,
            RankTransform,
            fit_linear_slope_density,
            fit_logistic,
            rank_wrap_outcome,
        )

        rng = np.random.default_rng(25)
        n = 80
        a = rng.normal(size=n)
        w = rng.normal(size=(n, 2))
        y = (rng.uniform(size=n) < 0.5).astype(float)

        def fit_pipeline(a_vec):
            ds = Dataset(y=y, a=a_vec, w=w)
            rt = RankTransform.from_data(a_vec)
            u = rt(a_vec)
            design = ExposureDesign(covariate_subset=(0, 1))
            coef = fit_logistic(design.matrix(u, w), y, ridge=1e-6)
            mu = rank_wrap_outcome(LogisticOutcomeModel(design, coef), rt)
            g = fit_linear_slope_density(u, w, rt)
            return fit_causal_isotonic(ds, mu, g)

        base = fit_pipeline(a)
        base_vals = evaluate(base, a)
        for transform in (np.exp, lambda v: 2 * v + 7, lambda v: v**3 + v):
            ta = transform(a)
            vals = evaluate(fit_pipeline(ta), ta)
            assert_array_equal(vals, base_vals)
