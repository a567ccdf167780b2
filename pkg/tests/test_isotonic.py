"""Tests for the GCM / PAVA primitives, including independent oracles."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from isodose.isotonic import (
    ConvexMinorant,
    PlanarPoints,
    StepFunction,
    gcm,
    isotonic_regression,
    left_derivative,
    pava_weighted,
)


def brute_force_gcm_values(x, y):
    """GCM values at the input abscissae by exhaustive chain enumeration.

    Enumerates every subset of points containing both endpoints, keeps the
    chains that are convex and lie at or below every input point, and takes
    the pointwise-largest interpolant.  Exponential; for small inputs only.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    best = np.full(n, -np.inf)
    interior = range(1, n - 1)
    for r in range(n - 1):
        for combo in itertools.combinations(interior, r):
            idx = [0, *combo, n - 1]
            cx, cy = x[idx], y[idx]
            slopes = np.diff(cy) / np.diff(cx)
            if np.any(np.diff(slopes) < -1e-12):
                continue
            vals = np.interp(x, cx, cy)
            if np.any(vals > y + 1e-12):
                continue
            best = np.maximum(best, vals)
    return best


def brute_force_monotone_ls(y, w=None):
    """Exact weighted monotone LS fit by enumerating block partitions."""
    y = np.asarray(y, dtype=float)
    n = y.size
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    best_sse, best_fit = np.inf, None
    for cuts in itertools.product([0, 1], repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        fit = np.empty(n)
        means = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            m = np.sum(w[lo:hi] * y[lo:hi]) / np.sum(w[lo:hi])
            means.append(m)
            fit[lo:hi] = m
        if np.any(np.diff(means) < 0):
            continue
        sse = np.sum(w * (y - fit) ** 2)
        if sse < best_sse - 1e-15:
            best_sse, best_fit = sse, fit
    return best_fit


class TestGCM:
    def test_flat_input_keeps_all_knots(self):
        m = gcm(PlanarPoints([0, 1, 2], [0, 0, 0]))
        assert_array_equal(m.knots, [0, 1, 2])
        assert_array_equal(m.values, [0, 0, 0])

    def test_known_hull(self):
        m = gcm(PlanarPoints([0, 1, 2, 3], [0, 2, 1, 3]))
        assert_array_equal(m.knots, [0, 2, 3])
        assert_array_equal(m.values, [0, 1, 3])
        assert_allclose(m.slopes, [0.5, 2.0])

    def test_convex_input_is_its_own_minorant(self):
        x = np.array([0.0, 1.0, 2.0, 4.0])
        y = x**2
        m = gcm(PlanarPoints(x, y))
        assert_array_equal(m.knots, x)
        assert_array_equal(m.values, y)

    def test_endpoint_values_preserved(self):
        rng = np.random.default_rng(0)
        x = np.sort(rng.uniform(size=20))
        x += np.arange(20) * 1e-9  # guard against ties
        y = rng.normal(size=20)
        m = gcm(PlanarPoints(x, y))
        assert m(x[0]) == y[0]
        assert m(x[-1]) == y[-1]

    def test_matches_brute_force_on_small_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            n = rng.integers(2, 9)
            x = np.sort(rng.choice(np.arange(30.0), size=n, replace=False))
            y = rng.normal(size=n).round(2)
            m = gcm(PlanarPoints(x, y))
            assert_allclose(m(x), brute_force_gcm_values(x, y), atol=1e-10)

    def test_errors(self):
        with pytest.raises(ValueError):
            gcm(PlanarPoints([0.0], [1.0]))
        with pytest.raises(ValueError):
            PlanarPoints([0, 0, 1], [1, 2, 3])
        with pytest.raises(ValueError):
            PlanarPoints([0, 1], [np.nan, 0])


class TestLeftDerivative:
    def setup_method(self):
        self.m = ConvexMinorant(np.array([0.0, 2.0, 3.0]), np.array([0.0, 1.0, 3.0]))

    def test_interior(self):
        assert left_derivative(self.m, 1.0) == 0.5

    def test_left_limit_at_knot(self):
        assert left_derivative(self.m, 2.0) == 0.5
        assert left_derivative(self.m, 3.0) == 2.0

    def test_linear_minorant(self):
        m = ConvexMinorant(np.array([0.0, 5.0]), np.array([1.0, 11.0]))
        for t in (0.5, 2.0, 5.0):
            assert left_derivative(m, t) == 2.0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            left_derivative(self.m, 0.0)
        with pytest.raises(ValueError):
            left_derivative(self.m, 3.5)


class TestPava:
    def test_already_monotone(self):
        assert_array_equal(pava_weighted([1, 2, 3], [1, 1, 1]), [1, 2, 3])

    def test_total_pool(self):
        assert_allclose(pava_weighted([3, 1, 2], [1, 1, 1]), [2, 2, 2])

    def test_weighted_two_point(self):
        # closed form: (2*1 + 1*3) / 4
        assert_allclose(pava_weighted([2, 1], [1, 3]), [1.25, 1.25])

    def test_errors(self):
        with pytest.raises(ValueError):
            pava_weighted([], [])
        with pytest.raises(ValueError):
            pava_weighted([1.0, 2.0], [1.0, 0.0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = rng.integers(1, 8)
            y = rng.normal(size=n).round(1)
            w = rng.uniform(0.5, 3.0, size=n).round(1)
            assert_allclose(pava_weighted(y, w), brute_force_monotone_ls(y, w), atol=1e-12)


finite_floats = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def weighted_sequences(draw, max_size=60):
    n = draw(st.integers(1, max_size))
    y = draw(st.lists(finite_floats, min_size=n, max_size=n))
    w = draw(st.lists(st.floats(1e-3, 1e3), min_size=n, max_size=n))
    return np.asarray(y), np.asarray(w)


class TestPavaProperties:
    @given(weighted_sequences())
    @settings(max_examples=200, deadline=None)
    def test_monotone_and_idempotent(self, yw):
        y, w = yw
        fit = pava_weighted(y, w)
        assert np.all(np.diff(fit) >= 0)
        assert_allclose(pava_weighted(fit, w), fit, rtol=0, atol=1e-9 * (1 + np.abs(fit).max()))

    @given(weighted_sequences())
    @settings(max_examples=200, deadline=None)
    def test_weighted_total_preserved(self, yw):
        y, w = yw
        fit = pava_weighted(y, w)
        assert_allclose(np.sum(w * fit), np.sum(w * y), rtol=1e-9)

    @given(weighted_sequences())
    @settings(max_examples=200, deadline=None)
    def test_equals_gcm_left_derivative(self, yw):
        y, w = yw
        fit = pava_weighted(y, w)
        u = np.cumsum(w) / w.sum()
        cus = np.cumsum(w * y) / w.sum()
        hull = gcm(PlanarPoints(np.concatenate(([0.0], u)), np.concatenate(([0.0], cus))))
        scale = 1 + np.abs(y).max()
        assert_allclose(fit, hull.left_slopes(u), rtol=0, atol=1e-9 * scale)

    @given(weighted_sequences())
    @settings(max_examples=100, deadline=None)
    def test_antitonic_duality(self, yw):
        # negate+reverse preserves the monotone cone, so PAVA commutes with it
        y, w = yw
        dual = -pava_weighted(-y[::-1], w[::-1])[::-1]
        direct = pava_weighted(y, w)
        assert_allclose(dual, direct, rtol=0, atol=1e-10 * (1 + np.abs(y).max()))

    def test_antitonic_duality_exact_on_integer_blocks(self):
        y = np.array([3.0, 1.0, 2.0, 2.0, 5.0, 4.0])
        w = np.ones(6)
        dual = -pava_weighted(-y[::-1], w[::-1])[::-1]
        assert_array_equal(dual, pava_weighted(y, w))

    def test_antitonic_fit_matches_oracle(self):
        # non-increasing fit via the reversal dual, against brute force
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = rng.integers(1, 7)
            y = rng.normal(size=n).round(1)
            w = rng.uniform(0.5, 2.0, size=n).round(1)
            anti = pava_weighted(y[::-1], w[::-1])[::-1]
            oracle = -brute_force_monotone_ls(-y, w)
            assert_allclose(anti, oracle, atol=1e-12)


class TestIsotonicRegression:
    def test_constant(self):
        sf = isotonic_regression([2.0, 2.0, 2.0], [1, 2, 3])
        assert_array_equal(sf.y, [2, 2, 2])

    def test_known_fit(self):
        sf = isotonic_regression([3, 1, 2], [1, 2, 3])
        assert_allclose(sf.y, [2, 2, 2])

    def test_mean_preserved(self):
        rng = np.random.default_rng(11)
        y = rng.normal(size=50)
        x = rng.permutation(50).astype(float)
        w = rng.uniform(0.2, 2.0, size=50)
        sf = isotonic_regression(y, x, w)
        assert_allclose(np.sum(w * sf(x)), np.sum(w * y), rtol=1e-10)

    def test_ties_pooled_by_weighted_mean(self):
        sf = isotonic_regression([0.0, 4.0], [1.0, 1.0], [3.0, 1.0])
        assert_array_equal(sf.x, [1.0])
        assert_allclose(sf.y, [1.0])

    def test_equals_pava_on_sorted_input(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=30)
        x = np.arange(30.0)
        assert_allclose(isotonic_regression(y, x)(x), pava_weighted(y, np.ones(30)), atol=1e-10)


class TestStepFunction:
    def test_right_continuous(self):
        sf = StepFunction(np.array([0.0, 1.0]), np.array([5.0, 7.0]))
        assert sf(0.0) == 5.0
        assert sf(0.99) == 5.0
        assert sf(1.0) == 7.0
        assert sf(-1.0) == 5.0  # clamp
        assert sf(9.0) == 7.0

    def test_right_continuous_with_outside(self):
        sf = StepFunction(np.array([0.0, 1.0]), np.array([5.0, 7.0]), outside=0.0)
        assert sf(-0.5) == 0.0
        assert sf(0.0) == 5.0

    def test_left_continuous(self):
        sf = StepFunction(np.array([0.5, 1.0]), np.array([2.0, 4.0]), continuity="left")
        assert sf(0.2) == 2.0
        assert sf(0.5) == 2.0
        assert sf(0.75) == 4.0
        assert sf(1.0) == 4.0
        assert sf(2.0) == 4.0  # clamp

    def test_validation(self):
        with pytest.raises(ValueError):
            StepFunction(np.array([1.0, 1.0]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            StepFunction(np.array([]), np.array([]))
