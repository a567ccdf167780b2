"""Dose-response estimators built on isotonic regression of pseudo-outcomes.

The standard estimator forms doubly-robust pseudo-outcomes, accumulates them
into the one-step primitive ``Gamma_n``, takes the greatest convex minorant
of the cusum diagram ``{(0,0)} U {(F_n(A_i), Gamma_n(A_i))}`` over [0, 1],
and reads the curve off as the left derivative evaluated at ``F_n(a)``.
Variants: cross-fitted nuisances, a no-rank-transform version on the raw
exposure axis, discrete exposures (AIPW per level), and sample splitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from isodose.isotonic import PlanarPoints, StepFunction, _pool_sums, gcm
from isodose.nuisance import (
    Dataset,
    DensityRatioModel,
    OutcomeModel,
    RankTransform,
)

__all__ = [
    "PseudoOutcomes",
    "DoseResponseFit",
    "FoldAssignment",
    "LearnerConfig",
    "pseudo_outcomes",
    "primitive_gamma",
    "fit_causal_isotonic",
    "fit_cross_fitted",
    "fit_no_transform",
    "fit_discrete",
    "fit_sample_split",
    "make_folds",
    "evaluate",
]


@dataclass(frozen=True)
class PseudoOutcomes:
    """Per-observation pseudo-outcomes and the marginalized regression.

    ``xi_i = (y_i - mu(a_i, w_i)) / g(a_i, w_i) + mu_bar_i`` with
    ``mu_bar_i = (1/n) sum_j mu(a_i, w_j)``.
    """

    xi: np.ndarray
    mu_bar: np.ndarray


@dataclass(frozen=True)
class FoldAssignment:
    """Seeded partition of {0..n-1} into V folds of near-equal size."""

    V: int
    folds: tuple
    seed: int

    def __post_init__(self):
        sizes = [len(f) for f in self.folds]
        if len(self.folds) != self.V:
            raise ValueError("fold count does not match V")
        if max(sizes) - min(sizes) > 1:
            raise ValueError("fold sizes must differ by at most 1")
        all_idx = np.sort(np.concatenate(self.folds))
        if not np.array_equal(all_idx, np.arange(all_idx.size)):
            raise ValueError("folds must partition the index range")


def make_folds(n: int, V: int, seed: int = 0) -> FoldAssignment:
    """Seeded shuffle followed by contiguous blocks of size n//V or n//V + 1."""
    if not 2 <= V <= n // 2:
        raise ValueError("V must lie in {2, ..., n // 2}")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldAssignment(V=V, folds=tuple(np.array_split(perm, V)), seed=seed)


@dataclass(frozen=True)
class LearnerConfig:
    """Factories that fit both nuisances on a (training) dataset."""

    fit_mu: Callable[[Dataset], OutcomeModel]
    fit_g: Callable[[Dataset], DensityRatioModel]


@dataclass(frozen=True)
class DoseResponseFit:
    """A fitted monotone dose-response curve and its ingredients.

    ``theta`` is the curve on the exposure scale; ``psi`` its rank-scale
    counterpart (``theta = psi o F_n`` for rank-based variants); ``gamma``
    the cumulative primitive at the sample exposures.  Everything needed for
    pointwise inference is retained.
    """

    variant: str
    data: Dataset
    theta: StepFunction
    gamma: StepFunction | None = None
    f_hat: RankTransform | None = None
    psi: StepFunction | None = None
    xi: PseudoOutcomes | None = None
    mu: OutcomeModel | None = None
    g: DensityRatioModel | None = None
    restriction: tuple | None = None
    interval: tuple | None = None          # no-transform domain [a_-, a_+]
    levels: np.ndarray | None = None       # discrete support
    level_counts: np.ndarray | None = None
    theta_dagger: np.ndarray | None = None  # per-level AIPW values
    folds: FoldAssignment | None = None
    splits: tuple = ()

    @property
    def n(self) -> int:
        return self.data.n

    def __call__(self, a):
        return evaluate(self, a)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite nuisance evaluation in {name}")


def pseudo_outcomes(data: Dataset, mu: OutcomeModel, g: DensityRatioModel) -> PseudoOutcomes:
    """Doubly-robust pseudo-outcomes for every observation.

    The marginalized regression term averages ``mu(a_i, w_j)`` over all
    observed covariate rows j, so this costs O(n^2) model evaluations.
    """
    mu_at_obs = mu(data.a, data.w)
    g_at_obs = g(data.a, data.w)
    _check_finite("mu", mu_at_obs)
    _check_finite("g", g_at_obs)
    mu_bar = mu.marginal_mean(data.a, data.w)
    _check_finite("marginalized mu", mu_bar)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = (data.y - mu_at_obs) / g_at_obs + mu_bar
    _check_finite("pseudo-outcomes", xi)
    return PseudoOutcomes(xi=xi, mu_bar=mu_bar)


def _pooled_cumulative(a: np.ndarray, contrib: np.ndarray):
    """Distinct sorted exposures with cumulative counts and contribution sums.

    Shares the tie-pooling arithmetic of :func:`isodose.isotonic` so fits
    built here coincide bit-for-bit with ``isotonic_regression``.
    """
    distinct, sums, counts = _pool_sums(a, contrib, np.ones_like(contrib))
    return distinct, counts, np.cumsum(counts), np.cumsum(sums)


def primitive_gamma(data: Dataset, xi: PseudoOutcomes) -> StepFunction:
    """One-step primitive ``Gamma_n(a) = (1/n) sum_i I(A_i <= a) xi_i``.

    Right-continuous step function over the distinct sample exposures,
    equal to 0 below the smallest exposure.
    """
    n = data.n
    distinct, _, _, cum = _pooled_cumulative(data.a, xi.xi)
    return StepFunction(distinct, cum / n, continuity="right", outside=0.0)


def _grenander_pieces(distinct_a, u, gamma_values):
    """GCM of {(0,0)} U {(u_k, Gamma_k)} and its step-function derivatives."""
    hull = gcm(
        PlanarPoints(np.concatenate(([0.0], u)), np.concatenate(([0.0], gamma_values)))
    )
    levels = hull.left_slopes(u)
    psi = StepFunction(hull.knots[1:], hull.slopes, continuity="left")
    theta = StepFunction(distinct_a, levels, continuity="right")
    return psi, theta


def _standard_pipeline(data, po, mu, g, variant, **extra) -> DoseResponseFit:
    n = data.n
    distinct, _, cum_count, cum_xi = _pooled_cumulative(data.a, po.xi)
    u = cum_count / n
    gamma_vals = cum_xi / n
    gamma = StepFunction(distinct, gamma_vals, continuity="right", outside=0.0)
    psi, theta = _grenander_pieces(distinct, u, gamma_vals)
    return DoseResponseFit(
        variant=variant,
        data=data,
        theta=theta,
        gamma=gamma,
        f_hat=RankTransform.from_data(data.a),
        psi=psi,
        xi=po,
        mu=mu,
        g=g,
        **extra,
    )


def fit_causal_isotonic(
    data: Dataset,
    mu: OutcomeModel,
    g: DensityRatioModel,
    restriction: tuple | None = None,
) -> DoseResponseFit:
    """Standard estimator: isotonic regression of the pseudo-outcomes on A.

    With ``restriction=(lo, hi)`` the sample is restricted to exposures in
    [lo, hi] first and the whole pipeline (pseudo-outcomes, empirical CDF,
    cusum) runs on the restricted subsample, so the fit equals the isotonic
    regression of the restricted pseudo-outcomes exactly.
    """
    if restriction is not None:
        lo, hi = restriction
        if not lo <= hi:
            raise ValueError("restriction interval must have lo <= hi")
        mask = (data.a >= lo) & (data.a <= hi)
        if mask.sum() < 2:
            raise ValueError("restricted sample has fewer than 2 observations")
        data = data.subset(mask)
    po = pseudo_outcomes(data, mu, g)
    return _standard_pipeline(data, po, mu, g, "standard", restriction=restriction)


def fit_cross_fitted(
    data: Dataset,
    learners: LearnerConfig,
    folds: FoldAssignment,
    *,
    _full_j_average: bool = False,
) -> DoseResponseFit:
    """Cross-fitted estimator: per-fold out-of-fold nuisances.

    For each fold v with index set V_v of size N_v, nuisances are fit on the
    complement and the fold contributes
    ``(1/N_v) sum_{i in V_v} I(A_i <= a) r_i + (1/N_v^2) sum_{i,j in V_v}
    I(A_i <= a) mu_v(A_i, W_j)`` to ``(1/V) sum_v {...}``, with
    ``r_i = (Y_i - mu_v(A_i, W_i)) / g_v(A_i, W_i)``.  The curve is then read
    off the GCM exactly as in the standard estimator, with the full-sample
    empirical CDF on the x axis.
    """
    n = data.n
    if any(len(f) < 2 for f in folds.folds):
        raise ValueError("every fold needs at least 2 observations")
    xi_cf = np.empty(n)
    mu_bar_cf = np.empty(n)
    weights = np.empty(n)
    all_idx = np.arange(n)
    for fold in folds.folds:
        train = data.subset(np.setdiff1d(all_idx, fold))
        mu_v = learners.fit_mu(train)
        g_v = learners.fit_g(train)
        a_f, w_f = data.a[fold], data.w[fold]
        resid = (data.y[fold] - mu_v(a_f, w_f)) / g_v(a_f, w_f)
        if _full_j_average:
            mu_bar_f = mu_v.marginal_mean(a_f, data.w)
        else:
            mu_bar_f = mu_v.marginal_mean(a_f, w_f)
        xi_cf[fold] = resid + mu_bar_f
        mu_bar_cf[fold] = mu_bar_f
        weights[fold] = 1.0 / (folds.V * len(fold))
    _check_finite("cross-fitted pseudo-outcomes", xi_cf)

    distinct, _, cum_count, _ = _pooled_cumulative(data.a, xi_cf)
    _, _, _, cum_weighted = _pooled_cumulative(data.a, weights * xi_cf)
    u = cum_count / n
    gamma = StepFunction(distinct, cum_weighted, continuity="right", outside=0.0)
    psi, theta = _grenander_pieces(distinct, u, cum_weighted)
    return DoseResponseFit(
        variant="cross_fitted",
        data=data,
        theta=theta,
        gamma=gamma,
        f_hat=RankTransform.from_data(data.a),
        psi=psi,
        xi=PseudoOutcomes(xi=xi_cf, mu_bar=mu_bar_cf),
        folds=folds,
    )


def _pi_callable(pi_model):
    if isinstance(pi_model, DensityRatioModel):
        return pi_model.pi
    if callable(pi_model):
        return pi_model
    raise TypeError("pi_model must be callable or a DensityRatioModel exposing pi")


def fit_no_transform(
    data: Dataset,
    mu: OutcomeModel,
    pi_model,
    a_minus: float,
    a_plus: float,
) -> DoseResponseFit:
    """Estimator on the raw exposure axis over a fixed window [a_-, a_+].

    The cumulative primitive uses the inverse conditional density
    ``pi(A_i | W_i)`` and the integral ``int mu(u, W_i) du`` approximated by
    trapezoidal quadrature on the sorted sample exposures (with ``a_-``
    prepended as the first node).  The curve is the left derivative of the
    GCM of ``{(a_-, 0)} U {(A_i, Theta_n(A_i))}``.
    """
    if not a_minus < a_plus:
        raise ValueError("need a_minus < a_plus")
    pi_fn = _pi_callable(pi_model)
    mask = (data.a > a_minus) & (data.a <= a_plus)
    if not np.any((data.a >= a_minus) & (data.a <= a_plus)):
        raise ValueError("no observations in [a_minus, a_plus]")
    n = data.n

    pi_obs = np.asarray(pi_fn(data.a[mask], data.w[mask]), dtype=float)
    if np.any(pi_obs <= 0) or not np.all(np.isfinite(pi_obs)):
        raise ValueError("conditional density must be positive and finite")
    resid = (data.y[mask] - mu(data.a[mask], data.w[mask])) / pi_obs

    distinct, _, _, cum_resid = _pooled_cumulative(data.a[mask], resid)
    nodes = np.concatenate(([a_minus], distinct))
    mu_avg = mu.marginal_mean(nodes, data.w)
    _check_finite("marginalized mu", mu_avg)
    # cumulative trapezoid of the covariate-averaged regression
    segments = 0.5 * (mu_avg[1:] + mu_avg[:-1]) * np.diff(nodes)
    integral = np.cumsum(segments)
    theta_big = cum_resid / n + integral

    hull = gcm(PlanarPoints(nodes, np.concatenate(([0.0], theta_big))))
    theta = StepFunction(hull.knots[1:], hull.slopes, continuity="left")
    gamma = StepFunction(distinct, theta_big, continuity="right", outside=0.0)
    return DoseResponseFit(
        variant="no_transform",
        data=data,
        theta=theta,
        gamma=gamma,
        mu=mu,
        interval=(float(a_minus), float(a_plus)),
    )


def fit_discrete(data: Dataset, mu: OutcomeModel, pi, support=None) -> DoseResponseFit:
    """Discrete-exposure estimator: isotonic regression of per-observation
    AIPW pseudo-outcomes.

    With ``g = pi / f_hat`` and ``f_hat(a_j) = n_j / n``, the pseudo-outcome
    level means equal the per-level AIPW values, so pooling ties and running
    PAVA with weights ``n_j`` is exactly the isotonic regression of the
    per-observation pseudo-outcomes.
    """
    pi_fn = _pi_callable(pi)
    levels, inverse, counts = np.unique(data.a, return_inverse=True, return_counts=True)
    if support is not None:
        support = np.asarray(support, dtype=float)
        missing = np.setdiff1d(support, levels)
        if missing.size:
            raise ValueError(f"empty exposure level(s): {missing.tolist()}")
        extra = np.setdiff1d(levels, support)
        if extra.size:
            raise ValueError(f"observed exposures outside declared support: {extra.tolist()}")
    pi_obs = np.asarray(pi_fn(data.a, data.w), dtype=float)
    if np.any(pi_obs <= 0):
        raise ValueError("zero estimated level probability")
    if np.any(pi_obs >= 1):
        raise ValueError("estimated level probability must be below 1")
    f_obs = counts[inverse] / data.n
    g_obs = pi_obs / f_obs

    mu_at_obs = mu(data.a, data.w)
    _check_finite("mu", mu_at_obs)
    mu_bar_levels = mu.marginal_mean(levels, data.w)
    _check_finite("marginalized mu", mu_bar_levels)
    xi = (data.y - mu_at_obs) / g_obs + mu_bar_levels[inverse]
    po = PseudoOutcomes(xi=xi, mu_bar=mu_bar_levels[inverse])

    order = np.argsort(data.a, kind="stable")
    start = np.searchsorted(data.a[order], levels, side="left")
    theta_dagger = np.add.reduceat(xi[order], start) / counts

    return _standard_pipeline(
        data,
        po,
        mu,
        None,
        "discrete",
        levels=levels,
        level_counts=counts,
        theta_dagger=theta_dagger,
    )


def fit_sample_split(
    data: Dataset,
    m: int,
    learners: LearnerConfig,
    seed: int = 0,
    assignments=None,
) -> DoseResponseFit:
    """Split the sample into m disjoint subsets, run the full pipeline on
    each, and average the curves pointwise.

    Per-split fits are retained (``fit.splits``) for the across-split
    t-interval.  The averaged curve is defined from the largest of the
    split minima onward, where every split can be evaluated.
    """
    if m < 2:
        raise ValueError("need at least m = 2 splits")
    if assignments is None:
        perm = np.random.default_rng(seed).permutation(data.n)
        assignments = np.array_split(perm, m)
    if len(assignments) != m:
        raise ValueError("assignment count does not match m")
    min_size = max(10, 2 * data.p)
    if any(len(idx) < min_size for idx in assignments):
        raise ValueError(f"every split needs at least {min_size} observations")

    fits = []
    for idx in assignments:
        sub = data.subset(np.asarray(idx))
        mu_j = learners.fit_mu(sub)
        g_j = learners.fit_g(sub)
        fits.append(fit_causal_isotonic(sub, mu_j, g_j))

    lo = max(fit.data.a.min() for fit in fits)
    union = np.unique(np.concatenate([fit.theta.x for fit in fits]))
    union = union[union >= lo]
    avg = np.mean([evaluate(fit, union) for fit in fits], axis=0)
    theta = StepFunction(union, avg, continuity="right")
    return DoseResponseFit(
        variant="split_average",
        data=data,
        theta=theta,
        splits=tuple(fits),
    )


def evaluate(fit: DoseResponseFit, a):
    """Curve value(s) at exposure ``a``.

    Rank-based variants evaluate ``psi(F_n(a))`` and reject points below the
    smallest sample exposure (where ``F_n(a) = 0``); the no-transform variant
    is defined on ``(a_-, a_+]``; the split average requires every split to
    be evaluable.
    """
    scalar = np.isscalar(a) or np.ndim(a) == 0
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    if fit.variant in ("standard", "cross_fitted", "discrete"):
        u = fit.f_hat(arr)
        if np.any(u <= 0):
            raise ValueError("a below all sample exposures (F_n(a) = 0)")
        out = fit.psi(u)
    elif fit.variant == "no_transform":
        lo, hi = fit.interval
        if np.any(arr <= lo) or np.any(arr > hi):
            raise ValueError("a outside the fitted window (a_minus, a_plus]")
        out = fit.theta(arr)
    elif fit.variant == "split_average":
        lo = fit.theta.x[0]
        if np.any(arr < lo):
            raise ValueError("a below the common support of the split fits")
        out = fit.theta(arr)
    else:
        raise ValueError(f"unknown variant {fit.variant!r}")
    out = np.atleast_1d(out)
    return float(out[0]) if scalar else out
