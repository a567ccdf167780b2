"""Nuisance models: outcome regressions and normalized density ratios.

The estimator consumes two fitted nuisances, an outcome regression
``mu(a, w)`` and a normalized exposure-density ratio ``g(a, w)``.  Both can
be fit on the exposure's rank scale, which makes the whole pipeline exactly
invariant to strictly increasing transformations of the exposure.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "ConvergenceError",
    "SingularMatrixError",
    "Dataset",
    "RankTransform",
    "OutcomeModel",
    "DensityRatioModel",
    "ExposureDesign",
    "LogisticOutcomeModel",
    "LinearOutcomeModel",
    "ConstantOutcome",
    "FunctionOutcome",
    "LinearSlopeDensityModel",
    "ConstantRatio",
    "FunctionRatio",
    "ClampedRatio",
    "fit_logistic",
    "logistic_stderr",
    "fit_linear_slope_density",
    "rank_wrap_outcome",
    "clamp_ratio",
]


class ConvergenceError(RuntimeError):
    """A likelihood optimizer failed to converge or diverged."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A design matrix is rank deficient and no ridge penalty was given."""


@dataclass(frozen=True)
class Dataset:
    """Observations ``(y_i, a_i, w_i)`` with an n-by-p covariate matrix."""

    y: np.ndarray
    a: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        a = np.asarray(self.a, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if y.ndim != 1 or a.ndim != 1 or w.ndim != 2:
            raise ValueError("y and a must be vectors, w a matrix")
        if not (y.shape[0] == a.shape[0] == w.shape[0]):
            raise ValueError("y, a, w must have equal row counts")
        if y.shape[0] < 2:
            raise ValueError("need at least 2 observations")
        for name, arr in (("y", y), ("a", a), ("w", w)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.a[idx], self.w[idx])


@dataclass(frozen=True)
class RankTransform:
    """Empirical CDF of the exposure, ``F_n(a) = (1/n) sum I(A_i <= a)``.

    Right-continuous; values at sample points lie in {1/n, ..., 1}.
    Strictly increasing maps of the exposure leave the sample ranks
    unchanged, which is the source of transform invariance downstream.
    """

    sorted_a: np.ndarray

    def __post_init__(self):
        sa = np.sort(np.asarray(self.sorted_a, dtype=float))
        if sa.size == 0 or not np.all(np.isfinite(sa)):
            raise ValueError("need a non-empty finite exposure sample")
        object.__setattr__(self, "sorted_a", sa)

    @classmethod
    def from_data(cls, a) -> "RankTransform":
        return cls(np.asarray(a, dtype=float))

    @property
    def n(self) -> int:
        return self.sorted_a.size

    def __call__(self, a):
        ranks = np.searchsorted(self.sorted_a, np.asarray(a, dtype=float), side="right")
        return ranks / self.n

    def quantile(self, u):
        """Empirical quantile: smallest sample value with rank >= u."""
        u = np.asarray(u, dtype=float)
        idx = np.clip(np.ceil(u * self.n).astype(int) - 1, 0, self.n - 1)
        return self.sorted_a[idx]


# ---------------------------------------------------------------------------
# outcome models
# ---------------------------------------------------------------------------


class OutcomeModel(ABC):
    """Evaluable outcome regression ``mu(a, w)``."""

    @abstractmethod
    def __call__(self, a, w) -> np.ndarray:
        """Evaluate elementwise over rows: a is (m,), w is (m, p)."""

    def marginal_mean(self, a_values, w, chunk: int = 128) -> np.ndarray:
        """``(1/m) sum_j mu(a_k, w_j)`` for each a_k, over the rows of w.

        Evaluates the full (a, w) pair grid in chunks; O(len(a) * len(w))
        model evaluations.
        """
        a_values = np.atleast_1d(np.asarray(a_values, dtype=float))
        w = np.asarray(w, dtype=float)
        m = w.shape[0]
        out = np.empty(a_values.size)
        for lo in range(0, a_values.size, chunk):
            hi = min(lo + chunk, a_values.size)
            block = a_values[lo:hi]
            aa = np.repeat(block, m)
            ww = np.tile(w, (block.size, 1))
            vals = self(aa, ww).reshape(block.size, m)
            out[lo:hi] = vals.mean(axis=1)
        return out


@dataclass(frozen=True)
class ExposureDesign:
    """Design ``[1, w_S, a, a * w_S (optional), a^k]`` over covariate subset S.

    ``curvature_power`` sets the exponent k of the nonlinear exposure
    column.  The exposure column can be the raw exposure or its rank,
    depending on what the model was fit on.
    """

    covariate_subset: tuple[int, ...]
    interactions: bool = True
    curvature_power: int = 2

    def matrix(self, a, w) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        w = np.asarray(w, dtype=float)
        ws = w[:, list(self.covariate_subset)]
        cols = [np.ones_like(a), *ws.T, a]
        if self.interactions:
            cols.extend((a * ws[:, j] for j in range(ws.shape[1])))
        cols.append(a**self.curvature_power)
        return np.column_stack(cols)

    def affine_pieces(self, coef, w):
        """Split the linear predictor as ``c0(w) + c1(w) a + c2 a^k``.

        Lets pair-grid evaluations broadcast over (a, w) without building
        the full design matrix.
        """
        coef = np.asarray(coef, dtype=float)
        w = np.asarray(w, dtype=float)
        ws = w[:, list(self.covariate_subset)]
        k = ws.shape[1]
        c0 = coef[0] + ws @ coef[1 : 1 + k]
        if self.interactions:
            c1 = coef[1 + k] + ws @ coef[2 + k : 2 + 2 * k]
        else:
            c1 = np.full(w.shape[0], coef[1 + k])
        return c0, c1, coef[-1]

    @property
    def n_params(self) -> int:
        k = len(self.covariate_subset)
        return 2 + k + (k if self.interactions else 0) + 1

    def to_dict(self) -> dict:
        return {
            "kind": "exposure_design",
            "covariate_subset": list(self.covariate_subset),
            "interactions": self.interactions,
            "curvature_power": self.curvature_power,
        }


@dataclass(frozen=True)
class LogisticOutcomeModel(OutcomeModel):
    """Logistic regression outcome model over a fixed design."""

    design: ExposureDesign
    coef: np.ndarray

    def __call__(self, a, w):
        return expit(self.design.matrix(a, w) @ self.coef)

    def marginal_mean(self, a_values, w, chunk: int = 256) -> np.ndarray:
        # broadcast the affine-in-a predictor over the (a, w) pair grid
        a_values = np.atleast_1d(np.asarray(a_values, dtype=float))
        c0, c1, c2 = self.design.affine_pieces(self.coef, w)
        power = self.design.curvature_power
        out = np.empty(a_values.size)
        for lo in range(0, a_values.size, chunk):
            block = a_values[lo : lo + chunk, None]
            eta = c0[None, :] + block * c1[None, :] + c2 * block**power
            out[lo : lo + chunk] = expit(eta).mean(axis=1)
        return out


@dataclass(frozen=True)
class LinearOutcomeModel(OutcomeModel):
    """Linear outcome model over a fixed design, with a symmetric bound.

    Predictions are clipped to ``[-bound, bound]`` so evaluations stay
    bounded off-sample.
    """

    design: ExposureDesign
    coef: np.ndarray
    bound: float = 1e6

    def __call__(self, a, w):
        pred = self.design.matrix(a, w) @ self.coef
        return np.clip(pred, -self.bound, self.bound)


@dataclass(frozen=True)
class ConstantOutcome(OutcomeModel):
    value: float = 0.0

    def __call__(self, a, w):
        return np.full(np.asarray(a).shape, self.value, dtype=float)


@dataclass(frozen=True)
class FunctionOutcome(OutcomeModel):
    """Wrap an arbitrary vectorized callable ``f(a, w)`` as an outcome model."""

    fn: callable

    def __call__(self, a, w):
        return np.asarray(self.fn(np.asarray(a, dtype=float), np.asarray(w, dtype=float)), dtype=float)


@dataclass(frozen=True)
class RankWrappedOutcome(OutcomeModel):
    """Compose a base model fit on (rank, w) with the empirical CDF."""

    base: OutcomeModel
    rank_transform: RankTransform

    def __call__(self, a, w):
        return self.base(self.rank_transform(a), w)


def rank_wrap_outcome(base: OutcomeModel, rank_transform: RankTransform) -> RankWrappedOutcome:
    """Wrap a model fit on ``(U, W)``, U the exposure ranks, so it evaluates
    at ``(F_n(a), w)``.  The wrapped model's sample evaluations are invariant
    to strictly increasing exposure transformations."""
    return RankWrappedOutcome(base, rank_transform)


# ---------------------------------------------------------------------------
# density-ratio models
# ---------------------------------------------------------------------------


class DensityRatioModel(ABC):
    """Evaluable normalized exposure-density ratio ``g(a, w)``."""

    @abstractmethod
    def __call__(self, a, w) -> np.ndarray:
        """Evaluate elementwise over rows."""

    def pi(self, a, w) -> np.ndarray:
        """Conditional exposure density ``pi(a | w)``, when available."""
        raise NotImplementedError("this ratio model does not expose pi(a | w)")


@dataclass(frozen=True)
class ConstantRatio(DensityRatioModel):
    value: float = 1.0

    def __call__(self, a, w):
        return np.full(np.asarray(a).shape, self.value, dtype=float)


@dataclass(frozen=True)
class FunctionRatio(DensityRatioModel):
    fn: callable
    pi_fn: callable | None = None

    def __call__(self, a, w):
        return np.asarray(self.fn(np.asarray(a, dtype=float), np.asarray(w, dtype=float)), dtype=float)

    def pi(self, a, w):
        if self.pi_fn is None:
            return super().pi(a, w)
        return np.asarray(self.pi_fn(np.asarray(a, dtype=float), np.asarray(w, dtype=float)), dtype=float)


@dataclass(frozen=True)
class LinearSlopeDensityModel(DensityRatioModel):
    """Density of the exposure rank given covariates, linear in the rank.

    The conditional density of ``U = F_n(A)`` given ``W = w`` is modelled as
    ``lam(w) + 2u * (1 - lam(w))`` with ``lam(w) = 0.1 + 1.8 * expit(index)``.
    The rank's marginal is uniform, so the normalized density ratio on the
    original scale is ``g(a, w) = lam(w) + 2 F_n(a) (1 - lam(w))``.
    """

    coef: np.ndarray
    covariate_subset: tuple[int, ...]
    intercept: bool
    rank_transform: RankTransform
    marginal_density: callable | None = None

    def _index_matrix(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        cols = [w[:, j] for j in self.covariate_subset]
        if self.intercept:
            cols.insert(0, np.ones(w.shape[0]))
        return np.column_stack(cols)

    def lam(self, w) -> np.ndarray:
        return 0.1 + 1.8 * expit(self._index_matrix(w) @ self.coef)

    def density_on_ranks(self, u, w) -> np.ndarray:
        lam = self.lam(w)
        return lam + 2.0 * np.asarray(u, dtype=float) * (1.0 - lam)

    def __call__(self, a, w):
        return self.density_on_ranks(self.rank_transform(a), w)

    def pi(self, a, w):
        if self.marginal_density is None:
            return super().pi(a, w)
        a = np.asarray(a, dtype=float)
        return self(a, w) * np.asarray(self.marginal_density(a), dtype=float)


@dataclass
class ClampedRatio(DensityRatioModel):
    """Truncate a ratio model's evaluations to [lo, hi].

    Counts how many evaluations were truncated; the counters are updated on
    evaluation, so they are diagnostics rather than part of the immutable
    model state.
    """

    base: DensityRatioModel
    lo: float
    hi: float
    n_evaluated: int = field(default=0, compare=False)
    n_truncated: int = field(default=0, compare=False)

    def __call__(self, a, w):
        raw = self.base(a, w)
        clamped = np.clip(raw, self.lo, self.hi)
        self.n_evaluated += raw.size
        self.n_truncated += int(np.count_nonzero(raw != clamped))
        return clamped

    def pi(self, a, w):
        return self.base.pi(a, w)

    @property
    def truncation_fraction(self) -> float:
        return self.n_truncated / self.n_evaluated if self.n_evaluated else 0.0


def clamp_ratio(model: DensityRatioModel, lo: float, hi: float) -> ClampedRatio:
    """Bound a density-ratio model away from 0 and infinity."""
    if not (0 < lo < hi):
        raise ValueError("require 0 < lo < hi")
    return ClampedRatio(model, float(lo), float(hi))


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

_DIVERGENCE_NORM = 1e3


def _logistic_penalized_loglik(x, y, beta, ridge):
    eta = x @ beta
    # sum(y*eta - log(1 + exp(eta))), stable
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * ridge * beta @ beta)


def fit_logistic(x, y, ridge: float = 0.0, *, max_iter: int = 100, tol: float = 1e-8) -> np.ndarray:
    """Ridge-penalized logistic regression by IRLS with step halving.

    Parameters
    ----------
    x : (n, p) array
        Design matrix (include an intercept column if wanted).
    y : (n,) array
        Binary outcomes in {0, 1}.
    ridge : float
        Non-negative L2 penalty on all coefficients.

    Returns
    -------
    numpy.ndarray
        Coefficients.  Iteration stops when the penalized score satisfies
        ``max |score| < tol`` or after ``max_iter`` iterations.

    Raises
    ------
    SingularMatrixError
        If ``ridge == 0`` and the design is rank deficient.
    ConvergenceError
        If the coefficient norm exceeds 1e3 (perfect separation).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, p) and y (n,)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary in {0, 1}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    n, p = x.shape
    if ridge == 0.0 and np.linalg.matrix_rank(x) < p:
        raise SingularMatrixError("design matrix is rank deficient and ridge is 0")

    beta = np.zeros(p)
    loglik = _logistic_penalized_loglik(x, y, beta, ridge)
    eye = np.eye(p)
    for _ in range(max_iter):
        prob = expit(x @ beta)
        score = x.T @ (y - prob) - ridge * beta
        if np.max(np.abs(score)) < tol:
            break
        weights = np.maximum(prob * (1.0 - prob), 1e-12)
        hessian = x.T @ (x * weights[:, None]) + ridge * eye
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError as err:
            raise SingularMatrixError("singular IRLS system") from err
        scale = 1.0
        for _ in range(40):
            candidate = _logistic_penalized_loglik(x, y, beta + scale * step, ridge)
            if candidate >= loglik - 1e-12 * (1 + abs(loglik)):
                break
            scale *= 0.5
        new_loglik = _logistic_penalized_loglik(x, y, beta + scale * step, ridge)
        assert new_loglik >= loglik - 1e-9 * (1 + abs(loglik)), "log-likelihood decreased"
        beta = beta + scale * step
        loglik = new_loglik
        if np.linalg.norm(beta) > _DIVERGENCE_NORM:
            raise ConvergenceError(
                "logistic coefficients diverged (perfect separation?); "
                "consider a positive ridge"
            )
    return beta


def logistic_stderr(x, coef, ridge: float = 0.0) -> np.ndarray:
    """Asymptotic standard errors from the inverse penalized information."""
    x = np.asarray(x, dtype=float)
    prob = expit(x @ np.asarray(coef, dtype=float))
    weights = prob * (1.0 - prob)
    info = x.T @ (x * weights[:, None]) + ridge * np.eye(x.shape[1])
    return np.sqrt(np.diag(np.linalg.inv(info)))


def _slope_density_loglik(theta, x, u):
    lam = 0.1 + 1.8 * expit(x @ theta)
    dens = lam + 2.0 * u * (1.0 - lam)
    return float(np.sum(np.log(dens)))


def fit_linear_slope_density(
    u,
    w,
    rank_transform: RankTransform,
    covariate_subset=None,
    *,
    intercept: bool = False,
    max_iter: int = 500,
    tol: float = 1e-8,
    marginal_density=None,
) -> LinearSlopeDensityModel:
    """Maximum likelihood fit of the linear-in-rank conditional density.

    Newton iterations with backtracking on the index coefficients; the
    log-likelihood is smooth and the density is bounded in [0.1, 1.9], so
    no projection is needed in practice.

    Parameters
    ----------
    u : (n,) array
        Exposure ranks in [0, 1].
    w : (n, p) array
        Covariates.
    rank_transform : RankTransform
        Used by the returned model to map exposures to ranks.
    covariate_subset : sequence of int, optional
        Index columns entering the linear index (all by default); restricting
        it deliberately misspecifies the model.
    """
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if np.any((u < 0) | (u > 1)):
        raise ValueError("ranks must lie in [0, 1]")
    subset = tuple(range(w.shape[1])) if covariate_subset is None else tuple(covariate_subset)

    cols = [w[:, j] for j in subset]
    if intercept:
        cols.insert(0, np.ones(w.shape[0]))
    x = np.column_stack(cols)
    p = x.shape[1]

    theta = np.zeros(p)
    loglik = _slope_density_loglik(theta, x, u)
    converged = False
    for _ in range(max_iter):
        s = expit(x @ theta)
        dlam = 1.8 * s * (1.0 - s)
        lam = 0.1 + 1.8 * s
        dens = lam + 2.0 * u * (1.0 - lam)
        c = (1.0 - 2.0 * u) / dens
        grad = x.T @ (c * dlam)
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        curv = -((c * dlam) ** 2) + c * 1.8 * s * (1.0 - s) * (1.0 - 2.0 * s)
        neg_h = -(x.T @ (x * curv[:, None]))
        # damp until the negated Hessian is positive definite
        damp = 0.0
        for _ in range(30):
            try:
                np.linalg.cholesky(neg_h + damp * np.eye(p))
                break
            except np.linalg.LinAlgError:
                damp = max(2 * damp, 1e-6)
        step = np.linalg.solve(neg_h + damp * np.eye(p), grad)
        scale = 1.0
        improved = False
        for _ in range(60):
            candidate = _slope_density_loglik(theta + scale * step, x, u)
            if candidate > loglik - 1e-12 * (1 + abs(loglik)):
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
        theta = theta + scale * step
        loglik = candidate
    if not converged:
        raise ConvergenceError(f"density MLE did not converge in {max_iter} iterations")

    return LinearSlopeDensityModel(
        coef=theta,
        covariate_subset=subset,
        intercept=intercept,
        rank_transform=rank_transform,
        marginal_density=marginal_density,
    )


def slope_density_stderr(model: LinearSlopeDensityModel, u, w) -> np.ndarray:
    """Asymptotic standard errors for the density MLE's index coefficients."""
    u = np.asarray(u, dtype=float)
    x = model._index_matrix(w)
    s = expit(x @ model.coef)
    dlam = 1.8 * s * (1.0 - s)
    lam = 0.1 + 1.8 * s
    dens = lam + 2.0 * u * (1.0 - lam)
    c = (1.0 - 2.0 * u) / dens
    curv = ((c * dlam) ** 2) - c * 1.8 * s * (1.0 - s) * (1.0 - 2.0 * s)
    info = x.T @ (x * curv[:, None])
    return np.sqrt(np.diag(np.linalg.inv(info)))
