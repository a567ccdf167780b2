"""Seeded simulation harness: data generation, ground truth, and replicated
coverage/bias/standard-error experiments.

The data-generating process draws four standard-normal covariates, a
conditional exposure rank with a linear-in-rank density, maps the rank
through a bimodal normal-mixture quantile, and draws a Bernoulli outcome
whose conditional mean is logistic with exposure-covariate interactions and
a cubic exposure term.  Ground truth comes from a tensor Gauss-Hermite
quadrature over the covariates.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import expit, ndtr

from isodose.estimator import (
    LearnerConfig,
    evaluate,
    fit_causal_isotonic,
    fit_cross_fitted,
    fit_sample_split,
    make_folds,
)
from isodose.inference import scale_estimate, split_ci, wald_ci
from isodose.nuisance import (
    ConvergenceError,
    Dataset,
    LogisticOutcomeModel,
    ExposureDesign,
    RankTransform,
    SingularMatrixError,
    clamp_ratio,
    fit_linear_slope_density,
    fit_logistic,
)

__all__ = [
    "DGPConfig",
    "ExperimentConfig",
    "MetricsRow",
    "generate_dataset",
    "true_theta",
    "run_experiment",
    "metrics_to_csv",
    "arm_learners",
    "ARMS",
    "ESTIMATORS",
    "METRICS_HEADER",
]

ARMS = ("both-correct", "mu-only", "g-only", "both-wrong")

METRICS_HEADER = "estimator,ci_method,arm,n,a,bias,se,coverage,width,reps,failures"


@dataclass(frozen=True)
class DGPConfig:
    """Data-generating process parameters (all defaults fixed)."""

    beta: tuple = (-1.0, -1.0, 1.0, 1.0)
    gamma1: tuple = (-1.0, -1.0, -1.0, 1.0, 1.0)
    gamma2: tuple = (3.0, -1.0, -1.0, 1.0, 1.0)
    gamma3: float = 3.0
    mixture_means: tuple = (-2.0, 2.0)
    mixture_sd: float = 1.0

    @property
    def n_covariates(self) -> int:
        return len(self.beta)

    def lam(self, w) -> np.ndarray:
        """Rank-density intercept ``0.1 + 1.8 expit(beta' w)`` in (0.1, 1.9)."""
        return 0.1 + 1.8 * expit(np.asarray(w, dtype=float) @ np.asarray(self.beta))

    def rank_density(self, u, w) -> np.ndarray:
        lam = self.lam(w)
        return lam + 2.0 * np.asarray(u, dtype=float) * (1.0 - lam)

    def mu(self, a, w) -> np.ndarray:
        """True outcome regression: logistic in ``(1, w)``, the exposure,
        exposure-covariate interactions, and a cubic exposure term.

        The cubic (rather than squared) curvature keeps the marginalized
        curve monotone over the whole exposure range, which the estimand
        requires.
        """
        a = np.asarray(a, dtype=float)
        w = np.asarray(w, dtype=float)
        g1 = np.asarray(self.gamma1)
        g2 = np.asarray(self.gamma2)
        eta = (g1[0] + w @ g1[1:]) + a * (g2[0] + w @ g2[1:]) + self.gamma3 * a**3
        return expit(eta)

    def mixture_cdf(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        m1, m2 = self.mixture_means
        sd = self.mixture_sd
        return 0.5 * ndtr((a - m1) / sd) + 0.5 * ndtr((a - m2) / sd)

    def mixture_density(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        m1, m2 = self.mixture_means
        sd = self.mixture_sd
        norm = 1.0 / (sd * np.sqrt(2 * np.pi))
        return 0.5 * norm * (
            np.exp(-0.5 * ((a - m1) / sd) ** 2) + np.exp(-0.5 * ((a - m2) / sd) ** 2)
        )

    def mixture_quantile(self, u) -> np.ndarray:
        """Numerical inverse of the mixture CDF (bisection, < 1e-10)."""
        u = np.asarray(u, dtype=float)
        lo = np.full(u.shape, min(self.mixture_means) - 10 * self.mixture_sd)
        hi = np.full(u.shape, max(self.mixture_means) + 10 * self.mixture_sd)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.mixture_cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


def generate_dataset(cfg: DGPConfig, n: int, seed) -> Dataset:
    """Draw a dataset of size n; deterministic given the seed.

    The exposure rank U given W has density ``lam + 2u(1 - lam)`` whose CDF
    ``lam u + (1 - lam) u^2`` inverts in closed form; U is marginally
    uniform, and the exposure is the mixture quantile of U.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = rng.standard_normal((n, cfg.n_covariates))
    lam = cfg.lam(w)
    t = rng.uniform(size=n)
    # root in [0, 1] of (1 - lam) u^2 + lam u - t, in a form stable at lam = 1
    u = 2.0 * t / (lam + np.sqrt(lam**2 + 4.0 * (1.0 - lam) * t))
    a = cfg.mixture_quantile(u)
    y = (rng.uniform(size=n) < cfg.mu(a, w)).astype(float)
    return Dataset(y=y, a=a, w=w)


@lru_cache(maxsize=4)
def _hermite_tensor(dim: int, order: int):
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    pts = np.sqrt(2.0) * np.column_stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*([weights] * dim), indexing="ij")
    wts = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
    return pts, wts / np.pi ** (dim / 2)


def true_theta(cfg: DGPConfig, a, *, order: int = 24):
    """Ground truth ``theta_0(a) = E_W[mu(a, W)]`` by tensor Gauss-Hermite
    quadrature over the standard-normal covariates (order >= 20 per axis)."""
    pts, wts = _hermite_tensor(cfg.n_covariates, order)
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.array([float(cfg.mu(np.full(pts.shape[0], ai), pts) @ wts) for ai in arr])
    return float(out[0]) if np.ndim(a) == 0 else out


def true_theta_mc(cfg: DGPConfig, a, n_draws: int = 10_000_000, seed: int = 0, chunk: int = 500_000):
    """Monte Carlo cross-check of :func:`true_theta`."""
    rng = np.random.default_rng(seed)
    total = 0.0
    done = 0
    while done < n_draws:
        size = min(chunk, n_draws - done)
        w = rng.standard_normal((size, cfg.n_covariates))
        total += float(np.sum(cfg.mu(np.full(size, float(a)), w)))
        done += size
    return total / n_draws


# ---------------------------------------------------------------------------
# nuisance arms
# ---------------------------------------------------------------------------


def arm_learners(
    arm: str,
    *,
    ridge: float = 1e-6,
    clamps: tuple = (0.05, 20.0),
) -> LearnerConfig:
    """Nuisance factories for one (mu, g) specification arm.

    Correct mu: logistic regression on all covariates with exposure
    interactions and a quadratic term.  Misspecified mu drops the third and
    fourth covariates and all interactions.  Correct g: rank-density MLE on
    all covariates; misspecified g drops the third and fourth covariates.
    """
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}; choose from {ARMS}")
    mu_ok = arm in ("both-correct", "mu-only")
    g_ok = arm in ("both-correct", "g-only")

    mu_design = ExposureDesign(
        covariate_subset=(0, 1, 2, 3) if mu_ok else (0, 1),
        interactions=mu_ok,
        curvature_power=3,
    )

    def fit_mu(ds: Dataset) -> LogisticOutcomeModel:
        coef = fit_logistic(mu_design.matrix(ds.a, ds.w), ds.y, ridge=ridge)
        return LogisticOutcomeModel(mu_design, coef)

    g_subset = (0, 1, 2, 3) if g_ok else (0, 1)

    def fit_g(ds: Dataset):
        rt = RankTransform.from_data(ds.a)
        model = fit_linear_slope_density(rt(ds.a), ds.w, rt, covariate_subset=g_subset)
        return clamp_ratio(model, *clamps)

    return LearnerConfig(fit_mu=fit_mu, fit_g=fit_g)


# ---------------------------------------------------------------------------
# local-linear baseline (non-faithful: bandwidth by leave-one-out CV)
# ---------------------------------------------------------------------------


def _local_linear_smooth(a, xi, points, h):
    """Epanechnikov local-linear estimates at ``points``; also returns the
    self-weight diagonal when points coincide with the sample."""
    est = np.empty(points.size)
    self_weight = np.zeros(points.size)
    for k, x0 in enumerate(points):
        d = a - x0
        w = 0.75 * np.clip(1.0 - (d / h) ** 2, 0.0, None)
        s0, s1, s2 = w.sum(), w @ d, w @ d**2
        denom = s0 * s2 - s1**2
        if denom <= 1e-12 * max(s0, 1.0) ** 2 or s0 <= 0:
            est[k] = (w @ xi / s0) if s0 > 0 else np.nan
            continue
        l_weights = w * (s2 - s1 * d) / denom
        est[k] = l_weights @ xi
        exact = np.abs(d) < 1e-12
        if np.any(exact):
            self_weight[k] = l_weights[exact].max()
    return est, self_weight


def local_linear_cv(a, xi, grid, bandwidths=None):
    """Local-linear regression of xi on a with LOO-cross-validated bandwidth.

    A smoothing baseline, not part of the monotone pipeline; labelled a
    non-faithful comparison in experiment output.
    """
    a = np.asarray(a, dtype=float)
    xi = np.asarray(xi, dtype=float)
    span = a.max() - a.min()
    if bandwidths is None:
        bandwidths = np.geomspace(span / 40, span, 15)
    best_h, best_err = None, np.inf
    for h in bandwidths:
        fitted, self_w = _local_linear_smooth(a, xi, a, h)
        if np.any(~np.isfinite(fitted)) or np.any(self_w >= 1.0):
            continue
        loo = (fitted - self_w * xi) / (1.0 - self_w)
        err = float(np.mean((xi - loo) ** 2))
        if err < best_err:
            best_err, best_h = err, float(h)
    if best_h is None:
        best_h = float(bandwidths[-1])
    est, _ = _local_linear_smooth(a, xi, np.asarray(grid, dtype=float), best_h)
    return est, best_h


# ---------------------------------------------------------------------------
# experiment harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Replicated experiment over sample sizes, arms, and CI methods."""

    ns: tuple
    reps: int
    grid: tuple
    arms: tuple = ("both-correct",)
    estimators: tuple = ("standard",)
    ci_methods: tuple = ("plugin",)
    alpha: float = 0.05
    seed: int = 0
    threads: int = 1
    folds: int = 10
    splits: int = 5
    ridge: float = 1e-6
    clamps: tuple = (0.05, 20.0)
    dgp: DGPConfig = field(default_factory=DGPConfig)

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "grid", tuple(float(a) for a in self.grid))
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "ci_methods", tuple(self.ci_methods))
        if any(abs(a) > 3 for a in self.grid):
            warnings.warn("evaluation grid extends beyond [-3, 3]", stacklevel=2)
        for arm in self.arms:
            if arm not in ARMS:
                raise ValueError(f"unknown arm {arm!r}")
        for est in self.estimators:
            if est not in ESTIMATORS:
                raise ValueError(f"unknown estimator {est!r}; choose from {sorted(ESTIMATORS)}")


@dataclass(frozen=True)
class MetricsRow:
    """One aggregated cell of the experiment output."""

    estimator: str
    ci_method: str
    arm: str
    n: int
    a: float
    bias: float
    se: float
    coverage: float
    width: float
    reps: int
    failures: int


def _wald_cis(fit, cfg, grid, method):
    out = {}
    for a in grid:
        scale = scale_estimate(fit, a, method=method)
        ci = wald_ci(fit, a, cfg.alpha, scale)
        out[a] = (ci.lower, ci.upper)
    return out


def _estimate_standard(ds, learners, cfg, seeds):
    fit = fit_causal_isotonic(ds, learners.fit_mu(ds), learners.fit_g(ds))
    estimates = {a: evaluate(fit, a) for a in cfg.grid}
    cis = {}
    for method in cfg.ci_methods:
        if method in ("plugin", "dr"):
            cis[method] = _wald_cis(fit, cfg, cfg.grid, method)
    return estimates, cis


def _estimate_crossfit(ds, learners, cfg, seeds):
    folds = make_folds(ds.n, cfg.folds, seed=seeds["folds"])
    fit = fit_cross_fitted(ds, learners, folds)
    estimates = {a: evaluate(fit, a) for a in cfg.grid}
    cis = {}
    for method in cfg.ci_methods:
        if method == "dr":
            cis[method] = _wald_cis(fit, cfg, cfg.grid, method)
        elif method == "plugin":
            # plug-in scale needs single fitted nuisances: refit on the full
            # sample for the scale only
            full = fit_causal_isotonic(ds, learners.fit_mu(ds), learners.fit_g(ds))
            cis[method] = _wald_cis(full, cfg, cfg.grid, method)
    return estimates, cis


def _estimate_split(ds, learners, cfg, seeds):
    fit = fit_sample_split(ds, cfg.splits, learners, seed=seeds["split"])
    estimates = {a: evaluate(fit, a) for a in cfg.grid}
    cis = {}
    if "split" in cfg.ci_methods:
        cis["split"] = {}
        for a in cfg.grid:
            ci = split_ci(fit, a, cfg.alpha)
            cis["split"][a] = (ci.lower, ci.upper)
    return estimates, cis


def _estimate_loclin(ds, learners, cfg, seeds):
    from isodose.estimator import pseudo_outcomes

    po = pseudo_outcomes(ds, learners.fit_mu(ds), learners.fit_g(ds))
    est, _ = local_linear_cv(ds.a, po.xi, np.asarray(cfg.grid))
    return {a: float(v) for a, v in zip(cfg.grid, est)}, {}


ESTIMATORS = {
    "standard": _estimate_standard,
    "crossfit": _estimate_crossfit,
    "split": _estimate_split,
    "loclin": _estimate_loclin,
}

# how estimators are labelled in output rows
ESTIMATOR_LABELS = {"loclin": "loclin (non-faithful baseline)"}


def _run_replication(cfg: ExperimentConfig, n_index: int, rep: int):
    """All arms and estimators for one replication; arms share the dataset."""
    n = cfg.ns[n_index]
    ds = generate_dataset(cfg.dgp, n, seed=[cfg.seed, n_index, rep, 0])
    seeds = {"folds": [cfg.seed, n_index, rep, 1], "split": [cfg.seed, n_index, rep, 2]}
    results = {}
    for arm in cfg.arms:
        learners = arm_learners(arm, ridge=cfg.ridge, clamps=cfg.clamps)
        for est_name in cfg.estimators:
            try:
                estimates, cis = ESTIMATORS[est_name](ds, learners, cfg, seeds)
                results[(arm, est_name)] = (estimates, cis, None)
            except (ConvergenceError, SingularMatrixError) as err:
                results[(arm, est_name)] = (None, None, repr(err))
    return results


def _replication_task(args):
    return _run_replication(*args)


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRow]:
    """Run the replicated experiment and aggregate metrics.

    Deterministic given the master seed and independent of ``threads``:
    every replication derives its own random stream from
    (seed, sample-size index, replication index) and aggregation follows
    replication order.  Failed replications (nuisance non-convergence) are
    excluded from the averages and counted in the ``failures`` column.
    """
    if cfg.reps < 1:
        raise ValueError("need at least one replication")
    truth = {a: true_theta(cfg.dgp, a) for a in cfg.grid}

    rows: list[MetricsRow] = []
    for n_index, n in enumerate(cfg.ns):
        tasks = [(cfg, n_index, rep) for rep in range(cfg.reps)]
        if cfg.threads > 1:
            with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
                chunk = max(1, len(tasks) // (4 * cfg.threads))
                all_results = list(pool.map(_replication_task, tasks, chunksize=chunk))
        else:
            all_results = [_run_replication(*t) for t in tasks]

        for arm in cfg.arms:
            for est_name in cfg.estimators:
                per_rep = [res[(arm, est_name)] for res in all_results]
                failures = sum(1 for r in per_rep if r[2] is not None)
                good = [r for r in per_rep if r[2] is None]
                label = ESTIMATOR_LABELS.get(est_name, est_name)
                produced = good[0][1] if good else {}
                ci_methods = cfg.ci_methods if produced else ("none",)
                for method in ci_methods:
                    if method != "none" and method not in produced:
                        continue  # CI method not applicable to this estimator
                    for a in cfg.grid:
                        ests = np.array([r[0][a] for r in good])
                        if ests.size == 0:
                            rows.append(
                                MetricsRow(label, method, arm, n, a, float("nan"),
                                           float("nan"), float("nan"), float("nan"),
                                           0, failures)
                            )
                            continue
                        bias = float(np.mean(ests) - truth[a])
                        se = float(ests.std(ddof=1)) if ests.size > 1 else 0.0
                        coverage = width = float("nan")
                        if method != "none":
                            bounds = np.array([r[1][method][a] for r in good])
                            covers = (bounds[:, 0] <= truth[a]) & (truth[a] <= bounds[:, 1])
                            coverage = float(np.mean(covers))
                            width = float(np.mean(bounds[:, 1] - bounds[:, 0]))
                        rows.append(
                            MetricsRow(
                                estimator=label,
                                ci_method=method,
                                arm=arm,
                                n=n,
                                a=a,
                                bias=bias,
                                se=se,
                                coverage=coverage,
                                width=width,
                                reps=int(ests.size),
                                failures=failures,
                            )
                        )
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def metrics_to_csv(rows: list[MetricsRow], path) -> None:
    """Write metrics rows with the documented header; NaN cells are empty."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRICS_HEADER.split(","))
        for row in rows:
            writer.writerow(
                [
                    row.estimator,
                    row.ci_method,
                    row.arm,
                    _fmt(row.n),
                    _fmt(row.a),
                    _fmt(row.bias),
                    _fmt(row.se),
                    _fmt(row.coverage),
                    _fmt(row.width),
                    _fmt(row.reps),
                    _fmt(row.failures),
                ]
            )
