"""Command line interface: fit curves from CSV, simulate, manage the
Chernoff table, and compute effect intervals from fit artifacts.

All data I/O is strict CSV (header required, UTF-8, '.' decimal, no missing
values); configs and fit artifacts are JSON.  Every command is byte-
reproducible given a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from isodose import __version__
from isodose.chernoff import default_table, generate_chernoff_table
from isodose.estimator import (
    DoseResponseFit,
    LearnerConfig,
    PseudoOutcomes,
    evaluate,
    fit_causal_isotonic,
    fit_cross_fitted,
    fit_discrete,
    fit_no_transform,
    fit_sample_split,
    make_folds,
)
from isodose.inference import effect_ci, scale_estimate, split_ci, wald_ci
from isodose.isotonic import StepFunction
from isodose.nuisance import (
    ConstantOutcome,
    ConstantRatio,
    Dataset,
    ExposureDesign,
    FunctionOutcome,
    FunctionRatio,
    LinearOutcomeModel,
    LinearSlopeDensityModel,
    LogisticOutcomeModel,
    RankTransform,
    clamp_ratio,
    fit_linear_slope_density,
    fit_logistic,
    rank_wrap_outcome,
)
from isodose.simulation import (
    ARMS,
    ESTIMATORS,
    ExperimentConfig,
    METRICS_HEADER,
    metrics_to_csv,
    run_experiment,
)

ARTIFACT_FORMAT = "isodose-fit"
ARTIFACT_VERSION = 1
THREADS_ENV = "ISODOSE_THREADS"

CURVE_HEADER = ["a", "theta", "lower", "upper", "psi_prime", "kappa", "tau", "method"]


class CliError(Exception):
    """User-facing error; printed as a single line and exits nonzero."""


# ---------------------------------------------------------------------------
# strict CSV reading
# ---------------------------------------------------------------------------


def read_csv_columns(path, columns):
    """Read the named numeric columns; report the exact cell on bad input."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot open input: {err}") from err
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError("empty input: missing header row") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise CliError(f"missing column(s): {', '.join(missing)}")
        idx = {c: header.index(c) for c in columns}
        data = {c: [] for c in columns}
        n_rows = 0
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            for c in columns:
                cell = row[idx[c]] if idx[c] < len(row) else ""
                if cell.strip() == "":
                    raise CliError(f"missing value at row {row_num}, column {c!r}")
                try:
                    data[c].append(float(cell))
                except ValueError:
                    raise CliError(
                        f"non-numeric cell at row {row_num}, column {c!r}: {cell!r}"
                    ) from None
        if n_rows == 0:
            raise CliError("empty input: no data rows")
    return {c: np.asarray(v) for c, v in data.items()}


def _parse_grid(text, a_values):
    if text is None:
        return np.unique(a_values)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError("grid range must be lo:hi:count")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        return np.linspace(lo, hi, count)
    return np.asarray([float(v) for v in text.split(",")])


def _parse_pair(text, what):
    parts = text.split(",")
    if len(parts) != 2:
        raise CliError(f"{what} must be two comma-separated numbers")
    return float(parts[0]), float(parts[1])


# ---------------------------------------------------------------------------
# nuisance construction for CSV fits
# ---------------------------------------------------------------------------


def _rank_design(p):
    return ExposureDesign(covariate_subset=tuple(range(p)), interactions=True)


def _fit_builtin_mu(ds: Dataset, ridge: float):
    """Rank-scale outcome model: logistic for binary outcomes, else linear.

    Fitting on (rank, covariates) keeps the whole pipeline exactly invariant
    to strictly increasing exposure transformations.
    """
    rt = RankTransform.from_data(ds.a)
    u = rt(ds.a)
    design = _rank_design(ds.p)
    binary = np.all((ds.y == 0) | (ds.y == 1))
    if binary:
        coef = fit_logistic(design.matrix(u, ds.w), ds.y, ridge=ridge)
        base = LogisticOutcomeModel(design, coef)
    else:
        x = design.matrix(u, ds.w)
        gram = x.T @ x + ridge * np.eye(x.shape[1])
        coef = np.linalg.solve(gram, x.T @ ds.y)
        bound = 10.0 * (1.0 + np.abs(ds.y).max())
        base = LinearOutcomeModel(design, coef, bound=bound)
    return rank_wrap_outcome(base, rt), base, binary


def _fit_builtin_g(ds: Dataset, clamps):
    rt = RankTransform.from_data(ds.a)
    model = fit_linear_slope_density(rt(ds.a), ds.w, rt)
    return clamp_ratio(model, *clamps)


def _builtin_learners(ridge, clamps) -> LearnerConfig:
    return LearnerConfig(
        fit_mu=lambda ds: _fit_builtin_mu(ds, ridge)[0],
        fit_g=lambda ds: _fit_builtin_g(ds, clamps),
    )


# ---------------------------------------------------------------------------
# fit command
# ---------------------------------------------------------------------------


def _column_nuisances(data, args):
    """Models backed by precomputed per-observation columns.

    The mu model evaluates to the stored value at each sample exposure; the
    marginalized term comes from its own column (defaulting to the mu column
    for covariate-free regressions).
    """
    cols = [args.mu_col, args.g_col]
    if args.mu_marg_col:
        cols.append(args.mu_marg_col)
    extra = read_csv_columns(args.input, [args.exposure, *cols])
    a = extra[args.exposure]
    by_a = {}
    marg = extra[args.mu_marg_col] if args.mu_marg_col else extra[args.mu_col]
    for i, val in enumerate(a):
        by_a[float(val)] = (extra[args.mu_col][i], extra[args.g_col][i], marg[i])

    def mu_fn(av, w):
        return np.asarray([by_a[float(x)][0] for x in np.asarray(av)])

    def g_fn(av, w):
        return np.asarray([by_a[float(x)][1] for x in np.asarray(av)])

    class ColumnOutcome(FunctionOutcome):
        def marginal_mean(self, a_values, w, chunk=128):
            return np.asarray([by_a[float(x)][2] for x in np.atleast_1d(a_values)])

    return ColumnOutcome(mu_fn), FunctionRatio(g_fn)


def cmd_fit(args) -> int:
    covariates = [c for c in (args.covariates.split(",") if args.covariates else []) if c]
    columns = [args.outcome, args.exposure, *covariates]
    raw = read_csv_columns(args.input, columns)
    w = (
        np.column_stack([raw[c] for c in covariates])
        if covariates
        else np.zeros((raw[args.outcome].size, 0))
    )
    data = Dataset(y=raw[args.outcome], a=raw[args.exposure], w=w)

    restriction = _parse_pair(args.restrict, "--restrict") if args.restrict else None
    a_in_scope = data.a
    if restriction is not None:
        a_in_scope = data.a[(data.a >= restriction[0]) & (data.a <= restriction[1])]
        if a_in_scope.size == 0:
            raise CliError("restriction interval contains no observations")
    grid = _parse_grid(args.grid, a_in_scope)
    if grid.size and (grid.min() < a_in_scope.min() or grid.max() > a_in_scope.max()):
        print("warning: grid extends beyond the observed exposure range", file=sys.stderr)
    clamps = _parse_pair(args.clamp, "--clamp") if args.clamp else (0.05, 20.0)

    mu_base = None
    if args.nuisance == "none":
        mu, g = ConstantOutcome(0.0), ConstantRatio(1.0)
        binary = False
    elif args.nuisance == "builtin":
        if data.p == 0:
            raise CliError("builtin nuisances need at least one covariate column")
        mu, mu_base, binary = _fit_builtin_mu(data, args.ridge)
        g = _fit_builtin_g(data, clamps)
    elif args.nuisance == "columns":
        if not (args.mu_col and args.g_col):
            raise CliError("--nuisance columns requires --mu-col and --g-col")
        mu, g = _column_nuisances(data, args)
        binary = False
    else:
        raise CliError(f"unknown nuisance spec {args.nuisance!r}")

    if args.variant == "standard":
        fit = fit_causal_isotonic(data, mu, g, restriction=restriction)
    elif args.variant == "crossfit":
        if args.nuisance != "builtin":
            raise CliError("--variant crossfit requires --nuisance builtin")
        folds = make_folds(data.n, args.folds, seed=args.seed)
        fit = fit_cross_fitted(data, _builtin_learners(args.ridge, clamps), folds)
    elif args.variant == "split":
        if args.nuisance != "builtin":
            raise CliError("--variant split requires --nuisance builtin")
        fit = fit_sample_split(
            data, args.splits, _builtin_learners(args.ridge, clamps), seed=args.seed
        )
    elif args.variant == "notransform":
        lo, hi = (
            _parse_pair(args.window, "--window")
            if args.window
            else (float(data.a.min()) - 1e-9, float(data.a.max()))
        )
        if args.nuisance != "none":
            raise CliError(
                "--variant notransform currently supports --nuisance none "
                "(unit conditional density)"
            )
        fit = fit_no_transform(data, mu, lambda a, w_: np.ones(np.asarray(a).size), lo, hi)
    elif args.variant == "discrete":
        if args.nuisance != "none":
            raise CliError("--variant discrete currently supports --nuisance none")
        levels, counts = np.unique(data.a, return_counts=True)
        freq = dict(zip(levels, counts / data.n))
        fit = fit_discrete(data, mu, lambda a, w_: np.asarray([freq[float(x)] for x in a]))
    else:
        raise CliError(f"unknown variant {args.variant!r}")

    ci_methods = [m for m in args.ci.split(",") if m] if args.ci else []
    for method in ci_methods:
        if method not in ("plugin", "dr", "split", "none"):
            raise CliError(f"unknown CI method {method!r}")
        if method == "split" and fit.variant != "split_average":
            raise CliError("--ci split requires --variant split")
        if method in ("plugin", "dr") and fit.variant in ("no_transform",):
            raise CliError(f"--ci {method} is not available for --variant notransform")
        if method == "plugin" and fit.variant in ("cross_fitted", "split_average"):
            raise CliError("--ci plugin requires a single full-sample nuisance fit")

    rows = curve_rows(fit, grid, ci_methods, args.alpha)
    _write_curve_csv(args.out, rows)

    if args.artifact:
        artifact = build_artifact(fit, args, grid, ci_methods, mu_base)
        with open(args.artifact, "w", encoding="utf-8") as handle:
            json.dump(artifact, handle, sort_keys=True, indent=1)
    print(f"wrote {len(rows)} curve rows to {args.out}")
    return 0


def curve_rows(fit: DoseResponseFit, grid, ci_methods, alpha):
    """CurveRow records, grid-major so theta is non-decreasing down the file."""
    rows = []
    methods = ci_methods or ["none"]
    for a in grid:
        for method in methods:
            theta = evaluate(fit, float(a))
            row = {
                "a": float(a),
                "theta": theta,
                "lower": "",
                "upper": "",
                "psi_prime": "",
                "kappa": "",
                "tau": "",
                "method": method,
            }
            if method in ("plugin", "dr"):
                scale = scale_estimate(fit, float(a), method=method)
                ci = wald_ci(fit, float(a), alpha, scale)
                row.update(
                    lower=ci.lower,
                    upper=ci.upper,
                    psi_prime=scale.psi_prime,
                    kappa=scale.kappa,
                    tau=scale.tau,
                )
            elif method == "split":
                ci = split_ci(fit, float(a), alpha)
                row.update(lower=ci.lower, upper=ci.upper)
            rows.append(row)
    return rows


def _write_curve_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CURVE_HEADER)
        for row in rows:
            writer.writerow(
                [repr(row[c]) if isinstance(row[c], float) else row[c] for c in CURVE_HEADER]
            )


# ---------------------------------------------------------------------------
# fit artifacts
# ---------------------------------------------------------------------------


def _step_to_dict(sf: StepFunction):
    return {
        "x": sf.x.tolist(),
        "y": sf.y.tolist(),
        "continuity": sf.continuity,
        "outside": sf.outside,
    }


def _step_from_dict(d) -> StepFunction:
    return StepFunction(
        np.asarray(d["x"]), np.asarray(d["y"]), continuity=d["continuity"], outside=d["outside"]
    )


def build_artifact(fit: DoseResponseFit, args, grid, ci_methods, mu_base):
    """Everything needed to recompute curve rows and intervals without
    refitting: step functions, pseudo-outcomes, data columns, nuisance
    coefficients, and the request echo."""
    nuisance = {"kind": args.nuisance}
    if args.nuisance == "builtin" and mu_base is not None:
        nuisance["mu"] = {
            "model": "logistic" if isinstance(mu_base, LogisticOutcomeModel) else "linear",
            "design": mu_base.design.to_dict(),
            "coef": np.asarray(mu_base.coef).tolist(),
            "bound": getattr(mu_base, "bound", None),
        }
        g = fit.g
        base = g.base if hasattr(g, "base") else g
        nuisance["g"] = {
            "model": "linear_slope_density",
            "coef": np.asarray(base.coef).tolist(),
            "covariate_subset": list(base.covariate_subset),
            "intercept": base.intercept,
            "clamps": [g.lo, g.hi] if hasattr(g, "lo") else None,
        }
    return {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "package_version": __version__,
        "request": {
            "input": os.path.basename(args.input),
            "outcome": args.outcome,
            "exposure": args.exposure,
            "covariates": args.covariates,
            "variant": args.variant,
            "nuisance": args.nuisance,
            "alpha": args.alpha,
            "seed": args.seed,
            "ci": ",".join(ci_methods),
        },
        "n": fit.n,
        "alpha": args.alpha,
        "grid": [float(v) for v in grid],
        "ci_methods": list(ci_methods),
        "variant": fit.variant,
        "theta": _step_to_dict(fit.theta),
        "psi": _step_to_dict(fit.psi) if fit.psi is not None else None,
        "gamma": _step_to_dict(fit.gamma) if fit.gamma is not None else None,
        "data": {
            "y": fit.data.y.tolist(),
            "a": fit.data.a.tolist(),
            "w": fit.data.w.tolist(),
        },
        "xi": fit.xi.xi.tolist() if fit.xi is not None else None,
        "mu_bar": fit.xi.mu_bar.tolist() if fit.xi is not None else None,
        "nuisance_models": nuisance,
    }


def _rebuild_mu(spec, rt):
    design = ExposureDesign(
        covariate_subset=tuple(spec["design"]["covariate_subset"]),
        interactions=spec["design"]["interactions"],
        curvature_power=spec["design"].get("curvature_power", 2),
    )
    coef = np.asarray(spec["coef"])
    if spec["model"] == "logistic":
        base = LogisticOutcomeModel(design, coef)
    else:
        base = LinearOutcomeModel(design, coef, bound=spec["bound"])
    return rank_wrap_outcome(base, rt)


def _rebuild_g(spec, rt):
    base = LinearSlopeDensityModel(
        coef=np.asarray(spec["coef"]),
        covariate_subset=tuple(spec["covariate_subset"]),
        intercept=spec["intercept"],
        rank_transform=rt,
    )
    if spec.get("clamps"):
        return clamp_ratio(base, *spec["clamps"])
    return base


def load_artifact(path) -> tuple[DoseResponseFit, dict]:
    """Rebuild a DoseResponseFit from an artifact file."""
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    if doc.get("format") != ARTIFACT_FORMAT:
        raise CliError("not a fit artifact")
    if doc.get("version") != ARTIFACT_VERSION:
        raise CliError(f"unsupported artifact version {doc.get('version')!r}")
    data = Dataset(
        y=np.asarray(doc["data"]["y"]),
        a=np.asarray(doc["data"]["a"]),
        w=np.asarray(doc["data"]["w"]),
    )
    rt = RankTransform.from_data(data.a)
    mu = g = None
    spec = doc["nuisance_models"]
    if spec["kind"] == "builtin":
        mu = _rebuild_mu(spec["mu"], rt)
        g = _rebuild_g(spec["g"], rt)
    elif spec["kind"] == "none":
        mu, g = ConstantOutcome(0.0), ConstantRatio(1.0)
    xi = (
        PseudoOutcomes(xi=np.asarray(doc["xi"]), mu_bar=np.asarray(doc["mu_bar"]))
        if doc["xi"] is not None
        else None
    )
    fit = DoseResponseFit(
        variant=doc["variant"],
        data=data,
        theta=_step_from_dict(doc["theta"]),
        gamma=_step_from_dict(doc["gamma"]) if doc["gamma"] else None,
        f_hat=rt,
        psi=_step_from_dict(doc["psi"]) if doc["psi"] else None,
        xi=xi,
        mu=mu,
        g=g,
    )
    return fit, doc


# ---------------------------------------------------------------------------
# other commands
# ---------------------------------------------------------------------------

_SIM_KEYS = {
    "ns", "reps", "grid", "arms", "estimators", "ci_methods",
    "alpha", "seed", "threads", "folds", "splits", "ridge", "clamps",
}


def cmd_simulate(args) -> int:
    with open(args.config, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as err:
            raise CliError(f"invalid config JSON: {err}") from err
    unknown = set(raw) - _SIM_KEYS
    if unknown:
        raise CliError(
            f"invalid config key(s) {sorted(unknown)}; valid keys: {sorted(_SIM_KEYS)}"
        )
    if args.threads is not None:
        raw["threads"] = args.threads
    elif "threads" not in raw:
        raw["threads"] = _default_threads()
    if "clamps" in raw:
        raw["clamps"] = tuple(raw["clamps"])
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as err:
        raise CliError(f"invalid config: {err}") from err
    rows = run_experiment(cfg)
    metrics_to_csv(rows, args.out)
    for row in rows:
        print(
            f"estimator={row.estimator} ci={row.ci_method} arm={row.arm} "
            f"n={row.n} a={row.a:g} bias={row.bias:.5f} se={row.se:.5f} "
            f"coverage={row.coverage:.3f} width={row.width:.4f} "
            f"reps={row.reps} failures={row.failures}"
        )
    print(f"wrote {len(rows)} metric rows to {args.out}")
    return 0


def cmd_chernoff(args) -> int:
    if args.regenerate:
        if args.paths < 100_000:
            raise CliError("regeneration needs at least 100000 paths")
        table = generate_chernoff_table(args.paths, seed=args.seed)
        meta = f"regenerated with {args.paths} paths, seed {args.seed}"
    else:
        table = default_table()
        meta = "copy of the packaged table"
    if args.out:
        table.write(args.out, meta=meta)
        print(f"wrote table to {args.out}")
    print(f"q(0.5) = {table.quantile(0.5)!r}")
    print(f"q(0.975) = {table.quantile(0.975)!r}")
    print(f"implied sd = {table.implied_sd()!r}")
    return 0


def cmd_effect(args) -> int:
    fit, doc = load_artifact(args.artifact)
    for point in (args.a1, args.a2):
        if fit.f_hat is not None and not 0 < fit.f_hat(point) <= 1:
            raise CliError(f"point {point:g} outside the fitted exposure range")
    if args.ci == "plugin" and (fit.mu is None or fit.g is None):
        raise CliError("artifact lacks nuisance models; use --ci dr")
    ci = effect_ci(
        fit,
        args.a1,
        args.a2,
        alpha=args.alpha,
        draws=args.draws,
        method=args.ci,
        seed=args.seed,
    )
    line = ["a1", "a2", "estimate", "lower", "upper", "alpha", "method"]
    values = [
        repr(float(args.a1)),
        repr(float(args.a2)),
        repr(ci.estimate),
        repr(ci.lower),
        repr(ci.upper),
        repr(ci.alpha),
        ci.method,
    ]
    out = sys.stdout
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(line)
            writer.writerow(values)
        print(f"wrote effect row to {args.out}")
    else:
        print(",".join(line), file=out)
        print(",".join(values), file=out)
    return 0


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isodose",
        description="Monotone covariate-adjusted dose-response estimation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a curve from a CSV file")
    p_fit.add_argument("--input", required=True)
    p_fit.add_argument("--out", required=True, help="curve CSV output path")
    p_fit.add_argument("--artifact", help="JSON fit-artifact output path")
    p_fit.add_argument("--outcome", required=True, help="outcome column name")
    p_fit.add_argument("--exposure", required=True, help="exposure column name")
    p_fit.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p_fit.add_argument(
        "--nuisance",
        default="builtin",
        choices=["builtin", "columns", "none"],
        help="builtin rank-scale models, precomputed columns, or mu=0/g=1",
    )
    p_fit.add_argument("--mu-col")
    p_fit.add_argument("--g-col")
    p_fit.add_argument("--mu-marg-col")
    p_fit.add_argument(
        "--variant",
        default="standard",
        choices=["standard", "crossfit", "notransform", "discrete", "split"],
    )
    p_fit.add_argument("--ci", default="", help="comma list from {plugin,dr,split,none}")
    p_fit.add_argument("--alpha", type=float, default=0.05)
    p_fit.add_argument("--grid", help="comma list of points or lo:hi:count")
    p_fit.add_argument("--restrict", help="lo,hi restriction interval")
    p_fit.add_argument("--window", help="lo,hi window for --variant notransform")
    p_fit.add_argument("--clamp", help="lo,hi density-ratio clamps (default 0.05,20)")
    p_fit.add_argument("--ridge", type=float, default=1e-6)
    p_fit.add_argument("--folds", type=int, default=10)
    p_fit.add_argument("--splits", type=int, default=5)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="run a replicated experiment")
    p_sim.add_argument("--config", required=True, help="JSON experiment config")
    p_sim.add_argument("--out", required=True, help="metrics CSV output path")
    p_sim.add_argument("--threads", type=int, help=f"worker count (default ${THREADS_ENV} or 1)")
    p_sim.set_defaults(func=cmd_simulate)

    p_ch = sub.add_parser("chernoff", help="export or regenerate the quantile table")
    p_ch.add_argument("--regenerate", action="store_true")
    p_ch.add_argument("--paths", type=int, default=1_000_000)
    p_ch.add_argument("--out")
    p_ch.add_argument("--seed", type=int, default=0)
    p_ch.set_defaults(func=cmd_chernoff)

    p_eff = sub.add_parser("effect", help="contrast interval from a fit artifact")
    p_eff.add_argument("--artifact", required=True)
    p_eff.add_argument("--a1", type=float, required=True)
    p_eff.add_argument("--a2", type=float, required=True)
    p_eff.add_argument("--alpha", type=float, default=0.05)
    p_eff.add_argument("--ci", default="dr", choices=["plugin", "dr"])
    p_eff.add_argument("--draws", type=int, default=10_000)
    p_eff.add_argument("--seed", type=int, default=0)
    p_eff.add_argument("--out")
    p_eff.set_defaults(func=cmd_effect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
