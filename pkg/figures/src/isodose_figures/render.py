"""Render dose-response curve and simulation-metrics CSVs to image files.

Consumes only the delimited outputs of the estimation CLI (curve CSVs with
columns a/theta/lower/upper/... and metrics CSVs with the
estimator/ci_method/arm/n/a/bias/se/coverage/... header); no in-process
coupling to the estimation package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("curve", "se", "bias", "coverage")

CURVE_COLUMNS = ("a", "theta", "lower", "upper", "method")
METRIC_COLUMNS = ("estimator", "ci_method", "arm", "n", "a", "bias", "se", "coverage")


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: input CSV(s), kind, and output path."""

    inputs: tuple
    kind: str
    output: str
    alpha: float = 0.05
    dpi: int = 150

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.inputs:
            raise ValueError("need at least one input CSV")


def _read_rows(path, required):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def _num(value):
    return float(value) if value not in ("", None) else np.nan


def scaled_metric(n, value):
    """Cube-root-of-n scaling used on the bias and SE panels."""
    return float(n) ** (1 / 3) * value


def _facet_grid(n_rows, n_cols):
    fig, axes = plt.subplots(
        n_rows,
        n_cols,
        figsize=(3.2 * n_cols + 1.2, 2.6 * n_rows + 0.8),
        squeeze=False,
        sharex=True,
        sharey="row",
    )
    return fig, axes


def _render_curve(spec: FigureSpec):
    rows = []
    for path in spec.inputs:
        rows.extend(_read_rows(path, CURVE_COLUMNS))
    methods = sorted({r["method"] for r in rows})
    fig, axes = _facet_grid(1, len(methods))
    for col, method in enumerate(methods):
        ax = axes[0][col]
        sub = [r for r in rows if r["method"] == method]
        a = np.array([_num(r["a"]) for r in sub])
        theta = np.array([_num(r["theta"]) for r in sub])
        order = np.argsort(a)
        ax.step(a[order], theta[order], where="post", color="C0", label="estimate")
        lower = np.array([_num(r["lower"]) for r in sub])[order]
        upper = np.array([_num(r["upper"]) for r in sub])[order]
        if np.any(np.isfinite(lower)):
            # pointwise intervals drawn as vertical bars
            ax.vlines(a[order], lower, upper, color="C0", alpha=0.45, lw=1.2)
        ax.set_title(f"interval: {method}")
        ax.set_xlabel("exposure")
        if col == 0:
            ax.set_ylabel("dose-response estimate")
    return fig


def _metric_rows(spec: FigureSpec):
    rows = []
    for path in spec.inputs:
        rows.extend(_read_rows(path, METRIC_COLUMNS))
    return rows


def _render_scaled(spec: FigureSpec, column: str, absolute: bool):
    rows = _metric_rows(spec)
    arms = sorted({r["arm"] for r in rows})
    estimators = sorted({r["estimator"] for r in rows})
    fig, axes = _facet_grid(len(estimators), len(arms))
    for irow, est in enumerate(estimators):
        for icol, arm in enumerate(arms):
            ax = axes[irow][icol]
            sub = [r for r in rows if r["arm"] == arm and r["estimator"] == est]
            for a in sorted({_num(r["a"]) for r in sub}):
                pts = sorted(
                    (int(r["n"]), _num(r[column]))
                    for r in sub
                    if _num(r["a"]) == a
                )
                ns = [p[0] for p in pts]
                vals = [
                    scaled_metric(p[0], abs(p[1]) if absolute else p[1]) for p in pts
                ]
                ax.plot(ns, vals, marker="o", ms=3, label=f"a = {a:g}")
            ax.set_xscale("log")
            if irow == 0:
                ax.set_title(arm)
            if irow == len(estimators) - 1:
                ax.set_xlabel("n")
            if icol == 0:
                label = "|bias|" if absolute else column
                ax.set_ylabel(f"{est}\n$n^{{1/3}}$ {label}")
    axes[0][-1].legend(fontsize=7, frameon=False)
    return fig


def _render_coverage(spec: FigureSpec):
    rows = _metric_rows(spec)
    rows = [r for r in rows if r["coverage"] not in ("", None)]
    if not rows:
        raise ValueError("no coverage values in input")
    arms = sorted({r["arm"] for r in rows})
    methods = sorted({r["ci_method"] for r in rows})
    fig, axes = _facet_grid(len(methods), len(arms))
    nominal = 1.0 - spec.alpha
    for irow, method in enumerate(methods):
        for icol, arm in enumerate(arms):
            ax = axes[irow][icol]
            sub = [r for r in rows if r["arm"] == arm and r["ci_method"] == method]
            for n in sorted({int(r["n"]) for r in sub}):
                pts = sorted(
                    (_num(r["a"]), _num(r["coverage"])) for r in sub if int(r["n"]) == n
                )
                ax.plot(
                    [p[0] for p in pts], [p[1] for p in pts],
                    marker="o", ms=3, label=f"n = {n}",
                )
            ax.axhline(nominal, color="black", ls="--", lw=1.0)
            ax.set_ylim(0.0, 1.05)
            if irow == 0:
                ax.set_title(arm)
            if irow == len(methods) - 1:
                ax.set_xlabel("a")
            if icol == 0:
                ax.set_ylabel(f"{method}\ncoverage")
    axes[0][-1].legend(fontsize=7, frameon=False)
    return fig


def render(spec: FigureSpec):
    """Render one figure and write it to ``spec.output``.

    Returns the matplotlib Figure (also useful for inspection in tests).
    """
    if spec.kind == "curve":
        fig = _render_curve(spec)
    elif spec.kind == "se":
        fig = _render_scaled(spec, "se", absolute=False)
    elif spec.kind == "bias":
        fig = _render_scaled(spec, "bias", absolute=True)
    else:
        fig = _render_coverage(spec)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=spec.dpi)
    return fig
