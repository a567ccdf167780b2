"""Tests for the figure renderer, against synthetic smoke-run CSVs."""

import csv

import numpy as np
import pytest

from isodose_figures import FigureSpec, render, scaled_metric
from isodose_figures.cli import main

METRICS_HEADER = "estimator,ci_method,arm,n,a,bias,se,coverage,width,reps,failures"


def write_metrics(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRICS_HEADER.split(","))
        writer.writerows(rows)


def write_curve(path, rows):
    header = ["a", "theta", "lower", "upper", "psi_prime", "kappa", "tau", "method"]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


@pytest.fixture
def metrics_csv(tmp_path):
    path = tmp_path / "metrics.csv"
    rows = []
    for arm in ("both-correct", "g-only"):
        for n in (500, 1000):
            for a in (-1.0, 0.0, 1.0):
                rows.append([
                    "standard", "plugin", arm, n, a,
                    0.01 * a / n, 0.5 / n ** (1 / 3), 0.93 + 0.01 * a, 0.2, 50, 0,
                ])
    write_metrics(path, rows)
    return path


@pytest.fixture
def curve_csv(tmp_path):
    path = tmp_path / "curve.csv"
    rows = []
    theta = 0.0
    for a in np.linspace(-2, 2, 9):
        theta += 0.1
        for method in ("plugin", "dr"):
            rows.append([a, theta, theta - 0.05, theta + 0.05, "", "", "", method])
    write_curve(path, rows)
    return path


class TestRender:
    def test_all_kinds_produce_nonempty_files(self, tmp_path, metrics_csv, curve_csv):
        for kind, source in (
            ("curve", curve_csv),
            ("se", metrics_csv),
            ("bias", metrics_csv),
            ("coverage", metrics_csv),
        ):
            out = tmp_path / f"{kind}.png"
            render(FigureSpec(inputs=(source,), kind=kind, output=str(out)))
            assert out.exists() and out.stat().st_size > 0

    def test_coverage_panel_has_nominal_reference(self, tmp_path, metrics_csv):
        out = tmp_path / "cov.png"
        fig = render(
            FigureSpec(inputs=(metrics_csv,), kind="coverage", output=str(out), alpha=0.05)
        )
        for ax in fig.axes:
            horiz = [
                line for line in ax.get_lines()
                if line.get_linestyle() == "--"
                and np.allclose(line.get_ydata(), 0.95)
            ]
            assert horiz, "missing nominal 0.95 reference line"

    def test_bias_panel_values_match_csv_arithmetic(self, tmp_path, metrics_csv):
        out = tmp_path / "bias.png"
        fig = render(FigureSpec(inputs=(metrics_csv,), kind="bias", output=str(out)))
        # spot-check: the plotted value at (arm=both-correct, a=1, n=500)
        # equals n^(1/3) * |bias| from the CSV
        expected = scaled_metric(500, abs(0.01 * 1.0 / 500))
        found = False
        for ax in fig.axes:
            for line in ax.get_lines():
                xd, yd = line.get_xdata(), line.get_ydata()
                for x, y in zip(xd, yd):
                    if x == 500 and np.isclose(y, expected, rtol=1e-12):
                        found = True
        assert found

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "bad.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["estimator", "arm", "n"])
            writer.writerow(["standard", "both-correct", 100])
        with pytest.raises(ValueError, match="missing column"):
            render(FigureSpec(inputs=(path,), kind="coverage", output=str(tmp_path / "x.png")))

    def test_empty_csv_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_metrics(path, [])
        with pytest.raises(ValueError, match="no data rows"):
            render(FigureSpec(inputs=(path,), kind="se", output=str(tmp_path / "x.png")))

    def test_unknown_kind_rejected(self, tmp_path, metrics_csv):
        with pytest.raises(ValueError):
            FigureSpec(inputs=(metrics_csv,), kind="pie", output=str(tmp_path / "x.png"))

    def test_deterministic_dimensions(self, tmp_path, metrics_csv):
        f1 = render(FigureSpec(inputs=(metrics_csv,), kind="se", output=str(tmp_path / "a.png")))
        f2 = render(FigureSpec(inputs=(metrics_csv,), kind="se", output=str(tmp_path / "b.png")))
        assert f1.get_size_inches().tolist() == f2.get_size_inches().tolist()


class TestCli:
    def test_cli_renders(self, tmp_path, metrics_csv):
        out = tmp_path / "fig4.png"
        rc = main(["--kind", "coverage", "--input", str(metrics_csv), "--out", str(out)])
        assert rc == 0
        assert out.exists() and out.stat().st_size > 0

    def test_cli_reports_errors(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        rc = main(["--kind", "se", "--input", str(missing), "--out", str(tmp_path / "x.png")])
        assert rc != 0
        assert "error:" in capsys.readouterr().err
