"""Shape-constrained regression primitives.

Greatest convex minorants (GCM), their left derivatives, and the weighted
pool-adjacent-violators algorithm (PAVA).  The two routes are mathematically
equivalent for least-squares monotone regression: the PAVA solution equals
the left derivative of the GCM of the weighted cumulative-sum diagram.  Both
are kept as independent implementations so one can check the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PlanarPoints",
    "ConvexMinorant",
    "StepFunction",
    "gcm",
    "left_derivative",
    "pava_weighted",
    "isotonic_regression",
]


def _finite_1d(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class PlanarPoints:
    """Planar point set with strictly increasing abscissae.

    Parameters
    ----------
    x : array-like
        Strictly increasing abscissae.
    y : array-like
        Ordinates, same length as ``x``.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _finite_1d(self.x, "x")
        y = _finite_1d(self.y, "y")
        if x.shape != y.shape:
            raise ValueError("x and y must have equal length")
        if x.size and np.any(np.diff(x) <= 0):
            raise ValueError("x must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class ConvexMinorant:
    """Piecewise-linear convex function given by its knots.

    The knots are a subset of the input points of :func:`gcm`; between knots
    the function interpolates linearly.  Slopes are non-decreasing.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def slopes(self) -> np.ndarray:
        """Segment slopes, one per knot interval (non-decreasing)."""
        return np.diff(self.values) / np.diff(self.knots)

    def __call__(self, t):
        return np.interp(t, self.knots, self.values)

    def left_slopes(self, t) -> np.ndarray:
        """Vectorized left derivative; every t must lie in (knots[0], knots[-1]]."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.size and (np.any(t <= self.knots[0]) or np.any(t > self.knots[-1])):
            raise ValueError("t outside (x_first, x_last]")
        idx = np.searchsorted(self.knots, t, side="left")
        return self.slopes[idx - 1]


def gcm(points: PlanarPoints) -> ConvexMinorant:
    """Greatest convex minorant of a finite point set over [x_first, x_last].

    Single monotone-stack pass over the points (lower convex hull), O(K).
    A point is dropped only when it lies strictly above the chord joining
    its hull neighbours, so points the minorant touches -- including
    collinear runs -- are all retained as knots.

    Parameters
    ----------
    points : PlanarPoints
        At least two points with strictly increasing abscissae.

    Returns
    -------
    ConvexMinorant
        Touches the input ordinates at every knot and lies at or below
        every input point; its value at the first and last abscissa equals
        the input value there.
    """
    x, y = points.x, points.y
    if x.size < 2:
        raise ValueError("gcm requires at least 2 points")
    keep = [0]
    for i in range(1, x.size):
        while len(keep) >= 2:
            j, k = keep[-2], keep[-1]
            # pop the middle point when it lies strictly above chord j--i
            if (y[k] - y[j]) * (x[i] - x[k]) > (y[i] - y[k]) * (x[k] - x[j]):
                keep.pop()
            else:
                break
        keep.append(i)
    idx = np.asarray(keep)
    return ConvexMinorant(x[idx], y[idx])


def left_derivative(minorant: ConvexMinorant, t: float) -> float:
    """Slope of the minorant segment immediately left of ``t``.

    At a knot this is the incoming segment's slope (left limit).  ``t``
    must lie in (knots[0], knots[-1]].
    """
    return float(minorant.left_slopes(t)[0])


def pava_weighted(y, w) -> np.ndarray:
    """Weighted least-squares monotone (non-decreasing) fit of ``y``.

    Standard block-merging stack, O(K): adjacent violating blocks are pooled
    and carry their weighted means.

    Parameters
    ----------
    y : array-like
        Ordinates.
    w : array-like
        Positive weights, same length as ``y``.

    Returns
    -------
    numpy.ndarray
        The minimizer of sum(w * (y - r)**2) over non-decreasing r.
    """
    y = _finite_1d(y, "y")
    w = _finite_1d(w, "w")
    if y.size == 0:
        raise ValueError("empty input")
    if y.shape != w.shape:
        raise ValueError("y and w must have equal length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")

    # track block sums rather than running means so merges stay exact
    # additions (matching the cusum-GCM route to near machine precision);
    # violations compare the divided means, the same doubles the output
    # carries, so the result is non-decreasing exactly as emitted
    wy = np.empty(y.size)
    ww = np.empty(y.size)
    counts = np.empty(y.size, dtype=np.intp)
    top = -1
    for i in range(y.size):
        top += 1
        wy[top] = w[i] * y[i]
        ww[top] = w[i]
        counts[top] = 1
        while top > 0 and wy[top - 1] / ww[top - 1] > wy[top] / ww[top]:
            wy[top - 1] += wy[top]
            ww[top - 1] += ww[top]
            counts[top - 1] += counts[top]
            top -= 1
    return np.repeat(wy[: top + 1] / ww[: top + 1], counts[: top + 1])


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function given by jump points and levels.

    ``continuity='right'`` means ``f(t) = y[j]`` on ``[x[j], x[j+1])``;
    ``continuity='left'`` means ``f(t) = y[j]`` on ``(x[j-1], x[j]]``.
    Evaluation beyond the jump range clamps to the nearest level, except on
    the open side when ``outside`` is given (e.g. a cumulative sum that is
    zero below its first jump).
    """

    x: np.ndarray
    y: np.ndarray
    continuity: str = "right"
    outside: float | None = None

    def __post_init__(self):
        x = _finite_1d(self.x, "x")
        y = _finite_1d(self.y, "y")
        if x.shape != y.shape:
            raise ValueError("x and y must have equal length")
        if x.size == 0:
            raise ValueError("step function needs at least one jump point")
        if np.any(np.diff(x) <= 0):
            raise ValueError("jump points must be strictly increasing")
        if self.continuity not in ("left", "right"):
            raise ValueError("continuity must be 'left' or 'right'")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if self.continuity == "right":
            idx = np.searchsorted(self.x, t_arr, side="right") - 1
            below = idx < 0
            out = self.y[np.clip(idx, 0, self.y.size - 1)]
            if self.outside is not None:
                out = np.where(below, self.outside, out)
        else:
            idx = np.searchsorted(self.x, t_arr, side="left")
            above = idx >= self.x.size
            out = self.y[np.clip(idx, 0, self.y.size - 1)]
            if self.outside is not None:
                out = np.where(above, self.outside, out)
        if np.isscalar(t) or np.ndim(t) == 0:
            return float(out[0])
        return out


def _pool_sums(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Sort by x and pool exact ties; returns distinct x with block sums of
    ``w * y`` and of ``w`` (block means are never materialized, so callers
    that re-accumulate stay bit-identical)."""
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    ux, start = np.unique(xs, return_index=True)
    wy = np.add.reduceat(ws * ys, start)
    ww = np.add.reduceat(ws, start)
    return ux, wy, ww


def _cusum_hull(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Pooled cusum diagram with a (0, 0) anchor and its GCM.

    Returns ``(distinct_x, u, hull)`` where ``u`` are the normalized
    cumulative weights of the distinct abscissae and ``hull`` is the GCM of
    ``{(0, 0)} U {(u_k, cumsum(w*y)_k / W)}``.
    """
    ux, wy, ww = _pool_sums(x, y, w)
    total = ww.sum()
    u = np.cumsum(ww) / total
    cus = np.cumsum(wy) / total
    hull = gcm(PlanarPoints(np.concatenate(([0.0], u)), np.concatenate(([0.0], cus))))
    return ux, u, hull


def isotonic_regression(y, x, w=None) -> StepFunction:
    """Least-squares isotonic regression of ``y`` on ``x``.

    Exact ties in ``x`` are pooled by weighted mean before fitting.  The
    fitted value at each distinct ``x`` is the left derivative of the GCM of
    the weighted cusum diagram, which coincides with the PAVA solution.

    Returns
    -------
    StepFunction
        Right-continuous step function with jumps at the distinct ``x``.
    """
    y = _finite_1d(y, "y")
    x = _finite_1d(x, "x")
    if y.size == 0:
        raise ValueError("empty input")
    if y.shape != x.shape:
        raise ValueError("y and x must have equal length")
    if w is None:
        w = np.ones_like(y)
    else:
        w = _finite_1d(w, "w")
        if w.shape != y.shape:
            raise ValueError("w must match y in length")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
    ux, u, hull = _cusum_hull(x, y, w)
    levels = hull.left_slopes(u)
    return StepFunction(ux, levels, continuity="right")
