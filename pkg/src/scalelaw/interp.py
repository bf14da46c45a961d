"""Akima spline interpolation and interpolant minimization.

The kernel is vectorized over a leading batch axis of y-values sharing one set
of knots, which is what the bootstrap estimators need: thousands of noisy
copies of the same IsoFLOP curve are fitted and minimized in one pass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_PER_DECADE = 512


class InterpMode(str, enum.Enum):
    LINEAR_SPACE = "linear"
    LOG_LOG = "loglog"


def akima_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Knot derivatives of the Akima spline.

    ``x`` has shape (n,), ``y`` has shape (..., n). End slopes use Akima's
    quadratic extrapolation of the secant sequence; where both weights vanish
    the tangent is the mean of the two adjacent secants.
    """
    n = x.shape[0]
    m = np.diff(y, axis=-1) / np.diff(x)
    if n == 2:
        return np.concatenate([m, m], axis=-1)
    # pad secants: two on each side
    left1 = 2.0 * m[..., :1] - m[..., 1:2]
    left2 = 2.0 * left1 - m[..., :1]
    right1 = 2.0 * m[..., -1:] - m[..., -2:-1]
    right2 = 2.0 * right1 - m[..., -1:]
    mm = np.concatenate([left2, left1, m, right1, right2], axis=-1)
    dm = np.abs(np.diff(mm, axis=-1))
    # knot i sits between padded secants mm[i+1] and mm[i+2]
    w_left = dm[..., 2:]     # |m_{i+1} - m_i|
    w_right = dm[..., :-2]   # |m_{i-1} - m_{i-2}|
    m_prev = mm[..., 1:-2]
    m_next = mm[..., 2:-1]
    denom = w_left + w_right
    scale = np.maximum(np.abs(m_prev), np.abs(m_next))
    tie = denom <= 1e-14 * np.maximum(scale, 1.0)
    safe = np.where(tie, 1.0, denom)
    t = np.where(tie, 0.5 * (m_prev + m_next), (w_left * m_prev + w_right * m_next) / safe)
    return t


def _hermite_coeffs(x: np.ndarray, y: np.ndarray, t: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    m = np.diff(y, axis=-1) / h
    t0, t1 = t[..., :-1], t[..., 1:]
    c0 = y[..., :-1]
    c2 = (3.0 * m - 2.0 * t0 - t1) / h
    c3 = (t0 + t1 - 2.0 * m) / (h * h)
    return np.stack([c0, t0, c2, c3], axis=-1)


@dataclass(frozen=True)
class Interpolant:
    """Piecewise-cubic Akima interpolant.

    In ``LOG_LOG`` mode the knots are stored as ``(ln x, ln y)`` and both
    evaluation and minimization work in that native coordinate; :meth:`__call__`
    takes and returns values in the original space.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray
    mode: InterpMode
    coeffs: np.ndarray

    @property
    def native_x(self) -> np.ndarray:
        return self.knots_x

    def eval_native(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return _eval_shared(self.knots_x, self.coeffs, u)

    def derivative_native(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        idx = np.clip(np.searchsorted(self.knots_x, u, side="right") - 1, 0, len(self.knots_x) - 2)
        dx = u - self.knots_x[idx]
        c = self.coeffs[idx]
        return c[..., 1] + dx * (2.0 * c[..., 2] + 3.0 * dx * c[..., 3])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode is InterpMode.LOG_LOG:
            return np.exp(self.eval_native(np.log(x)))
        return self.eval_native(x)

    @property
    def bounds(self) -> tuple[float, float]:
        lo, hi = self.knots_x[0], self.knots_x[-1]
        if self.mode is InterpMode.LOG_LOG:
            return float(np.exp(lo)), float(np.exp(hi))
        return float(lo), float(hi)


def _eval_shared(xk: np.ndarray, coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate coefficients of shape (..., n-1, 4) at points ``u`` (shared across batch)."""
    idx = np.clip(np.searchsorted(xk, u, side="right") - 1, 0, len(xk) - 2)
    dx = u - xk[idx]
    c = coeffs[..., idx, :]
    return c[..., 0] + dx * (c[..., 1] + dx * (c[..., 2] + dx * c[..., 3]))


def _eval_rowwise(xk: np.ndarray, coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate batched coefficients (B, n-1, 4) at one point per row, ``u`` of shape (B,)."""
    idx = np.clip(np.searchsorted(xk, u, side="right") - 1, 0, len(xk) - 2)
    dx = u - xk[idx]
    c = coeffs[np.arange(coeffs.shape[0]), idx]
    return c[:, 0] + dx * (c[:, 1] + dx * (c[:, 2] + dx * c[:, 3]))


def _prepare(points_x, points_y, mode: InterpMode):
    x = np.asarray(points_x, dtype=float)
    y = np.asarray(points_y, dtype=float)
    if x.ndim != 1 or y.shape[-1] != x.shape[0]:
        raise ValueError("x must be 1-D and y must end with an axis of the same length")
    if x.shape[0] < 2:
        raise ValueError("Akima interpolation needs at least 2 points")
    order = np.argsort(x, kind="stable")
    x = x[order]
    y = y[..., order]
    if np.any(np.diff(x) == 0):
        raise ValueError("duplicate x values")
    if mode is InterpMode.LOG_LOG:
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValueError("log-log interpolation requires positive x and y")
        x, y = np.log(x), np.log(y)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    return x, y


def akima_fit(points, mode=InterpMode.LINEAR_SPACE) -> Interpolant:
    """Fit an Akima spline through ``points``, a sequence of (x, y) pairs."""
    mode = InterpMode(mode)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a sequence of (x, y) pairs")
    x, y = _prepare(pts[:, 0], pts[:, 1], mode)
    coeffs = _hermite_coeffs(x, y, akima_slopes(x, y))
    return Interpolant(x, y, mode, coeffs)


@dataclass(frozen=True)
class Minimum:
    x: float
    value: float
    at_edge: bool


def default_resolution(span_native: float, mode: InterpMode, per_decade: int = DEFAULT_PER_DECADE) -> int:
    decades = span_native / math.log(10.0) if mode is InterpMode.LOG_LOG else span_native
    return max(2, int(math.ceil(per_decade * decades)) + 1)


def batch_minimize(xk: np.ndarray, yk: np.ndarray, resolution: int, iterations: int = 60):
    """Minimize many Akima interpolants over shared knots.

    ``xk`` (n,) are native knot abscissae, ``yk`` (B, n) the native knot values.
    Returns (argmin, min, at_edge) arrays of shape (B,), all in native
    coordinates. A coarse uniform grid locates the best cell, then golden
    section search refines within the two neighbouring grid cells.
    """
    yk = np.atleast_2d(yk)
    coeffs = _hermite_coeffs(xk, yk, akima_slopes(xk, yk))
    grid = np.linspace(xk[0], xk[-1], max(int(resolution), 2))
    vals = _eval_shared(xk, coeffs, grid)           # (B, G)
    j = np.argmin(vals, axis=-1)                     # first occurrence -> smaller x on ties
    G = grid.shape[0]
    lo = grid[np.maximum(j - 1, 0)]
    hi = grid[np.minimum(j + 1, G - 1)]
    a, b = lo.copy(), hi.copy()
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc = _eval_rowwise(xk, coeffs, c)
    fd = _eval_rowwise(xk, coeffs, d)
    for _ in range(iterations):
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + GOLDEN * (b - a))
        c_new = np.where(left, b - GOLDEN * (b - a), d)
        fd_new = np.where(left, fc, np.nan)
        fc_new = np.where(left, np.nan, fd)
        need_c = left
        need_d = ~left
        if need_c.any():
            fc_new[need_c] = _eval_rowwise(xk, coeffs[need_c], c_new[need_c])
        if need_d.any():
            fd_new[need_d] = _eval_rowwise(xk, coeffs[need_d], d_new[need_d])
        c, d, fc, fd = c_new, d_new, fc_new, fd_new
    xr = 0.5 * (a + b)
    fr = _eval_rowwise(xk, coeffs, xr)
    # keep the grid point if refinement did not improve on it
    gbest = grid[j]
    fbest = vals[np.arange(vals.shape[0]), j]
    better = fr < fbest
    xs = np.where(better, xr, gbest)
    fs = np.where(better, fr, fbest)
    at_edge = (xs <= xk[0]) | (xs >= xk[-1])
    return xs, fs, at_edge


def minimize_interpolant(f: Interpolant, resolution: int | None = None) -> Minimum:
    """Global minimum of ``f`` over its knot hull.

    ``resolution`` is the number of coarse grid points; by default 512 per
    decade of the native coordinate. Results are reported in the original
    coordinate, with ``at_edge`` set when the minimum sits on the hull boundary.
    """
    if resolution is None:
        resolution = default_resolution(float(f.knots_x[-1] - f.knots_x[0]), f.mode)
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    xs, fs, edge = batch_minimize(f.knots_x, f.knots_y[None, :], resolution)
    x, v = float(xs[0]), float(fs[0])
    if f.mode is InterpMode.LOG_LOG:
        x, v = math.exp(x), math.exp(v)
    return Minimum(x, v, bool(edge[0]))
