"""Power-law fits for compute-optimal allocations and saturating loss curves."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .accounting import CHINCHILLA_FLOPS
from .estimator import IsoFlopCurve, NStarEstimate, estimate_many

HUBER_DELTA = 1e-3


def weighted_loglog_regression(C, values, weights=None):
    """Weighted least squares of ``ln values`` on ``ln C``.

    Returns (intercept, slope, weighted R^2, unweighted R^2).
    """
    x = np.log(np.asarray(C, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 points")
    if np.ptp(x) == 0:
        raise ValueError("all compute budgets are identical")
    intercept, slope = _wls(x, y, w)
    resid = y - (intercept + slope * x)
    ybar_w = np.sum(w * y) / np.sum(w)
    ss_tot_w = np.sum(w * (y - ybar_w) ** 2)
    r2_w = 1.0 - np.sum(w * resid ** 2) / ss_tot_w if ss_tot_w > 0 else 1.0
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(intercept), float(slope), float(r2_w), float(r2)


def _wls(x, y, w):
    """Weighted straight-line fit, centred on the weighted mean of ``x`` for accuracy."""
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    dx = x - xm
    slope = np.sum(w * dx * (y - ym)) / np.sum(w * dx * dx)
    return float(ym - slope * xm), float(slope)


@dataclass(frozen=True)
class PowerLawFit:
    """``N*(C) = coefficient * C ** exponent`` with bootstrap uncertainty."""

    coefficient: float
    exponent: float
    r_squared: float
    r_squared_unweighted: float = float("nan")
    ci_exponent: tuple[float, float] = (float("nan"), float("nan"))
    ci_at_reference: tuple[float, float] = (float("nan"), float("nan"))
    reference_flops: float = CHINCHILLA_FLOPS
    bootstrap_params: np.ndarray = field(default_factory=lambda: np.empty((0, 2)), repr=False)

    def predict(self, C):
        return self.coefficient * np.asarray(C, dtype=float) ** self.exponent

    @property
    def at_reference(self) -> float:
        return float(self.predict(self.reference_flops))

    def summary(self) -> str:
        return format_estimate(self.exponent, self.ci_exponent)

    def to_dict(self) -> dict:
        D0, b = derive_token_law(self)
        rho0, r = derive_ratio_law(self)
        return {
            "N0": self.coefficient, "a": self.exponent,
            "r2": self.r_squared, "r2_unweighted": self.r_squared_unweighted,
            "ci_a": list(self.ci_exponent), "ci_ref": list(self.ci_at_reference),
            "reference_flops": self.reference_flops, "n_star_ref": self.at_reference,
            "D0": D0, "b": b, "rho0": rho0, "r": r,
            "a_text": format_estimate(self.exponent, self.ci_exponent),
        }


def format_estimate(value: float, ci: tuple[float, float]) -> str:
    """``0.497 (0.49, 0.50)`` style summary."""
    lo, hi = ci
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return f"{value:.3f}"
    return f"{value:.3f} ({lo:.2f}, {hi:.2f})"


def _valid(estimates: Sequence[NStarEstimate]) -> list[NStarEstimate]:
    good = [e for e in estimates if e.valid and math.isfinite(e.log_std) and e.log_std > 0]
    if len(good) < 2:
        raise ValueError("need at least 2 valid estimates to fit a power law")
    return good


def fit_power_law(estimates: Sequence[NStarEstimate], reference_flops: float = CHINCHILLA_FLOPS) -> PowerLawFit:
    """Weighted log-log fit of point estimates, weights ``1 / log_std**2``."""
    good = _valid(estimates)
    C = [e.C for e in good]
    w = [1.0 / e.log_std ** 2 for e in good]
    b0, a, r2w, r2 = weighted_loglog_regression(C, [e.n_star for e in good], w)
    return PowerLawFit(math.exp(b0), a, r2w, r2, reference_flops=reference_flops)


def power_law_ci(estimates: Sequence[NStarEstimate], reference_flops: float = CHINCHILLA_FLOPS,
                 level: float = 0.95, n_boot: Optional[int] = None, seed: int = 0) -> PowerLawFit:
    """Point fit plus quantile confidence intervals from per-replicate fits.

    Replicate ``b`` fits the ``b``-th bootstrap sample of every estimate,
    skipping estimates whose ``b``-th sample fell on the grid edge. Estimates
    without stored samples are resampled from a log-normal with their
    ``log_std`` (seeded by ``seed``).
    """
    good = _valid(estimates)
    point = fit_power_law(good, reference_flops)
    lnC = np.log([e.C for e in good])
    w = np.array([1.0 / e.log_std ** 2 for e in good])
    cols, masks = [], []
    B = n_boot
    for e in good:
        if e.all_samples is not None:
            cols.append(np.log(e.all_samples))
            masks.append(~e.edge_mask)
    if len(cols) == len(good):
        B = min(len(c) for c in cols) if B is None else min(B, min(len(c) for c in cols))
        S = np.stack([c[:B] for c in cols], axis=1)
        M = np.stack([m[:B] for m in masks], axis=1)
    else:
        B = 1000 if B is None else B
        rng = np.random.default_rng(seed)
        S = np.log([e.n_star for e in good])[None, :] + rng.standard_normal((B, len(good))) * \
            np.array([e.log_std for e in good])[None, :]
        M = np.ones_like(S, dtype=bool)
    params = []
    for b in range(B):
        m = M[b]
        if m.sum() < 2 or np.ptp(lnC[m]) == 0:
            continue
        ic, sl = _wls(lnC[m], S[b, m], w[m])
        params.append((math.exp(ic), sl))
    params = np.array(params) if params else np.empty((0, 2))
    if params.shape[0] == 0:
        return point
    q = [(1 - level) / 2 * 100, (1 + level) / 2 * 100]
    a_lo, a_hi = np.percentile(params[:, 1], q)
    refs = params[:, 0] * reference_flops ** params[:, 1]
    r_lo, r_hi = np.percentile(refs, q)
    return PowerLawFit(point.coefficient, point.exponent, point.r_squared, point.r_squared_unweighted,
                       (float(a_lo), float(a_hi)), (float(r_lo), float(r_hi)), reference_flops, params)


def fit_power_law_ci(curves: Sequence[IsoFlopCurve], B: int = 1000, seed: int = 0,
                     reference_flops: float = CHINCHILLA_FLOPS, threads: Optional[int] = None) -> PowerLawFit:
    """Estimate N* on every curve by bootstrap, then fit with quantile CIs."""
    if len(curves) < 2:
        raise ValueError("need at least 2 IsoFLOP curves")
    return power_law_ci(estimate_many(curves, B, seed, threads), reference_flops)


def derive_token_law(fit: PowerLawFit) -> tuple[float, float]:
    """``D*(C) = D0 * C**b`` implied by ``N*(C)`` and ``D = C / (6N)``."""
    return 1.0 / (6.0 * fit.coefficient), 1.0 - fit.exponent


def derive_ratio_law(fit: PowerLawFit) -> tuple[float, float]:
    """``rho*(C) = rho0 * C**r`` implied by ``rho = C / (6 N^2)``."""
    return 1.0 / (6.0 * fit.coefficient ** 2), 1.0 - 2.0 * fit.exponent


@dataclass(frozen=True)
class SaturatingFit:
    """``L(C) = E + L0 * C ** -ell``."""

    E: float
    L0: float
    ell: float
    objective: float = float("nan")

    def predict(self, C):
        return self.E + self.L0 * np.asarray(C, dtype=float) ** (-self.ell)

    def to_dict(self) -> dict:
        return {"E": self.E, "L0": self.L0, "ell": self.ell}


def huber(r, delta: float = HUBER_DELTA):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def _residuals(theta, lnC, lnL):
    lnE, lnL0, ell = theta
    pred = np.logaddexp(lnE, lnL0 - ell * lnC)
    return lnL - pred


def saturating_objective(E: float, L0: float, ell: float, C, losses, delta: float = HUBER_DELTA) -> float:
    lnC = np.log(np.asarray(C, dtype=float))
    lnL = np.log(np.asarray(losses, dtype=float))
    # E == 0 is the pure power-law limit
    lnE = math.log(E) if E > 0 else -np.inf
    return float(np.sum(huber(_residuals((lnE, math.log(L0), ell), lnC, lnL), delta)))


def fit_saturating(points, delta: float = HUBER_DELTA) -> SaturatingFit:
    """Huber fit of ``ln L`` against ``ln(E + L0 C^-ell)`` from a grid of starts."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (C, loss) points")
    C, L = pts[:, 0], pts[:, 1]
    if np.any(C <= 0) or np.any(L <= 0):
        raise ValueError("compute and loss values must be positive")
    lnC, lnL = np.log(C), np.log(L)
    if np.ptp(lnL) < 1e-12:
        raise ValueError("constant losses: decay exponent is unidentifiable")
    order = np.argsort(C)
    c_min, l_at_cmin = C[order[0]], L[order[0]]
    lmin = float(L.min())
    best = None
    for ell0, frac in itertools.product((0.05, 0.1, 0.2, 0.4), (0.1, 0.25, 0.5, 0.75, 0.9)):
        E0 = frac * lmin
        L00 = max(l_at_cmin - E0, 1e-3 * l_at_cmin) * c_min ** ell0
        theta0 = np.array([math.log(E0), math.log(L00), ell0])
        try:
            res = least_squares(_residuals, theta0, args=(lnC, lnL), loss="huber", f_scale=delta,
                                method="trf", x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                max_nfev=5000)
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        obj = float(np.sum(huber(_residuals(res.x, lnC, lnL), delta)))
        if best is None or obj < best[0]:
            best = (obj, res.x)
    if best is None:
        raise RuntimeError("saturating fit failed from every start")
    obj, (lnE, lnL0, ell) = best
    return SaturatingFit(math.exp(lnE), math.exp(lnL0), float(ell), obj)
