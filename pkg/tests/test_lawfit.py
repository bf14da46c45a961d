import math
from fractions import Fraction

import numpy as np
import pytest

from scalelaw.estimator import NStarEstimate
from scalelaw.lawfit import (PowerLawFit, derive_ratio_law, derive_token_law, fit_power_law, fit_saturating,
                             format_estimate, huber, power_law_ci, saturating_objective,
                             weighted_loglog_regression)


def est(C, n, log_std=0.1, valid=True, samples=None):
    s = np.full(4, n) if samples is None else np.asarray(samples)
    return NStarEstimate(C=C, n_star=n, log_std=log_std, samples=s, omitted_fraction=0.0, loss_star=3.0,
                         valid=valid, all_samples=s, edge_mask=np.zeros(s.shape, bool))


def normal_equations(x, y, w):
    """Closed-form weighted least squares for y = b0 + b1 x, in exact rational arithmetic."""
    x, y, w = ([Fraction(float(v)) for v in a] for a in (x, y, w))
    S = sum(w)
    Sx = sum(wi * xi for wi, xi in zip(w, x))
    Sy = sum(wi * yi for wi, yi in zip(w, y))
    Sxx = sum(wi * xi * xi for wi, xi in zip(w, x))
    Sxy = sum(wi * xi * yi for wi, xi, yi in zip(w, x, y))
    det = S * Sxx - Sx * Sx
    return float((Sxx * Sy - Sx * Sxy) / det), float((S * Sxy - Sx * Sy) / det)


def test_exact_law():
    C = np.geomspace(1e16, 1e20, 10)
    fit = fit_power_law([est(c, 2e6 * c ** 0.5) for c in C])
    assert fit.coefficient == pytest.approx(2e6, rel=1e-10)
    assert fit.exponent == pytest.approx(0.5, rel=1e-10)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-10)


def test_two_points_interpolate():
    fit = fit_power_law([est(1e16, 1e7), est(1e18, 1e8)])
    assert fit.exponent == pytest.approx(0.5)
    assert fit.predict(1e16) == pytest.approx(1e7)
    assert fit.r_squared == pytest.approx(1.0)


def test_heteroscedastic_against_normal_equations(rng):
    for _ in range(20):
        C = np.geomspace(1e16, 1e21, 12)
        sd = rng.uniform(0.02, 0.4, 12)
        n = 0.1 * C ** 0.48 * np.exp(sd * rng.standard_normal(12))
        fit = fit_power_law([est(c, v, s) for c, v, s in zip(C, n, sd)])
        b0, b1 = normal_equations(np.log(C), np.log(n), 1 / sd ** 2)
        assert fit.exponent == pytest.approx(b1, rel=1e-12)
        assert math.log(fit.coefficient) == pytest.approx(b0, rel=1e-12)


def test_invalid_estimates_skipped():
    C = [1e16, 1e17, 1e18]
    ests = [est(c, 2e6 * c ** 0.5) for c in C] + [est(1e19, 1.0, valid=False)]
    assert fit_power_law(ests).exponent == pytest.approx(0.5)
    with pytest.raises(ValueError):
        fit_power_law([est(1e16, 1e7), est(1e17, 1e8, valid=False)])


def test_regression_errors():
    with pytest.raises(ValueError):
        weighted_loglog_regression([1e16, 1e16], [1, 2])


def test_zero_noise_zero_width_ci():
    C = np.geomspace(1e16, 1e19, 6)
    fit = power_law_ci([est(c, 3 * c ** 0.45, samples=np.full(50, 3 * c ** 0.45)) for c in C])
    assert fit.ci_exponent[0] == pytest.approx(fit.exponent, rel=1e-12)
    assert fit.ci_exponent[1] == pytest.approx(fit.exponent, rel=1e-12)
    assert fit.ci_at_reference[0] == pytest.approx(fit.at_reference, rel=1e-10)


def test_ci_uses_replicate_columns(rng):
    C = np.geomspace(1e16, 1e19, 6)
    ests = []
    for c in C:
        s = 2 * c ** 0.5 * np.exp(0.1 * rng.standard_normal(400))
        ests.append(est(c, float(np.exp(np.median(np.log(s)))), 0.1, samples=s))
    fit = power_law_ci(ests)
    assert fit.bootstrap_params.shape == (400, 2)
    lo, hi = fit.ci_exponent
    assert lo < fit.exponent < hi
    # replicate b pairs the b-th sample of every curve
    x = np.log(C)
    y = np.log([e.all_samples[0] for e in ests])
    _, slope0 = normal_equations(x, y, np.full(6, 100.0))
    assert fit.bootstrap_params[0, 1] == pytest.approx(slope0, rel=1e-10)


def test_parametric_ci_without_samples():
    C = np.geomspace(1e16, 1e19, 6)
    ests = [NStarEstimate(c, 2 * c ** 0.5, 0.1, np.empty(0), 0.0, 3.0, True) for c in C]
    fit = power_law_ci(ests, n_boot=300, seed=1)
    assert fit.ci_exponent[0] < 0.5 < fit.ci_exponent[1]


def test_format_estimate():
    assert format_estimate(0.4971, (0.4912, 0.5034)) == "0.497 (0.49, 0.50)"
    assert format_estimate(0.5, (float("nan"), 1.0)) == "0.500"


def test_derived_laws():
    fit = PowerLawFit(2e6, 0.5, 1.0)
    rho0, r = derive_ratio_law(fit)
    assert r == 0.0
    assert rho0 == pytest.approx(1 / (6 * 4e12))
    assert rho0 == pytest.approx(4.167e-14, rel=1e-3)
    for a in (0.3, 0.5, 0.73):
        D0, b = derive_token_law(PowerLawFit(1.0, a, 1.0))
        assert a + b == pytest.approx(1.0)


def test_to_dict_keys():
    d = PowerLawFit(2e6, 0.5, 1.0, ci_exponent=(0.49, 0.51)).to_dict()
    assert d["a_text"] == "0.500 (0.49, 0.51)"
    assert d["n_star_ref"] == pytest.approx(2e6 * 5.88e23 ** 0.5)
    assert {"N0", "a", "r2", "ci_a", "ci_ref", "D0", "b", "rho0", "r"} <= set(d)


def test_huber():
    r = np.array([-1e-2, -5e-4, 0.0, 5e-4, 1e-2])
    h = huber(r, 1e-3)
    np.testing.assert_allclose(h, [1e-3 * (1e-2 - 5e-4), 1.25e-7, 0, 1.25e-7, 1e-3 * (1e-2 - 5e-4)])


def test_saturating_round_trip():
    C = np.geomspace(1e17, 1e21, 12)
    L = 1.7 + 50 * C ** -0.1
    fit = fit_saturating(np.column_stack([C, L]))
    assert fit.E == pytest.approx(1.7, rel=1e-4)
    assert fit.L0 == pytest.approx(50, rel=1e-4)
    assert fit.ell == pytest.approx(0.1, rel=1e-4)
    assert saturating_objective(fit.E, fit.L0, fit.ell, C, L) < 1e-12


def test_saturating_pure_power_law():
    C = np.geomspace(1e17, 1e21, 12)
    L = 900 * C ** -0.12
    fit = fit_saturating(np.column_stack([C, L]))
    assert fit.E < 1e-3 * L.min()
    # oracle: plain log-space regression
    b0, b1, *_ = weighted_loglog_regression(C, L)
    assert fit.ell == pytest.approx(-b1, rel=1e-3)
    assert fit.L0 == pytest.approx(math.exp(b0), rel=1e-2)


def test_saturating_robust_to_outlier():
    C = np.geomspace(1e17, 1e21, 12)
    L = 1.7 + 50 * C ** -0.1
    L[5] *= 1.05
    fit = fit_saturating(np.column_stack([C, L]))
    assert fit.ell == pytest.approx(0.1, rel=0.02)


def test_saturating_errors():
    with pytest.raises(ValueError):
        fit_saturating([(1e17, 3.0), (1e18, 2.9), (1e19, 2.8)])
    with pytest.raises(ValueError):
        fit_saturating([(c, 3.0) for c in (1e17, 1e18, 1e19, 1e20)])
