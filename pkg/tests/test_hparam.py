import math

import numpy as np
import pytest

from scalelaw.accounting import canonical_model_grid, model_size
from scalelaw.estimator import REFINEDWEB, IsoFlopCurve, noise_sigma
from scalelaw.hparam import (TUNED_TABLE, HParamLaws, SweepPoint, excess_at, excess_loss_table,
                             fit_hparam_laws, ideal_tuning_adjust, interpolated_loss, median_filter_rho,
                             optimal_hparams, optimal_lr_per_batch, round_hparams, select_beta2, tuned_table)
from scalelaw.interp import InterpMode, akima_fit
from scalelaw.planner import FlopGrid, select_isoflop_models
from scalelaw.signal import LossPoint
from scalelaw.synth import PRESETS, SynthSpec, balanced_data_coefficient, synthetic_sweep

LRS = tuple(0.001 * 2 ** k for k in range(7))          # 0.001 .. 0.064
BATCHES = (16, 32, 64, 128, 256)


def test_lr_vertex_at_grid_point():
    lrs = np.geomspace(1e-3, 1e-1, 9)   # contains 0.01 at index 4
    sweep = [SweepPoint(1e7, 64, lr, 0.95, 3.0 + 0.1 * math.log(lr / 0.01) ** 2) for lr in lrs]
    res = optimal_lr_per_batch(sweep, 1e7, 64)
    assert res.lr_star == pytest.approx(0.01, rel=1e-9)
    assert not res.at_edge


def test_dominating_beta2_matches_single():
    lrs = np.geomspace(1e-3, 1e-1, 9)
    good = [SweepPoint(1e7, 64, lr, 0.99, 3.0 + 0.1 * math.log(lr / 0.007) ** 2) for lr in lrs]
    bad = [SweepPoint(1e7, 64, p.lr, 0.95, p.final_loss + 0.05 + 0.2 * math.log(p.lr / 0.02) ** 2) for p in good]
    assert optimal_lr_per_batch(good + bad, 1e7, 64) == optimal_lr_per_batch(good, 1e7, 64)


def test_asymmetric_bowl_against_dense_scan():
    lrs = np.geomspace(1e-3, 1e-1, 9)
    f = lambda lr: 3.0 + 0.1 * np.log(lr / 0.013) ** 2 + 0.05 * np.log(lr / 0.013) ** 3 * (lr > 0.013)  # noqa
    sweep = [SweepPoint(1e7, 64, lr, 0.95, float(f(lr))) for lr in lrs]
    res = optimal_lr_per_batch(sweep, 1e7, 64)
    spline = akima_fit(np.column_stack([lrs, f(lrs)]), InterpMode.LOG_LOG)
    u = np.linspace(np.log(lrs[0]), np.log(lrs[-1]), 10**6)
    ub = u[np.argmin(spline.eval_native(u))]
    assert abs(math.log(res.lr_star) - ub) <= (u[1] - u[0]) * (1 + 1e-9)


def bowl_sweep(N=2e7, opt=(64, 0.008), curv=(0.02, 0.03), beta2s=(0.95, 0.99)):
    spec = PRESETS["symmetric"]
    return synthetic_sweep(spec, [N], BATCHES, LRS, beta2s, optimum=lambda n, r: opt, curvature=curv)


def test_planted_separable_optimum():
    res = optimal_hparams(bowl_sweep(), 2e7)
    assert abs(math.log2(res.bs_star / 64)) < 1.0
    assert abs(math.log2(res.lr_star / 0.008)) < 1.0
    assert not res.bs_at_edge and not res.lr_at_edge


def test_planted_off_grid_optimum():
    res = optimal_hparams(bowl_sweep(opt=(90, 0.0055)), 2e7)
    assert abs(math.log2(res.bs_star / 90)) < 1.0
    assert abs(math.log2(res.lr_star / 0.0055)) < 1.0


def test_flat_in_batch_is_edge():
    sweep = [SweepPoint(2e7, b, lr, 0.95, 3.0 + 0.1 * math.log(lr / 0.008) ** 2) for b in BATCHES for lr in LRS]
    assert optimal_hparams(sweep, 2e7).bs_at_edge


def test_saturation_breaks_batch_trend():
    # beta2 = 0.95 only: small batches are penalised, more strongly for small models,
    # so the smallest model's optimum is pushed above its neighbours'
    spec = PRESETS["symmetric"]
    sizes = [5e6, 1e7, 2e7, 4e7, 8e7]
    out = []
    for N in sizes:
        b0, l0 = 0.0625 * N ** 0.4, 0.5 * N ** -0.33
        k = 0.2 * (2e7 / N) ** 1.5
        for b in BATCHES + (512,):
            for lr in LRS:
                loss = float(spec.loss(N, 20 * N)) + 0.02 * math.log(b / b0) ** 2 + 0.03 * math.log(lr / l0) ** 2
                loss += k * max(0.0, math.log(128 / b)) ** 2
                out.append(SweepPoint(N, b, lr, 0.95, loss))
    bs = [optimal_hparams(out, N).bs_star for N in sizes]
    assert any(b2 < b1 for b1, b2 in zip(bs, bs[1:]))


def test_law_exact_recovery():
    N = np.geomspace(5e6, 1e8, 6)
    laws = fit_hparam_laws([(n, 0.5 * n ** 0.4, 0.3 * n ** -0.3) for n in N])
    assert laws.bs_law[1] == pytest.approx(0.4, abs=1e-10)
    assert laws.lr_law[1] == pytest.approx(-0.3, abs=1e-10)
    assert laws.bs_law[0] == pytest.approx(0.5, rel=1e-9)
    assert HParamLaws.from_dict(laws.to_dict()) == laws


def test_laws_from_tuned_table_rows():
    sizes = [model_size(m) for m in canonical_model_grid()]
    rows = [(N, bs, lr) for N, (_, lr, bs, _) in zip(sizes, TUNED_TABLE) if N <= 57.4e6]
    assert len(rows) == 8
    laws = fit_hparam_laws(rows)
    lr84 = float(laws.learning_rate(84.79e6))
    bs220 = float(laws.batch_size(220.9e6))
    assert 0.0051 / 1.25 <= lr84 <= 0.0051 * 1.25
    assert 256 / 1.3 <= bs220 <= 256 * 1.3


def test_round_hparams():
    assert round_hparams(128, 0.005123)[1] == 0.0051
    assert round_hparams(101, 0.01, 4)[0] == 100
    assert round_hparams(2, 0.01, 4)[0] == 4
    assert round_hparams(102, 0.01, 4)[0] == 104     # tie goes up
    with pytest.raises(ValueError):
        round_hparams(0, 0.01)


def test_select_beta2():
    assert select_beta2(192) == 0.99
    assert select_beta2(256) == 0.95
    assert select_beta2(1) == 0.99


def test_table_conventions_on_reference_rows():
    laws = HParamLaws((128.0, 0.0), (0.005123, 0.0))
    row = tuned_table(laws, [84.79e6])[0]
    assert (row["lr"], row["batch_size"], row["beta2"]) == (0.0051, 128, 0.99)
    row = tuned_table(HParamLaws((255.0, 0.0), (0.0038, 0.0)), [220.9e6])[0]
    assert (row["batch_size"], row["beta2"]) == (256, 0.95)


def test_interpolated_loss_at_grid_point():
    sweep = bowl_sweep()
    p = next(s for s in sweep if s.batch_size_seqs == 32 and s.lr == 0.004 and s.beta2 == 0.95)
    assert interpolated_loss(sweep, 2e7, 32, 0.004) == pytest.approx(p.final_loss, rel=1e-12)


def test_median_filter():
    rho = np.array([2.0, 3.0, 4.0, 5.0, 6.0])
    v = np.array([1.0, 10.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(median_filter_rho(rho, v), [5.5, 2.0, 3.0, 3.0, 3.5])


# ideal-tuning fixture: a surface with optimum near rho = 8, so IsoFLOP
# curves restricted to 2 <= rho <= 30 keep their minimum inside
SURFACE = SynthSpec(1.69, 406.4, 0.3, balanced_data_coefficient(406.4, 0.3, 0.3, 8.0), 0.3)
OPT = lambda N, rho: (0.0625 * N ** 0.4, 0.5 * N ** -0.33)  # noqa: E731
SWEEP_LRS = tuple(np.geomspace(5e-4, 5e-2, 7))
SWEEP_BATCHES = (16, 32, 64, 128, 256, 512)


def _ideal_fixture(excess):
    sizes = [model_size(m) for m in canonical_model_grid()]
    sweep = synthetic_sweep(SURFACE, sizes, SWEEP_BATCHES, SWEEP_LRS, rhos=tuple(range(2, 21, 2)), optimum=OPT)
    curves = []
    for C in FlopGrid().values[:8]:
        pts = []
        for m in select_isoflop_models(C, canonical_model_grid()):
            N = model_size(m)
            L = float(SURFACE.loss(N, C / (6 * N))) + excess(N)
            pts.append(LossPoint(N, C, L, noise_sigma(L, REFINEDWEB)))
        curves.append(IsoFlopCurve(C, tuple(pts)))
    return sweep, curves


def test_ideal_tuning_recovers_planted_exponent():
    fixed = HParamLaws((256.0, 0.0), (3e-3, 0.0))

    def excess(N):
        b0, l0 = OPT(N, 20)
        return 0.02 * math.log(256 / b0) ** 2 + 0.03 * math.log(3e-3 / l0) ** 2

    sweep, curves = _ideal_fixture(excess)
    res = ideal_tuning_adjust(sweep, curves, fixed, B=300, seed=0)
    lo, hi = res.adjusted_fit.ci_exponent
    assert lo <= 0.5 <= hi
    assert abs(res.adjusted_fit.exponent - 0.5) < abs(res.baseline_fit.exponent - 0.5)
    assert len(res.adjusted_curves) == 8


def test_zero_excess_is_identity():
    flat = [SweepPoint(N, b, lr, 0.95, 3.0 + 0.01 * r, float(r))
            for N in (5e6, 5e7, 5e8) for r in range(2, 21, 2) for b in SWEEP_BATCHES for lr in SWEEP_LRS]
    _, curves = _ideal_fixture(lambda N: 0.0)
    laws = HParamLaws((100.0, 0.0), (3e-3, 0.0))
    res = ideal_tuning_adjust(flat, curves, laws, B=200, seed=4)
    for n, (_, raw, filt) in res.excess.items():
        assert np.all(raw == 0) and np.all(filt == 0)
    assert res.adjusted_fit.exponent == res.baseline_fit.exponent
    assert res.adjusted_fit.ci_exponent == res.baseline_fit.ci_exponent


def test_excess_lookup_rules():
    table = {1e7: (np.array([2.0, 20.0]), np.zeros(2), np.array([0.2, 0.0])),
             1e8: (np.array([2.0, 20.0]), np.zeros(2), np.array([0.1, 0.0]))}
    assert excess_at(table, 1e7, 1.5) is None
    assert excess_at(table, 1e7, 31) is None
    assert excess_at(table, 2e8, 10) is None
    # mirrored around 20
    assert excess_at(table, 1e7, 25) == pytest.approx(excess_at(table, 1e7, 15))
    # geometric midpoint in N interpolates linearly in ln N
    assert excess_at(table, math.sqrt(1e15), 2) == pytest.approx(0.15)


def test_insufficient_rho_coverage():
    sweep = bowl_sweep()
    with pytest.raises(ValueError, match="rho coverage"):
        excess_loss_table(sweep, HParamLaws((64.0, 0.0), (0.008, 0.0)))
