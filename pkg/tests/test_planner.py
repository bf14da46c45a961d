import math

import numpy as np
import pytest

from scalelaw.accounting import canonical_model_grid, model_size
from scalelaw.estimator import REFINEDWEB, build_isoflop_curves, estimate_many
from scalelaw.ingest import HyperParams, ModelArch, Schedule, ScheduleKind
from scalelaw.lawfit import power_law_ci
from scalelaw.planner import (KAPLAN_WARMUP_TOKENS, PLAN_STYLES, ExperimentPlan, FlopGrid, PlannedRun,
                              ScheduleStyle, WarmupStyle, accuracy_vs_compute, build_plan, cosine_lr,
                              curve_cost, drop_far_from_optimum, experiment_cost, prune_plan,
                              select_isoflop_models, warmup_tokens)
from scalelaw.synth import PRESETS, generate_runs

GRID = canonical_model_grid()


def test_flop_grid():
    g = FlopGrid()
    assert g.values[0] == 1.25e16
    assert g.values[-1] == 1.25e16 * 2 ** 11
    assert len(g.values) == 12
    assert FlopGrid.parse("1e16,4,3").values.tolist() == [1e16, 4e16, 1.6e17]
    with pytest.raises(ValueError):
        FlopGrid(1e16, 1.0, 3)


def test_selection_at_smallest_budget():
    chosen = select_isoflop_models(1.25e16, GRID)
    sizes = [model_size(m) for m in chosen]
    assert len(chosen) == 7
    assert sizes[0] == 5_173_248
    assert round(sizes[-1] / 1e6, 2) == 37.06
    lo, hi = math.sqrt(1.25e16 / 600), math.sqrt(1.25e16 / 6)
    assert lo == pytest.approx(4.56e6, rel=1e-3) and hi == pytest.approx(4.56e7, rel=1e-3)
    assert all(lo <= n <= hi for n in sizes)
    assert [model_size(m) for m in GRID if lo <= model_size(m) <= hi] == sizes


def test_selection_degenerate_range():
    chosen = select_isoflop_models(1e18, GRID, rho_range=(1, 1))
    assert len(chosen) == 1
    best = min(GRID, key=lambda m: abs(math.log(1e18 / (6 * model_size(m) ** 2))))
    assert chosen == [best]


def test_selection_budget_too_small():
    nmin = model_size(GRID[0])
    assert 6 * nmin ** 2 == pytest.approx(1.6e14, rel=0.01)   # rho = 1 at the smallest model
    assert 600 * nmin ** 2 == pytest.approx(1.6e16, rel=0.01)  # below this every rho > 100 ... for N_min
    with pytest.raises(ValueError):
        select_isoflop_models(1.6e12, GRID)


def test_selection_count_prefers_centre():
    chosen = select_isoflop_models(1e19, GRID, count=3)
    rhos = [1e19 / (6 * model_size(m) ** 2) for m in chosen]
    assert len(chosen) == 3
    assert all(1 <= r <= 100 for r in rhos)
    assert min(abs(math.log(r / 10)) for r in rhos) < 0.5


def test_warmup_rules():
    assert warmup_tokens(108.5e6, WarmupStyle.MATCH_MODEL_SIZE) == 108_500_000
    assert warmup_tokens(108.5e6, "kaplan") == 1_572_864_000 == KAPLAN_WARMUP_TOKENS
    assert warmup_tokens(901.7e6, "capped", 1e9) == pytest.approx(2e8)
    with pytest.raises(ValueError):
        warmup_tokens(1e8, "capped")


def test_cosine_lr():
    s = Schedule(ScheduleKind.COSINE, 1000, 11000, 0.01)
    assert cosine_lr(s, 1000) == 1.0
    assert cosine_lr(s, 11000) == pytest.approx(0.01)
    assert cosine_lr(s, 500) == 0.5
    s0 = Schedule(ScheduleKind.COSINE, 0, 10000, 0.0)
    assert cosine_lr(s0, 5000) == pytest.approx(0.5)
    assert cosine_lr(Schedule(ScheduleKind.CONSTANT, 100), 1e9) == 1.0


def _manual_plan(style, runs_per_budget):
    grid = FlopGrid()
    arch = ModelArch(3, 96)
    hp = HyperParams(1e-3, 32)
    runs = []
    for k, C in enumerate(grid.values):
        for j in range(runs_per_budget[k]):
            if style is ScheduleStyle.COSINE_PER_BUDGET:
                sched = Schedule(ScheduleKind.COSINE, 0, 10**9, 0.01)
            else:
                sched = Schedule(ScheduleKind.CONSTANT, 0)
            runs.append(PlannedRun(f"k{k}-{j}", arch, hp, sched, (float(C),)))
    return ExperimentPlan(grid, tuple(runs), style)


def test_cost_cosine_vs_constant():
    cosine = experiment_cost(_manual_plan(ScheduleStyle.COSINE_PER_BUDGET, [7] * 12))
    constant = experiment_cost(_manual_plan(ScheduleStyle.CONSTANT_REUSE, [1] * 11 + [7]))
    assert cosine == pytest.approx(7 * 1.25e16 * (2 ** 12 - 1), rel=1e-15)
    assert float(f"{cosine:.5g}") == 3.5831e20
    assert constant == pytest.approx(1.25e16 * (2 ** 11 - 1) + 7 * 1.25e16 * 2 ** 11, rel=1e-15)
    assert float(f"{constant:.5g}") == 2.0479e20
    assert constant / cosine == pytest.approx(0.5716, abs=1e-3)
    assert constant < cosine


def test_savings_property(rng):
    for _ in range(20):
        m = rng.integers(1, 8, 12)
        mp = m.copy()
        idx = rng.integers(0, 11)
        mp[:11] = np.minimum(mp[:11], rng.integers(1, 8, 11))
        mp[idx] = max(1, m[idx] - 1) if m[idx] > 1 else m[idx]
        if np.array_equal(mp[:11], m[:11]):
            continue
        # constant runs: m'_k new runs end at C_k, the rest extend to later budgets
        assert experiment_cost(_manual_plan(ScheduleStyle.CONSTANT_REUSE, list(mp))) < \
            experiment_cost(_manual_plan(ScheduleStyle.COSINE_PER_BUDGET, list(m)))


def test_build_plans():
    for style in PLAN_STYLES:
        plan = build_plan(style, FlopGrid(1.25e16, 2, 4))
        assert plan.runs
        for r in plan.runs:
            N = model_size(r.arch, plan.scheme)
            assert all(1 <= C / (6 * N * N) <= 100 for C in r.budgets)
    cos = build_plan("cosine", FlopGrid(1.25e16, 2, 4))
    assert all(len(r.budgets) == 1 for r in cos.runs)
    # cosine warmup is capped at 20% of the run
    for r in cos.runs:
        D = r.budgets[0] / (6 * model_size(r.arch))
        assert r.schedule.warmup_tokens <= 0.2 * D + 1


def test_tuned_plan_uses_table():
    plan = build_plan("tuned-constant")
    r = next(r for r in plan.runs if r.arch == ModelArch(14, 576))
    assert (r.hparams.learning_rate, r.hparams.batch_size_seqs, r.hparams.beta2) == (0.0051, 128, 0.99)
    assert r.schedule.warmup_tokens == int(model_size(r.arch))


def test_plan_round_trip():
    plan = build_plan("cosine", FlopGrid(1.25e16, 2, 3))
    assert ExperimentPlan.from_dict(plan.to_dict()) == plan


def test_prune_and_drop():
    plan = build_plan("tuned-constant", FlopGrid(1.25e16, 2, 5))
    pruned = prune_plan(plan, max_rho=20)
    for r in pruned.runs:
        N = model_size(r.arch)
        assert all(C / (6 * N * N) <= 20 for C in r.budgets)
    runs = generate_runs(PRESETS["symmetric"], plan)
    curve = build_isoflop_curves(runs, [1e17])[0]
    tight = drop_far_from_optimum(curve, 0.05)
    assert len(tight.points) < len(curve.points)
    assert tight.loss.min() == curve.loss.min()


def _noiseless_curves(grid=FlopGrid()):
    runs = generate_runs(PRESETS["symmetric"], build_plan("tuned-constant", grid))
    return build_isoflop_curves(runs, grid.values, profile=REFINEDWEB)


def test_accuracy_full_grid_matches_reference():
    curves = _noiseless_curves(FlopGrid(1.25e16, 2, 6))
    est = estimate_many(curves, 100, 0)
    ref = power_law_ci(est)
    pts = accuracy_vs_compute(curves, ref, 100, 0, estimates=est)
    last = pts[-1]
    assert last.exponent == ref.exponent
    assert last.rms_rel_err == 0.0
    # three-curve fit reports a (wide) CI rather than failing
    first = pts[0]
    assert first.max_flops == curves[2].C
    assert first.ci_width >= last.ci_width
    assert [p.budget for p in pts] == sorted(p.budget for p in pts)


def test_curve_cost_styles():
    curves = _noiseless_curves(FlopGrid(1.25e16, 2, 3))
    cos = curve_cost(curves, "cosine")
    assert cos == sum(c.C * len(c.points) for c in curves)
    assert curve_cost(curves, "constant") < cos


@pytest.mark.slow
def test_accuracy_improves_with_budget():
    # noisy replicas of the same surface; medians over 20 seeds
    base = _noiseless_curves()
    est0 = estimate_many(base, 200, 0)
    ref = power_law_ci(est0)
    rms, width = [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        noisy = [c.with_losses(c.loss + c.sigma * rng.standard_normal(len(c.points))) for c in base]
        pts = accuracy_vs_compute(noisy, ref, 200, seed)
        rms.append([p.rms_rel_err for p in pts])
        width.append([p.ci_width for p in pts])
    med_rms = np.median(rms, axis=0)
    med_w = np.median(width, axis=0)
    # non-increasing up to noise: each step may rise by at most 25%
    assert np.all(med_rms[1:] <= med_rms[:-1] * 1.25 + 1e-3)
    assert np.all(med_w[1:] <= med_w[:-1] * 1.25)
    assert med_rms[-1] < med_rms[0] and med_w[-1] < med_w[0]
