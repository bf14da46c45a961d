"""Total training FLOPs of the standard plan styles and how well each
recovers the exponent as more of the compute grid is used.

    python3 demos/experiment_cost.py
"""

from scalelaw.estimator import build_isoflop_curves, estimate_many
from scalelaw.lawfit import power_law_ci
from scalelaw.planner import FlopGrid, accuracy_vs_compute, build_plan, experiment_cost
from scalelaw.synth import PRESETS, generate_runs


def main():
    grid = FlopGrid()
    for style in ("cosine", "tuned-constant"):
        plan = build_plan(style, grid)
        print(f"{style:>15}: {len(plan.runs):3d} runs, {experiment_cost(plan):.4g} FLOPs")

    plan = build_plan("tuned-constant", grid)
    curves = build_isoflop_curves(generate_runs(PRESETS["symmetric"], plan), grid.values, profile="refinedweb")
    est = estimate_many(curves, 300, 0)
    ref = power_law_ci(est)
    print(f"\nreference fit over all budgets: a = {ref.summary()}")
    print(f"{'max C':>10} {'cost':>10} {'a':>8} {'CI width':>9} {'rms err':>8}")
    for p in accuracy_vs_compute(curves, ref, 300, 0, estimates=est):
        print(f"{p.max_flops:10.3g} {p.budget:10.3g} {p.exponent:8.4f} {p.ci_width:9.4f} {p.rms_rel_err:8.4f}")


if __name__ == "__main__":
    main()
