"""IsoFLOP experiment planning and compute-cost accounting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .accounting import SizeScheme, canonical_model_grid, model_size, tokens_per_param
from .estimator import IsoFlopCurve, estimate_many
from .hparam import TUNED_TABLE
from .ingest import HyperParams, ModelArch, Schedule, ScheduleKind
from .lawfit import PowerLawFit, power_law_ci

KAPLAN_BATCH_SEQS = 256                      # 2**19 tokens at sequence length 2048
KAPLAN_WARMUP_TOKENS = 3000 * 2 ** 19
KAPLAN_DECAY_END_TOKENS = 250_000 * 2 ** 19
DEFAULT_LR = 3e-3
DEFAULT_BETA2 = 0.95
COSINE_FINAL_FRACTION = 0.01
COSINE_WARMUP_CAP = 0.2


@dataclass(frozen=True)
class FlopGrid:
    base: float = 1.25e16
    factor: float = 2.0
    count: int = 12

    def __post_init__(self):
        if not self.base > 0 or not self.factor > 1 or self.count < 1:
            raise ValueError("need base > 0, factor > 1, count >= 1")

    @property
    def values(self) -> np.ndarray:
        return np.array([self.base * self.factor ** k for k in range(self.count)])

    @classmethod
    def parse(cls, text: str) -> "FlopGrid":
        base, factor, count = text.split(",")
        return cls(float(base), float(factor), int(count))


class ScheduleStyle(str, enum.Enum):
    CONSTANT_REUSE = "constant"
    COSINE_PER_BUDGET = "cosine"


class WarmupStyle(str, enum.Enum):
    MATCH_MODEL_SIZE = "match"
    KAPLAN_FIXED = "kaplan"
    COSINE_CAPPED = "capped"


def warmup_tokens(N: float, style, budget_tokens: Optional[float] = None) -> float:
    style = WarmupStyle(style)
    if style is WarmupStyle.MATCH_MODEL_SIZE:
        return float(N)
    if style is WarmupStyle.KAPLAN_FIXED:
        return float(KAPLAN_WARMUP_TOKENS)
    if budget_tokens is None:
        raise ValueError("capped warmup needs the run's token budget")
    return float(min(N, COSINE_WARMUP_CAP * budget_tokens))


def cosine_lr(schedule: Schedule, tokens_seen: float) -> float:
    """Learning-rate multiplier after ``tokens_seen`` tokens."""
    if tokens_seen < 0:
        raise ValueError("tokens_seen must be nonnegative")
    w = schedule.warmup_tokens
    if w > 0 and tokens_seen < w:
        return tokens_seen / w
    if schedule.kind is ScheduleKind.CONSTANT:
        return 1.0
    f = schedule.final_lr_fraction
    t = min(max((tokens_seen - w) / (schedule.decay_end_tokens - w), 0.0), 1.0)
    return f + (1.0 - f) * 0.5 * (1.0 + math.cos(math.pi * t))


def select_isoflop_models(C: float, grid_models: Sequence[ModelArch], scheme=SizeScheme.LINEAR,
                          rho_range: tuple[float, float] = (1.0, 100.0), count: int = 7) -> list[ModelArch]:
    """Models whose tokens-per-parameter ratio at budget ``C`` lies in ``rho_range``.

    At most ``count`` are returned (sorted by size), preferring ratios closest
    in log space to the geometric centre of the range. A degenerate range
    ``(r, r)`` returns the single model with ratio nearest ``r``.
    """
    if not grid_models:
        raise ValueError("empty model grid")
    lo, hi = rho_range
    rho = {id(a): tokens_per_param(model_size(a, scheme), C) for a in grid_models}
    centre = math.sqrt(lo * hi)
    if lo == hi:
        best = min(grid_models, key=lambda a: abs(math.log(rho[id(a)] / lo)))
        return [best]
    ok = [a for a in grid_models if lo <= rho[id(a)] <= hi]
    if not ok:
        raise ValueError(f"no model has tokens-per-parameter in [{lo}, {hi}] at C={C:g}")
    ok.sort(key=lambda a: (abs(math.log(rho[id(a)] / centre)), model_size(a, scheme)))
    chosen = ok[:count]
    return sorted(chosen, key=lambda a: model_size(a, scheme))


@dataclass(frozen=True)
class PlannedRun:
    run_id: str
    arch: ModelArch
    hparams: HyperParams
    schedule: Schedule
    budgets: tuple[float, ...]

    @property
    def max_budget(self) -> float:
        return max(self.budgets)


@dataclass(frozen=True)
class ExperimentPlan:
    grid: FlopGrid
    runs: tuple[PlannedRun, ...]
    schedule_style: ScheduleStyle
    scheme: SizeScheme = SizeScheme.LINEAR
    name: str = ""

    def __post_init__(self):
        if self.schedule_style is ScheduleStyle.COSINE_PER_BUDGET:
            for r in self.runs:
                if len(r.budgets) != 1:
                    raise ValueError(f"cosine run {r.run_id} must target exactly one budget")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "grid": {"base": self.grid.base, "factor": self.grid.factor, "count": self.grid.count},
            "schedule_style": self.schedule_style.value,
            "scheme": self.scheme.value,
            "runs": [_run_skeleton(r) for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        runs = []
        for r in d["runs"]:
            a, h, s = r["arch"], r["hparams"], r["schedule"]
            runs.append(PlannedRun(
                r["run_id"],
                ModelArch(a["depth"], a["width"], a.get("vocab", 50432), a.get("seq_len", 2048), a.get("heads", 4)),
                HyperParams(h["lr"], h["batch_size_seqs"], h.get("beta2", 0.95), h.get("seed", 0)),
                Schedule(ScheduleKind(s["kind"]), int(s["warmup_tokens"]),
                         None if s.get("decay_end_tokens") is None else int(s["decay_end_tokens"]),
                         float(s.get("final_lr_fraction", 0.0))),
                tuple(float(c) for c in r["budgets"]),
            ))
        g = d.get("grid", {})
        return cls(FlopGrid(g.get("base", 1.25e16), g.get("factor", 2.0), g.get("count", 12)), tuple(runs),
                   ScheduleStyle(d["schedule_style"]), SizeScheme.parse(d.get("scheme", "linear")),
                   d.get("name", ""))


def _run_skeleton(r: PlannedRun) -> dict:
    return {
        "run_id": r.run_id,
        "dataset": "",
        "arch": {"depth": r.arch.depth, "width": r.arch.width, "vocab": r.arch.vocab,
                 "seq_len": r.arch.seq_len, "heads": r.arch.heads},
        "hparams": {"lr": r.hparams.learning_rate, "batch_size_seqs": r.hparams.batch_size_seqs,
                    "beta2": r.hparams.beta2, "seed": r.hparams.seed},
        "schedule": {"kind": r.schedule.kind.value, "warmup_tokens": r.schedule.warmup_tokens,
                     "decay_end_tokens": r.schedule.decay_end_tokens,
                     "final_lr_fraction": r.schedule.final_lr_fraction},
        "log_interval": 20,
        "steps_file": f"{r.run_id}.steps.csv",
        "vals_file": f"{r.run_id}.vals.csv",
        "budgets": list(r.budgets),
    }


def experiment_cost(plan: ExperimentPlan) -> float:
    """Total training FLOPs of ``plan``.

    Per-budget cosine runs cost their one budget each; reusable runs cost the
    largest budget they serve.
    """
    if plan.schedule_style is ScheduleStyle.COSINE_PER_BUDGET:
        return float(sum(sum(r.budgets) for r in plan.runs))
    return float(sum(r.max_budget for r in plan.runs))


# Named configurations, one per correction step.
PLAN_STYLES = {
    #                scheme, warmup, schedule, tuned hparams
    "kaplan": (SizeScheme.KAPLAN_NO_HEAD, WarmupStyle.KAPLAN_FIXED, "long-cosine", False),
    "head-fixed": (SizeScheme.LINEAR, WarmupStyle.KAPLAN_FIXED, "long-cosine", False),
    "warmup-fixed": (SizeScheme.LINEAR, WarmupStyle.MATCH_MODEL_SIZE, "long-cosine", False),
    "cosine": (SizeScheme.LINEAR, WarmupStyle.COSINE_CAPPED, "cosine", False),
    "tuned-constant": (SizeScheme.LINEAR, WarmupStyle.MATCH_MODEL_SIZE, "constant", True),
    "kaplan-adjusted": (SizeScheme.KAPLAN_NO_HEAD, WarmupStyle.KAPLAN_FIXED, "constant", True),
}


def _tuned_hparams(index: int, seed: int) -> HyperParams:
    _, lr, bs, b2 = TUNED_TABLE[index]
    return HyperParams(lr, bs, b2, seed)


def build_plan(style: str = "tuned-constant", grid: Optional[FlopGrid] = None,
               models: Optional[Sequence[ModelArch]] = None, rho_range=(1.0, 100.0), count: int = 7,
               seed: int = 0, scheme=None, warmup=None, hparams_for=None) -> ExperimentPlan:
    """Experiment plan for one of the named configurations in :data:`PLAN_STYLES`.

    ``scheme`` and ``warmup`` override the style's defaults. ``hparams_for``
    maps a model's grid index and arch to its :class:`HyperParams`.
    """
    if style not in PLAN_STYLES:
        raise ValueError(f"unknown plan style {style!r}; choose from {sorted(PLAN_STYLES)}")
    d_scheme, d_warmup, sched, tuned = PLAN_STYLES[style]
    scheme = SizeScheme.parse(scheme) if scheme is not None else d_scheme
    warmup = WarmupStyle(warmup) if warmup is not None else d_warmup
    grid = grid or FlopGrid()
    models = list(models) if models is not None else canonical_model_grid()
    index = {m: i for i, m in enumerate(models)}

    def hp(m):
        if hparams_for is not None:
            return hparams_for(index[m], m)
        if tuned and len(models) == len(TUNED_TABLE):
            return _tuned_hparams(index[m], seed)
        return HyperParams(DEFAULT_LR, KAPLAN_BATCH_SEQS, DEFAULT_BETA2, seed)

    per_model: dict[ModelArch, list[float]] = {}
    for C in grid.values:
        try:
            chosen = select_isoflop_models(float(C), models, scheme, rho_range, count)
        except ValueError:
            continue
        for m in chosen:
            per_model.setdefault(m, []).append(float(C))

    runs = []
    if sched == "cosine":
        for m, budgets in per_model.items():
            N = model_size(m, scheme)
            for C in budgets:
                D = C / (6.0 * N)
                w = warmup_tokens(N, warmup, D)
                k = int(round(math.log(C / grid.base, grid.factor)))
                runs.append(PlannedRun(f"{style}-l{m.depth}-d{m.width}-k{k}", m, hp(m),
                                       Schedule(ScheduleKind.COSINE, int(w), int(math.ceil(D)),
                                                COSINE_FINAL_FRACTION), (C,)))
        style_enum = ScheduleStyle.COSINE_PER_BUDGET
    else:
        for m, budgets in per_model.items():
            N = model_size(m, scheme)
            D = max(budgets) / (6.0 * N)
            w = int(warmup_tokens(N, warmup, D))
            if sched == "long-cosine":
                s = Schedule(ScheduleKind.COSINE, w, KAPLAN_DECAY_END_TOKENS, 0.0)
            else:
                s = Schedule(ScheduleKind.CONSTANT, w)
            runs.append(PlannedRun(f"{style}-l{m.depth}-d{m.width}", m, hp(m), s, tuple(budgets)))
        style_enum = ScheduleStyle.CONSTANT_REUSE
    runs.sort(key=lambda r: (model_size(r.arch), r.max_budget))
    return ExperimentPlan(grid, tuple(runs), style_enum, scheme, style)


def prune_plan(plan: ExperimentPlan, max_rho: float = 100.0) -> ExperimentPlan:
    """Drop budgets where a run would see more than ``max_rho`` tokens per parameter."""
    runs = []
    for r in plan.runs:
        N = model_size(r.arch, plan.scheme)
        keep = tuple(C for C in r.budgets if tokens_per_param(N, C) <= max_rho)
        if keep:
            runs.append(PlannedRun(r.run_id, r.arch, r.hparams, r.schedule, keep))
    return ExperimentPlan(plan.grid, tuple(runs), plan.schedule_style, plan.scheme, plan.name)


def drop_far_from_optimum(curve: IsoFlopCurve, margin: float = 1.0) -> IsoFlopCurve:
    """Remove points whose loss exceeds the curve's best loss by more than ``margin`` nats."""
    best = float(curve.loss.min())
    return curve.subset(curve.loss <= best + margin)


def curve_cost(curves: Sequence[IsoFlopCurve], style=ScheduleStyle.CONSTANT_REUSE) -> float:
    """Training cost implied by the points on ``curves``."""
    style = ScheduleStyle(style)
    if style is ScheduleStyle.COSINE_PER_BUDGET:
        return float(sum(c.C * len(c.points) for c in curves))
    longest: dict[float, float] = {}
    for c in curves:
        for p in c.points:
            longest[p.N] = max(longest.get(p.N, 0.0), c.C)
    return float(sum(longest.values()))


@dataclass(frozen=True)
class AccuracyPoint:
    max_flops: float
    budget: float
    exponent: float
    ci: tuple[float, float]
    rms_rel_err: float

    @property
    def ci_width(self) -> float:
        return self.ci[1] - self.ci[0]


def accuracy_vs_compute(curves: Sequence[IsoFlopCurve], reference: PowerLawFit, B: int = 1000, seed: int = 0,
                        style=ScheduleStyle.CONSTANT_REUSE, threads: Optional[int] = None,
                        estimates=None) -> list[AccuracyPoint]:
    """Refit the N* law on truncated FLOP grids and score each fit against ``reference``."""
    curves = sorted(curves, key=lambda c: c.C)
    if len(curves) < 3:
        raise ValueError("need at least 3 IsoFLOP curves")
    est = estimates if estimates is not None else estimate_many(curves, B, seed, threads)
    est = sorted(est, key=lambda e: e.C)
    full_C = np.array([c.C for c in curves])
    ref = reference.predict(full_C)
    out = []
    for K in range(2, len(curves)):
        sub = est[:K + 1]
        if sum(e.valid for e in sub) < 2:
            continue
        fit = power_law_ci(sub, reference.reference_flops)
        rms = float(np.sqrt(np.mean(((fit.predict(full_C) - ref) / ref) ** 2)))
        out.append(AccuracyPoint(curves[K].C, curve_cost(curves[:K + 1], style), fit.exponent,
                                 fit.ci_exponent, rms))
    return out
