"""Synthetic training runs drawn from ``L(N, D) = E + A N^-alpha + B D^-beta``.

The compute-optimal allocation of this surface under ``C = 6 N D`` has a
closed form, which makes it a ground truth for the whole estimation pipeline.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .accounting import SizeScheme, model_size
from .estimator import NoiseProfile, noise_sigma, resolve_profile
from .ingest import DEFAULT_LOG_INTERVAL, StepRecord, TrainingRun, ValRecord
from .planner import ExperimentPlan, PlannedRun, WarmupStyle, warmup_tokens


@dataclass(frozen=True)
class WarmupPenalty:
    """Loss inflation ``1 + magnitude * (1 - D/W)+`` while ``D`` is below the warmup length ``W``.

    ``W`` comes from each run's schedule unless ``style`` forces a rule.
    """

    magnitude: float = 0.5
    style: Optional[WarmupStyle] = None

    def __post_init__(self):
        if self.style is not None:
            object.__setattr__(self, "style", WarmupStyle(self.style))


@dataclass(frozen=True)
class SynthSpec:
    E: float = 1.69
    A: float = 406.4
    alpha: float = 0.34
    B: float = 410.7
    beta: float = 0.28
    warmup_penalty: Optional[WarmupPenalty] = None
    noise: Optional[NoiseProfile] = None
    seed: int = 0

    def __post_init__(self):
        if self.E < 0 or self.A <= 0 or self.B <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError("need E >= 0 and positive A, B, alpha, beta")

    def loss(self, N, D):
        N = np.asarray(N, dtype=float)
        D = np.asarray(D, dtype=float)
        return self.E + self.A * N ** (-self.alpha) + self.B * D ** (-self.beta)

    def to_dict(self) -> dict:
        d = {"E": self.E, "A": self.A, "alpha": self.alpha, "B": self.B, "beta": self.beta, "seed": self.seed}
        if self.warmup_penalty is not None:
            wp = self.warmup_penalty
            d["warmup_penalty"] = {"magnitude": wp.magnitude, "style": wp.style.value if wp.style else None}
        if self.noise is not None:
            d["noise"] = self.noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        base = PRESETS[d.pop("preset")] if "preset" in d else cls()
        wp = d.pop("warmup_penalty", None)
        noise = d.pop("noise", None)
        spec = replace(base, **{k: (int(v) if k == "seed" else float(v)) for k, v in d.items()})
        if wp is not None:
            style = wp.get("style")
            spec = replace(spec, warmup_penalty=WarmupPenalty(float(wp.get("magnitude", 0.5)),
                                                              WarmupStyle(style) if style else None))
        if noise is not None:
            spec = replace(spec, noise=resolve_profile(noise))
        return spec


def balanced_data_coefficient(A: float, alpha: float, beta: float, rho_star: float = 20.0) -> float:
    """Data-term coefficient that puts the optimum at ``rho_star`` tokens per parameter (alpha == beta only)."""
    if not math.isclose(alpha, beta):
        raise ValueError("closed form only holds for alpha == beta")
    return A * rho_star ** beta


PRESETS = {
    # Chinchilla parametric fit: a_true = 0.28 / 0.62
    "chinchilla": SynthSpec(1.69, 406.4, 0.34, 410.7, 0.28),
    # equal exponents, optimum at 20 tokens per parameter
    "symmetric": SynthSpec(1.69, 406.4, 0.3, balanced_data_coefficient(406.4, 0.3, 0.3), 0.3),
    # optimal loss decays as C^-0.1
    "tuned": SynthSpec(1.69, 50.0, 0.2, balanced_data_coefficient(50.0, 0.2, 0.2), 0.2),
}


def analytic_optimum(spec: SynthSpec, C: float):
    """(N*, D*, exponent, coefficient) of the surface's compute-optimal allocation at ``C``.

    Any warmup penalty on ``spec`` is ignored.
    """
    a = spec.beta / (spec.alpha + spec.beta)
    coeff = (spec.alpha * spec.A / (spec.beta * spec.B * 6.0 ** spec.beta)) ** (1.0 / (spec.alpha + spec.beta))
    n_star = coeff * C ** a
    return n_star, C / (6.0 * n_star), a, coeff


def optimal_loss(spec: SynthSpec, C):
    n, d, *_ = analytic_optimum(spec, np.asarray(C, dtype=float))
    return spec.loss(n, d)


def _penalty_factor(spec: SynthSpec, run: PlannedRun, N: float, D: np.ndarray) -> np.ndarray:
    wp = spec.warmup_penalty
    if wp is None:
        return np.ones_like(D)
    if wp.style is None:
        W = float(run.schedule.warmup_tokens)
    else:
        W = warmup_tokens(N, wp.style, float(np.max(D)))
    if W <= 0:
        return np.ones_like(D)
    return 1.0 + wp.magnitude * np.clip(1.0 - D / W, 0.0, None)


def run_rng(seed: int, run_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(run_id.encode())]))


def generate_run(spec: SynthSpec, run: PlannedRun, scheme=SizeScheme.LINEAR, dataset: str = "synthetic",
                 log_interval: int = DEFAULT_LOG_INTERVAL) -> TrainingRun:
    """One run's step and validation records.

    The run length is set by its largest budget with size counted under
    ``scheme``; the surface itself always uses the linear-layer size.
    Validation records land at the first step at or past each budget.
    """
    N_true = model_size(run.arch, SizeScheme.LINEAR)
    N_plan = model_size(run.arch, scheme)
    bt = run.hparams.batch_size_seqs * run.arch.seq_len
    total = run.max_budget / (6.0 * N_plan)
    n_steps = max(1, int(math.ceil(total / bt)))
    k = log_interval
    steps = np.arange(k, n_steps + 1, k)
    if steps.size == 0 or steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    starts = np.concatenate([[0], steps[:-1]])
    # logged value averages the interval; use its midpoint
    D_mid = 0.5 * (starts + steps) * bt
    L = spec.loss(N_true, D_mid) * _penalty_factor(spec, run, N_true, D_mid)

    val_steps = sorted({int(math.ceil(C / (6.0 * N_plan * bt) - 1e-9)) for C in run.budgets})
    val_steps = [max(1, min(s, n_steps)) for s in val_steps]
    val_steps = sorted(set(val_steps))
    D_val = np.array(val_steps, dtype=float) * bt
    Lv = spec.loss(N_true, D_val) * _penalty_factor(spec, run, N_true, D_val)

    if spec.noise is not None:
        rng = run_rng(spec.seed, run.run_id)
        L = L + noise_sigma(L, spec.noise) * rng.standard_normal(L.shape)
        Lv = Lv + noise_sigma(Lv, spec.noise) * rng.standard_normal(Lv.shape)
        L = np.maximum(L, 1e-6)
        Lv = np.maximum(Lv, 1e-6)

    records = tuple(StepRecord(int(s), int(s) * bt, float(l)) for s, l in zip(steps, L))
    vals = tuple(ValRecord(int(s) * bt, float(l), None) for s, l in zip(val_steps, Lv))
    return TrainingRun(run.run_id, dataset, run.arch, run.hparams, run.schedule, records, vals, k)


def generate_runs(spec: SynthSpec, plan: ExperimentPlan, dataset: str = "synthetic") -> list[TrainingRun]:
    """Synthetic runs for every entry in ``plan``; output is independent of generation order."""
    return [generate_run(spec, r, plan.scheme, dataset) for r in plan.runs]


def synthetic_sweep(spec: SynthSpec, sizes: Sequence[float], batches: Sequence[int], lrs: Sequence[float],
                    beta2s: Sequence[float] = (0.95, 0.99), rhos: Sequence[float] = (20.0,),
                    optimum=None, curvature: tuple[float, float] = (0.02, 0.03), seed: int = 0,
                    noise: float = 0.0):
    """Sweep fixture: surface loss plus a log-quadratic bowl in (batch, lr).

    ``optimum(N, rho)`` returns the planted (batch, lr) optimum; the bowl adds
    ``cb * ln(bs/bs*)^2 + cl * ln(lr/lr*)^2``. Not a model of optimizer
    dynamics, only a test surface with a known argmin.
    """
    from .hparam import SweepPoint

    rng = np.random.default_rng(seed)
    cb, cl = curvature
    if optimum is None:
        optimum = lambda N, rho: (0.0625 * N ** 0.4, 0.5 * N ** -0.33)   # noqa: E731
    out = []
    for N in sizes:
        for rho in rhos:
            base = float(spec.loss(N, rho * N))
            bs0, lr0 = optimum(N, rho)
            for b in batches:
                for lr in lrs:
                    for j, b2 in enumerate(beta2s):
                        bowl = cb * math.log(b / bs0) ** 2 + cl * math.log(lr / lr0) ** 2
                        loss = base + bowl + 0.001 * j
                        if noise:
                            loss += noise * rng.standard_normal()
                        out.append(SweepPoint(float(N), int(b), float(lr), float(b2), loss, float(rho)))
    return out
