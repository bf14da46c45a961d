"""Hyperparameter sweep analysis.

Optimal batch size and learning rate per model size come from a two-stage
interpolation: for each batch size, a log-log Akima fit of loss against
learning rate gives that batch size's best learning rate and loss; a second
fit of those losses against batch size gives the optimal batch size, and the
learning rate is read off by interpolating the per-batch optima there.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .estimator import IsoFlopCurve, estimate_many
from .interp import InterpMode, akima_fit, minimize_interpolant
from .lawfit import PowerLawFit, power_law_ci, weighted_loglog_regression

BETA2_BATCH_THRESHOLD = 256
RHO_MIN = 2.0
RHO_SWEEP_MAX = 20.0
RHO_MIRROR_MAX = 30.0

# (N in millions, learning rate, batch size in sequences, beta2) for the 16 grid models.
# The 28M/37M/57M rates are the values the laws call for (0.0074, 0.0068, 0.0059),
# not the 0.0051, 0.0051 and 0.0047 that a mis-rounded table would give.
TUNED_TABLE = (
    (5, 0.013, 20, 0.99), (7, 0.011, 28, 0.99), (9, 0.011, 32, 0.99), (15, 0.009, 44, 0.99),
    (22, 0.008, 56, 0.99), (28, 0.0074, 64, 0.99), (37, 0.0068, 80, 0.99), (57, 0.0059, 104, 0.99),
    (84, 0.0051, 128, 0.99), (108, 0.0047, 160, 0.99), (149, 0.0043, 192, 0.99),
    (220, 0.0038, 256, 0.95), (347, 0.0032, 320, 0.95), (455, 0.003, 448, 0.95),
    (611, 0.0027, 512, 0.95), (901, 0.0024, 640, 0.95),
)
TUNED_TABLE_AS_RUN = {28: 0.0051, 37: 0.0051, 57: 0.0047}


@dataclass(frozen=True)
class SweepPoint:
    N: float
    batch_size_seqs: int
    lr: float
    beta2: float
    final_loss: float
    tokens_per_param: float = 20.0


@dataclass(frozen=True)
class LRSearch:
    lr_star: float
    loss_star: float
    at_edge: bool


@dataclass(frozen=True)
class HParamOptimum:
    N: float
    bs_star: float
    lr_star: float
    loss_star: float
    bs_at_edge: bool
    lr_at_edge: bool
    per_batch: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class HParamLaws:
    """``bs(N) = bs_law[0] * N**bs_law[1]`` and likewise for the learning rate."""

    bs_law: tuple[float, float]
    lr_law: tuple[float, float]

    def batch_size(self, N):
        return self.bs_law[0] * np.asarray(N, dtype=float) ** self.bs_law[1]

    def learning_rate(self, N):
        return self.lr_law[0] * np.asarray(N, dtype=float) ** self.lr_law[1]

    def to_dict(self) -> dict:
        return {"bs_coefficient": self.bs_law[0], "bs_exponent": self.bs_law[1],
                "lr_coefficient": self.lr_law[0], "lr_exponent": self.lr_law[1]}

    @classmethod
    def from_dict(cls, d: dict) -> "HParamLaws":
        return cls((float(d["bs_coefficient"]), float(d["bs_exponent"])),
                   (float(d["lr_coefficient"]), float(d["lr_exponent"])))


def _same(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-9)


def _select(sweep, N, rho=None):
    return [p for p in sweep if _same(p.N, N) and (rho is None or _same(p.tokens_per_param, rho))]


def _min_over_beta2(points) -> dict[float, float]:
    best: dict[float, float] = {}
    for p in points:
        if p.lr not in best or p.final_loss < best[p.lr]:
            best[p.lr] = p.final_loss
    return best


def optimal_lr_per_batch(sweep: Sequence[SweepPoint], N: float, batch: int,
                         rho: Optional[float] = None) -> LRSearch:
    """Best learning rate for one (model size, batch size) cell of the sweep."""
    pts = [p for p in _select(sweep, N, rho) if p.batch_size_seqs == batch]
    best = _min_over_beta2(pts)
    if len(best) < 3:
        raise ValueError(f"need at least 3 learning rates for N={N:g}, batch={batch}; got {len(best)}")
    f = akima_fit(sorted(best.items()), InterpMode.LOG_LOG)
    m = minimize_interpolant(f)
    return LRSearch(m.x, m.value, m.at_edge)


def optimal_hparams(sweep: Sequence[SweepPoint], N: float, rho: Optional[float] = None) -> HParamOptimum:
    pts = _select(sweep, N, rho)
    batches = sorted({p.batch_size_seqs for p in pts})
    stage1 = {}
    for b in batches:
        stage1[b] = optimal_lr_per_batch(pts, N, b)
    if len(stage1) < 3:
        raise ValueError(f"need at least 3 batch sizes for N={N:g}; got {len(stage1)}")
    bs = np.array(sorted(stage1), dtype=float)
    losses = np.array([stage1[b].loss_star for b in sorted(stage1)])
    lrs = np.array([stage1[b].lr_star for b in sorted(stage1)])
    m = minimize_interpolant(akima_fit(np.column_stack([bs, losses]), InterpMode.LOG_LOG))
    lr_curve = akima_fit(np.column_stack([bs, lrs]), InterpMode.LOG_LOG)
    lr_star = float(lr_curve(m.x))
    # the stage-1 edge flag of the batch sizes bracketing the optimum
    j = int(np.clip(np.searchsorted(bs, m.x), 1, len(bs) - 1))
    nearest = bs[j - 1] if abs(math.log(m.x / bs[j - 1])) <= abs(math.log(bs[j] / m.x)) else bs[j]
    return HParamOptimum(N, m.x, lr_star, m.value, m.at_edge, stage1[int(nearest)].at_edge, stage1)


def fit_hparam_laws(optima) -> HParamLaws:
    """Unweighted log-log fits of optimal batch size and learning rate against N.

    ``optima`` holds (N, bs_star, lr_star) triples or :class:`HParamOptimum`.
    """
    rows = [(o.N, o.bs_star, o.lr_star) if isinstance(o, HParamOptimum) else tuple(o) for o in optima]
    if len(rows) < 3:
        raise ValueError("need at least 3 model sizes")
    N, bs, lr = (np.array(c, dtype=float) for c in zip(*rows))
    b0, b1, *_ = weighted_loglog_regression(N, bs)
    l0, l1, *_ = weighted_loglog_regression(N, lr)
    if b1 <= 0 or l1 >= 0:
        warnings.warn(f"unexpected hyperparameter trends: bs exponent {b1:.3f}, lr exponent {l1:.3f}")
    return HParamLaws((math.exp(b0), b1), (math.exp(l0), l1))


def round_hparams(bs: float, lr: float, gpu_count: int = 1) -> tuple[int, float]:
    """Batch size to the nearest positive multiple of ``gpu_count`` (ties up); lr to 2 significant digits."""
    if bs <= 0 or lr <= 0:
        raise ValueError("batch size and learning rate must be positive")
    g = int(gpu_count)
    mult = max(1, math.floor(bs / g + 0.5))
    return mult * g, float(f"{lr:.2g}")


def select_beta2(batch_size_seqs: int) -> float:
    return 0.99 if batch_size_seqs < BETA2_BATCH_THRESHOLD else 0.95


def tuned_table(laws: HParamLaws, sizes: Sequence[float], gpu_count: int = 4) -> list[dict]:
    rows = []
    for N in sizes:
        bs, lr = round_hparams(float(laws.batch_size(N)), float(laws.learning_rate(N)), gpu_count)
        rows.append({"N": float(N), "lr": lr, "batch_size": bs, "beta2": select_beta2(bs)})
    return rows


def sweep_points_from_runs(runs, rhos: Sequence[float] = (20.0,), scheme="linear",
                           source="train") -> list[SweepPoint]:
    """Turn sweep runs into :class:`SweepPoint` records at ``D = rho * N`` tokens.

    The loss is fetched with the same log-linear rule used for IsoFLOP curves;
    (run, rho) pairs with no nearby sample are skipped.
    """
    from .accounting import model_size
    from .signal import loss_at_flops

    out = []
    for run in runs:
        N = model_size(run.arch, scheme)
        for rho in rhos:
            loss = loss_at_flops(run, 6.0 * N * rho * N, scheme, source)
            if loss is None:
                continue
            out.append(SweepPoint(N, run.hparams.batch_size_seqs, run.hparams.learning_rate,
                                  run.hparams.beta2, loss, float(rho)))
    return out


def interpolated_loss(sweep: Sequence[SweepPoint], N: float, bs: float, lr: float,
                      rho: Optional[float] = None) -> float:
    """Loss at an off-grid (bs, lr) by the same two-stage log-log interpolation.

    Queries outside the swept ranges are clamped to the nearest swept value.
    """
    pts = _select(sweep, N, rho)
    by_batch = defaultdict(list)
    for p in pts:
        by_batch[p.batch_size_seqs].append(p)
    stage = []
    for b in sorted(by_batch):
        best = _min_over_beta2(by_batch[b])
        if len(best) < 2:
            continue
        f = akima_fit(sorted(best.items()), InterpMode.LOG_LOG)
        lo, hi = f.bounds
        stage.append((b, float(f(min(max(lr, lo), hi)))))
    if len(stage) < 2:
        raise ValueError(f"not enough sweep data at N={N:g}")
    g = akima_fit(stage, InterpMode.LOG_LOG)
    lo, hi = g.bounds
    return float(g(min(max(bs, lo), hi)))


@dataclass(frozen=True)
class IdealTuningResult:
    excess: dict                       # N -> (rho grid, raw excess, filtered excess)
    baseline_curves: list
    adjusted_curves: list
    baseline_fit: PowerLawFit
    adjusted_fit: PowerLawFit
    baseline_estimates: list = field(repr=False, default_factory=list)
    adjusted_estimates: list = field(repr=False, default_factory=list)

    @property
    def exponent_shift(self) -> float:
        return self.adjusted_fit.exponent - self.baseline_fit.exponent


def median_filter_rho(rhos: np.ndarray, values: np.ndarray, width: float = 2.0) -> np.ndarray:
    """Median of ``values`` over samples with rho' in [rho - width/2, rho + width/2]."""
    rhos = np.asarray(rhos, dtype=float)
    values = np.asarray(values, dtype=float)
    half = width / 2.0
    return np.array([np.median(values[np.abs(rhos - r) <= half + 1e-12]) for r in rhos])


def excess_loss_table(sweep: Sequence[SweepPoint], chosen: HParamLaws, gpu_count: Optional[int] = None):
    """Per swept N: rho samples, raw excess loss of ``chosen`` over the optimum, and its median-filtered form."""
    table = {}
    for N in sorted({p.N for p in sweep}):
        rhos = sorted({p.tokens_per_param for p in sweep
                       if _same(p.N, N) and RHO_MIN <= p.tokens_per_param <= RHO_SWEEP_MAX})
        if len(rhos) < 2:
            raise ValueError(f"insufficient rho coverage for N={N:g}: {rhos}")
        bs, lr = float(chosen.batch_size(N)), float(chosen.learning_rate(N))
        if gpu_count:
            bs, lr = round_hparams(bs, lr, gpu_count)
        raw = []
        for rho in rhos:
            best = optimal_hparams(sweep, N, rho).loss_star
            raw.append(interpolated_loss(sweep, N, bs, lr, rho) - best)
        rhos_a = np.array(rhos)
        raw_a = np.array(raw)
        table[N] = (rhos_a, raw_a, median_filter_rho(rhos_a, raw_a))
    return table


def excess_at(table: dict, N: float, rho: float) -> Optional[float]:
    """Smoothed excess loss at (N, rho); None outside the swept N range or rho in [2, 30]."""
    if not RHO_MIN <= rho <= RHO_MIRROR_MAX:
        return None
    Ns = np.array(sorted(table))
    if N < Ns[0] * (1 - 1e-9) or N > Ns[-1] * (1 + 1e-9):
        return None
    r = 2 * RHO_SWEEP_MAX - rho if rho > RHO_SWEEP_MAX else rho
    per_n = np.array([np.interp(r, table[n][0], table[n][2]) for n in Ns])
    if Ns.size == 1:
        return float(per_n[0])
    return float(np.interp(math.log(N), np.log(Ns), per_n))


def ideal_tuning_adjust(sweep: Sequence[SweepPoint], curves: Sequence[IsoFlopCurve], chosen: HParamLaws,
                        B: int = 1000, seed: int = 0, max_flops: float = 1.25e16 * 2 ** 7,
                        gpu_count: Optional[int] = None, threads: Optional[int] = None) -> IdealTuningResult:
    """Subtract estimated excess loss from suboptimal tuning and refit the N* law.

    Only budgets up to ``max_flops`` and points with model size inside the
    swept range and 2 <= rho <= 30 take part; the unadjusted fit over the
    same points is returned alongside for comparison.
    """
    table = excess_loss_table(sweep, chosen, gpu_count)
    base, adj = [], []
    for c in curves:
        if c.C > max_flops * (1 + 1e-9):
            continue
        keep, deltas = [], []
        for p in c.points:
            d = excess_at(table, p.N, c.C / (6.0 * p.N * p.N))
            keep.append(d is not None)
            if d is not None:
                deltas.append(d)
        if sum(keep) < 3:
            continue
        sub = c.subset(keep)
        base.append(sub)
        adj.append(sub.with_losses(sub.loss - np.array(deltas)))
    if len(base) < 2:
        raise ValueError("fewer than 2 IsoFLOP curves inside the adjustable range")
    est_b = estimate_many(base, B, seed, threads)
    est_a = estimate_many(adj, B, seed, threads)
    return IdealTuningResult(table, base, adj, power_law_ci(est_b), power_law_ci(est_a), est_b, est_a)
