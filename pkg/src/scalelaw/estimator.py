"""Noise model and bootstrap noise-and-interpolate estimation of N*(C) and L*(C).

Each bootstrap replicate perturbs every loss on an IsoFLOP curve with
independent Gaussian noise, fits a log-log Akima spline of loss against model
size and records the minimizer. The replicate population gives the point
estimate (median), a log-space spread, and samples for downstream power-law
confidence intervals.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .accounting import SizeScheme, model_size, tokens_per_param
from .ingest import ScheduleKind, TrainingRun
from .interp import InterpMode, batch_minimize, default_resolution
from .signal import LossPoint, LossSeries, LossSource, loss_at_flops, run_samples, smooth_loss

LOG_STD_FLOOR = math.log(math.sqrt(2.0)) / 3.0
EDGE_FRACTION = 0.5


@dataclass(frozen=True)
class NoiseProfile:
    """Loss-dependent noise level.

    ``sigma`` is ``sigma_lo`` at or below ``loss_lo``, ``sigma_hi`` at or above
    ``loss_hi``, and log-linear in the loss in between.
    """

    loss_lo: float
    sigma_lo: float
    loss_hi: float
    sigma_hi: float

    def __post_init__(self):
        if not self.loss_lo < self.loss_hi:
            raise ValueError("loss_lo must be below loss_hi")
        if not 0 < self.sigma_lo <= self.sigma_hi:
            raise ValueError("need 0 < sigma_lo <= sigma_hi")

    def __call__(self, loss):
        return noise_sigma(loss, self)

    def to_dict(self) -> dict:
        return {"loss_lo": self.loss_lo, "sigma_lo": self.sigma_lo,
                "loss_hi": self.loss_hi, "sigma_hi": self.sigma_hi}


REFINEDWEB = NoiseProfile(3.0, 0.002, 7.0, 0.05)
OPENWEBTEXT2 = NoiseProfile(3.0, 0.01, 6.0, 0.1)
PROFILES = {"refinedweb": REFINEDWEB, "rw": REFINEDWEB,
            "openwebtext2": OPENWEBTEXT2, "owt2": OPENWEBTEXT2}


def resolve_profile(spec) -> NoiseProfile:
    """A profile from an instance, a preset name, a mapping, or a JSON file path."""
    if isinstance(spec, NoiseProfile):
        return spec
    if isinstance(spec, dict):
        return NoiseProfile(**{k: float(v) for k, v in spec.items()})
    key = str(spec).strip().lower()
    if key in PROFILES:
        return PROFILES[key]
    path = Path(spec)
    if path.is_file():
        with open(path) as fh:
            return resolve_profile(json.load(fh))
    raise ValueError(f"unknown noise profile {spec!r}")


def noise_sigma(loss, profile: NoiseProfile):
    loss = np.asarray(loss, dtype=float)
    t = np.clip((loss - profile.loss_lo) / (profile.loss_hi - profile.loss_lo), 0.0, 1.0)
    out = np.exp(math.log(profile.sigma_lo) + t * (math.log(profile.sigma_hi) - math.log(profile.sigma_lo)))
    return float(out) if out.ndim == 0 else out


def calibrate_noise(seed_groups: Sequence[Sequence[TrainingRun]], sigma_min: float = 1e-3,
                    p: float = 0.05) -> NoiseProfile:
    """Fit ``log sigma = c0 + c1 * loss`` to cross-seed spread of smoothed training loss.

    Each group holds runs that differ only in seed. Spread is measured at
    token counts shared by every run of a group, after warmup.
    """
    means, stds = [], []
    for g, group in enumerate(seed_groups):
        if len(group) < 2:
            raise ValueError(f"seed group {g} has fewer than 2 runs")
        series = [smooth_loss(LossSeries.from_run(r), p=p, k=r.log_interval,
                              tokens_per_step=r.batch_tokens) for r in group]
        warm = max(r.schedule.warmup_tokens for r in group)
        common = None
        for r in group:
            t = np.array([s.tokens for s in r.steps], dtype=float)
            t = t[t > warm]
            common = t if common is None else np.intersect1d(common, t)
        if common is None or common.size == 0:
            raise ValueError(f"seed group {g} has no post-warmup overlap")
        mat = []
        for r, s in zip(group, series):
            raw_tokens = np.array([x.tokens for x in r.steps], dtype=float)
            idx = np.searchsorted(raw_tokens, common)
            mat.append(s.losses[idx])
        mat = np.asarray(mat)
        means.append(mat.mean(axis=0))
        stds.append(mat.std(axis=0, ddof=1))
    mean = np.concatenate(means)
    std = np.concatenate(stds)
    lo, hi = float(mean.min()), float(mean.max())
    if hi <= lo:
        hi = lo + 1e-6
    ok = std > 0
    if ok.sum() >= 2 and np.ptp(mean[ok]) > 0:
        c1, c0 = np.polyfit(mean[ok], np.log(std[ok]), 1)
        s_lo, s_hi = math.exp(c0 + c1 * lo), math.exp(c0 + c1 * hi)
    elif ok.any():
        s_lo = s_hi = float(np.exp(np.mean(np.log(std[ok]))))
    else:
        s_lo = s_hi = sigma_min
    s_lo, s_hi = max(s_lo, sigma_min), max(s_hi, sigma_min)
    if s_hi < s_lo:
        # decreasing spread would break the profile ordering; flatten it
        s_lo = s_hi = math.sqrt(s_lo * s_hi)
    return NoiseProfile(lo, s_lo, hi, s_hi)


@dataclass(frozen=True)
class IsoFlopCurve:
    C: float
    points: tuple[LossPoint, ...]

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.N))
        object.__setattr__(self, "points", pts)
        Ns = [p.N for p in pts]
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ValueError("IsoFLOP curve model sizes must be distinct")

    @property
    def N(self) -> np.ndarray:
        return np.array([p.N for p in self.points])

    @property
    def loss(self) -> np.ndarray:
        return np.array([p.loss for p in self.points])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([p.sigma for p in self.points])

    def with_sigma(self, profile: NoiseProfile) -> "IsoFlopCurve":
        return IsoFlopCurve(self.C, tuple(replace(p, sigma=noise_sigma(p.loss, profile)) for p in self.points))

    def with_losses(self, losses) -> "IsoFlopCurve":
        return IsoFlopCurve(self.C, tuple(replace(p, loss=float(l)) for p, l in zip(self.points, losses)))

    def subset(self, mask) -> "IsoFlopCurve":
        return IsoFlopCurve(self.C, tuple(p for p, keep in zip(self.points, mask) if keep))


def serves_budget(run: TrainingRun, C: float, scheme=SizeScheme.LINEAR) -> bool:
    """Whether ``run`` can report a loss at budget ``C``.

    A cosine run that trains to the end of its decay only serves its own
    budget; runs with a constant or unfinished schedule serve any budget.
    """
    sch = run.schedule
    if sch.kind is not ScheduleKind.COSINE:
        return True
    end = sch.decay_end_tokens
    if run.total_tokens < 0.9 * end:
        return True
    target = C / (6.0 * model_size(run.arch, scheme))
    return abs(target - end) <= 0.1 * end


def build_isoflop_curves(runs: Iterable[TrainingRun], budgets: Iterable[float],
                         scheme=SizeScheme.LINEAR, source=LossSource.VALIDATION,
                         profile=None,
                         rho_range: Optional[tuple[float, float]] = (1.0, 100.0),
                         min_points: int = 3, p: float = 0.05) -> list[IsoFlopCurve]:
    """Extract one IsoFLOP curve per budget from a set of runs.

    Points outside ``rho_range`` (tokens per parameter) are dropped, duplicate
    model sizes keep their lowest loss, and budgets with fewer than
    ``min_points`` points are skipped.
    """
    scheme = SizeScheme.parse(scheme)
    source = LossSource.parse(source)
    if profile is not None and not isinstance(profile, NoiseProfile):
        profile = resolve_profile(profile)
    runs = list(runs)
    cache = {}
    curves = []
    for C in budgets:
        best: dict[float, float] = {}
        for run in runs:
            N = model_size(run.arch, scheme)
            if rho_range is not None:
                rho = tokens_per_param(N, C)
                if not rho_range[0] <= rho <= rho_range[1]:
                    continue
            if not serves_budget(run, C, scheme):
                continue
            if run.run_id not in cache:
                try:
                    cache[run.run_id] = run_samples(run, source, p)
                except ValueError:
                    cache[run.run_id] = None
            if cache[run.run_id] is None:
                continue
            loss = loss_at_flops(run, C, scheme, source, p, _samples=cache[run.run_id])
            if loss is None:
                continue
            if N not in best or loss < best[N]:
                best[N] = loss
        if len(best) < min_points:
            continue
        pts = tuple(LossPoint(N, float(C), l, noise_sigma(l, profile) if profile else 0.0)
                    for N, l in sorted(best.items()))
        curves.append(IsoFlopCurve(float(C), pts))
    return curves


@dataclass(frozen=True)
class NStarEstimate:
    C: float
    n_star: float
    log_std: float
    samples: np.ndarray = field(repr=False)
    omitted_fraction: float
    loss_star: float
    valid: bool
    all_samples: Optional[np.ndarray] = field(default=None, repr=False)
    edge_mask: Optional[np.ndarray] = field(default=None, repr=False)
    loss_samples: Optional[np.ndarray] = field(default=None, repr=False)
    loss_log_std: float = float("nan")

    @property
    def d_star(self) -> float:
        return self.C / (6.0 * self.n_star)

    @property
    def rho_star(self) -> float:
        return self.C / (6.0 * self.n_star ** 2)


@dataclass(frozen=True)
class LossStarEstimate:
    C: float
    loss_star: float
    log_std: float
    samples: np.ndarray = field(repr=False)
    omitted_fraction: float
    valid: bool


def _curve_key(C: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(C)))[0]


def replicate_noise(seed: int, C: float, B: int, n: int) -> np.ndarray:
    """Standard normal draws of shape (B, n) for one curve.

    The stream is keyed by (seed, budget), so a curve's replicates do not
    depend on which other curves are processed or in what order.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _curve_key(C)])
    return np.random.Generator(np.random.Philox(ss)).standard_normal((B, n))


def bootstrap_minima(curve: IsoFlopCurve, B: int, seed: int, resolution: Optional[int] = None):
    """Per-replicate (ln argmin, ln min, edge flag) arrays for ``curve``."""
    n = len(curve.points)
    if n < 3:
        raise ValueError("need at least 3 points on an IsoFLOP curve")
    sigma = curve.sigma
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    z = replicate_noise(seed, curve.C, B, n)
    y = curve.loss[None, :] + sigma[None, :] * z
    y = np.maximum(y, 1e-12)
    xk = np.log(curve.N)
    yk = np.log(y)
    if resolution is None:
        resolution = default_resolution(float(xk[-1] - xk[0]), InterpMode.LOG_LOG)
    xs, fs, _ = batch_minimize(xk, yk, resolution)
    edge = (xs - xk[0] < EDGE_FRACTION * (xk[1] - xk[0])) | (xk[-1] - xs < EDGE_FRACTION * (xk[-1] - xk[-2]))
    return xs, fs, edge


def _summarize(values: np.ndarray, edge: np.ndarray, floor: float):
    B = values.shape[0]
    omitted = float(edge.sum()) / B
    kept = values[~edge]
    if kept.size == 0:
        return float(np.median(values)), math.inf, omitted, kept
    spread = float(np.std(kept)) if kept.size > 1 else 0.0
    log_std = max(spread, floor) / (1.0 - omitted)
    return float(np.median(kept)), log_std, omitted, kept


def estimate_nstar(curve: IsoFlopCurve, B: int = 1000, seed: int = 0,
                   resolution: Optional[int] = None, floor: float = LOG_STD_FLOOR) -> NStarEstimate:
    """Bootstrap estimate of the compute-optimal model size on one IsoFLOP curve."""
    if B < 1:
        raise ValueError("bootstrap count must be positive")
    xs, fs, edge = bootstrap_minima(curve, B, seed, resolution)
    med, log_std, omitted, kept = _summarize(xs, edge, floor)
    kept_f = fs[~edge] if (~edge).any() else fs
    loss_spread = float(np.std(kept_f)) if kept_f.size > 1 else 0.0
    return NStarEstimate(
        C=curve.C,
        n_star=math.exp(med),
        log_std=log_std,
        samples=np.exp(kept),
        omitted_fraction=omitted,
        loss_star=math.exp(float(np.median(kept_f))),
        valid=omitted <= 0.5,
        all_samples=np.exp(xs),
        edge_mask=edge,
        loss_samples=np.exp(fs),
        loss_log_std=loss_spread,
    )


def min_loss_at(curve: IsoFlopCurve, B: int = 1000, seed: int = 0,
                resolution: Optional[int] = None) -> LossStarEstimate:
    """Bootstrap estimate of the minimum loss attainable at the curve's budget."""
    xs, fs, edge = bootstrap_minima(curve, B, seed, resolution)
    omitted = float(edge.sum()) / B
    kept = fs[~edge] if (~edge).any() else fs
    spread = float(np.std(kept)) if kept.size > 1 else 0.0
    return LossStarEstimate(curve.C, math.exp(float(np.median(kept))), spread, np.exp(kept),
                            omitted, omitted <= 0.5)


def worker_count(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get("SCALELAW_THREADS", "1") or 1)
    return max(1, int(threads))


def estimate_many(curves: Sequence[IsoFlopCurve], B: int = 1000, seed: int = 0,
                  threads: Optional[int] = None, **kw) -> list[NStarEstimate]:
    """:func:`estimate_nstar` over several curves; output order follows ``curves``."""
    n = worker_count(threads)
    if n == 1 or len(curves) < 2:
        return [estimate_nstar(c, B, seed, **kw) for c in curves]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda c: estimate_nstar(c, B, seed, **kw), curves))
