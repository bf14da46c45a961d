"""End-to-end run: load or synthesize runs, build IsoFLOP curves, estimate N*,
fit the power law and the optimal-loss curve, and write tables and figures.

Every stage failure is re-raised as :class:`PipelineError` carrying the stage
name so callers can report it in machine-readable form.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .accounting import CHINCHILLA_FLOPS, SizeScheme
from .estimator import NStarEstimate, build_isoflop_curves, estimate_many, resolve_profile
from .ingest import load_sweep
from .lawfit import PowerLawFit, fit_saturating, power_law_ci
from .planner import FlopGrid, build_plan
from .signal import LossSource
from .svg import emit_svg
from .synth import SynthSpec, generate_runs

log = logging.getLogger(__name__)

FORMATS = ("csv", "json", "svg")
STAGES = ("config", "ingest", "curves", "estimate", "fit", "loss_fit", "report")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, exit_code: int = 1):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message
        self.exit_code = exit_code

    def to_dict(self) -> dict:
        return {"status": "error", "stage": self.stage, "message": self.message, "exit_code": self.exit_code}


@dataclass
class ReportSpec:
    output_dir: Path
    formats: tuple[str, ...] = FORMATS
    reference_flops: float = CHINCHILLA_FLOPS
    deterministic: bool = True

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        fm = tuple(self.formats)
        if not fm:
            raise ValueError("at least one output format is required")
        bad = [f for f in fm if f not in FORMATS]
        if bad:
            raise ValueError(f"unknown formats {bad}; choose from {FORMATS}")
        self.formats = fm


@dataclass
class PipelineConfig:
    report: ReportSpec
    runs_dir: Optional[Path] = None
    synth: Optional[dict] = None
    scheme: SizeScheme = SizeScheme.LINEAR
    profile: Optional[object] = None
    source: LossSource = LossSource.VALIDATION
    grid: FlopGrid = field(default_factory=FlopGrid)
    bootstrap: int = 1000
    seed: int = 0
    stage_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "PipelineConfig":
        known = {"runs_dir", "synth", "scheme", "profile", "source", "grid", "bootstrap", "seed",
                 "formats", "output_dir", "reference_flops", "deterministic", "stage_overrides"}
        extra = sorted(set(d) - known)
        if extra:
            log.warning("ignoring unknown config keys: %s", ", ".join(extra))
        if ("runs_dir" in d) == ("synth" in d):
            raise ValueError("config needs exactly one of 'runs_dir' or 'synth'")
        base_dir = Path(base_dir) if base_dir else Path.cwd()

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        g = d.get("grid", {})
        grid = FlopGrid.parse(g) if isinstance(g, str) else FlopGrid(
            float(g.get("base", 1.25e16)), float(g.get("factor", 2.0)), int(g.get("count", 12)))
        report = ReportSpec(resolve(d.get("output_dir", "report")), tuple(d.get("formats", FORMATS)),
                            float(d.get("reference_flops", CHINCHILLA_FLOPS)), bool(d.get("deterministic", True)))
        return cls(
            report=report,
            runs_dir=resolve(d["runs_dir"]) if "runs_dir" in d else None,
            synth=d.get("synth"),
            scheme=SizeScheme.parse(d.get("scheme", "linear")),
            profile=d.get("profile"),
            source=LossSource.parse(d.get("source", "validation")),
            grid=grid,
            bootstrap=int(d.get("bootstrap", 1000)),
            seed=int(d.get("seed", 0)),
            stage_overrides=dict(d.get("stage_overrides", {})),
        )


@dataclass
class PipelineResult:
    estimates: list
    fit: PowerLawFit
    loss_fit: Optional[object]
    curves: list
    files: list


def fmt_float(x) -> str:
    """Shortest round-trip text for a float; identical input gives identical bytes."""
    if isinstance(x, bool) or x is None:
        return str(x)
    if isinstance(x, int):
        return str(x)
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, int)) else v for v in r])
    return path


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "item"):
        return _json_safe(obj.item())
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")
    return path


ESTIMATE_HEADER = ("C", "n_star", "log_std", "omitted_fraction", "loss_star", "valid", "d_star", "rho_star")


def estimate_rows(estimates):
    return [(e.C, e.n_star, e.log_std, e.omitted_fraction, e.loss_star, int(e.valid), e.d_star, e.rho_star)
            for e in estimates]


def read_estimates(path) -> list[NStarEstimate]:
    """Estimates from a CSV written by :func:`write_csv`; bootstrap samples are not stored."""
    import numpy as np

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(NStarEstimate(
                C=float(row["C"]), n_star=float(row["n_star"]), log_std=float(row["log_std"]),
                samples=np.empty(0), omitted_fraction=float(row.get("omitted_fraction", 0) or 0),
                loss_star=float(row.get("loss_star", "nan") or "nan"),
                valid=str(row.get("valid", "1")).strip().lower() in ("1", "true", "yes")))
    if not out:
        raise ValueError(f"no estimates in {path}")
    return out


def _stage(name, exit_code=1):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except PipelineError:
                raise
            except (ValueError, RuntimeError, OSError, KeyError, TypeError) as exc:
                raise PipelineError(name, str(exc), exit_code) from exc
        return inner
    return wrap


@_stage("ingest", exit_code=2)
def _load_runs(cfg: PipelineConfig):
    ov = cfg.stage_overrides.get("plan", {})
    if cfg.runs_dir is not None:
        if not cfg.runs_dir.is_dir():
            raise FileNotFoundError(f"input directory not found: {cfg.runs_dir}")
        return load_sweep(cfg.runs_dir)
    spec = SynthSpec.from_dict(cfg.synth)
    plan = build_plan(ov.get("style", "tuned-constant"), cfg.grid, scheme=ov.get("scheme", cfg.scheme),
                      warmup=ov.get("warmup"), seed=cfg.seed)
    return generate_runs(spec, plan)


@_stage("curves")
def _curves(cfg, runs, profile):
    ov = cfg.stage_overrides.get("curves", {})
    rr = ov.get("rho_range", (1.0, 100.0))
    curves = build_isoflop_curves(runs, cfg.grid.values, cfg.scheme, ov.get("source", cfg.source), profile,
                                  tuple(rr) if rr is not None else None, int(ov.get("min_points", 3)))
    if len(curves) < 2:
        raise ValueError(f"only {len(curves)} IsoFLOP curve(s) could be built; need at least 2")
    return curves


@_stage("estimate")
def _estimate(cfg, curves):
    return estimate_many(curves, cfg.bootstrap, cfg.seed)


@_stage("fit")
def _fit(cfg, estimates):
    return power_law_ci(estimates, cfg.report.reference_flops)


@_stage("loss_fit")
def _loss_fit(estimates):
    pts = [(e.C, e.loss_star) for e in estimates if e.valid and math.isfinite(e.loss_star)]
    if len(pts) < 4:
        log.warning("only %d optimal-loss points; skipping saturating fit", len(pts))
        return None
    return fit_saturating(pts)


def figure_data(curves, estimates, fit: Optional[PowerLawFit], loss_fit):
    """Plain tables for every figure, all taken from stage outputs."""
    iso = {"curves": [{"C": c.C, "N": list(c.N), "loss": list(c.loss), "sigma": list(c.sigma)} for c in curves],
           "optima": [{"n_star": e.n_star, "loss_star": e.loss_star} for e in estimates if e.valid]}
    nstar = {"estimates": [{"C": e.C, "n_star": e.n_star, "log_std": e.log_std, "valid": e.valid}
                           for e in estimates],
             "fit": fit.to_dict() if fit is not None else None}
    opt = {"points": [{"C": e.C, "loss": e.loss_star} for e in estimates
                      if e.valid and math.isfinite(e.loss_star)],
           "fit": loss_fit.to_dict() if loss_fit is not None else None}
    return {"isoflop": iso, "nstar_fit": nstar, "opt_loss": opt}


@_stage("report")
def _report(cfg: PipelineConfig, curves, estimates, fit, loss_fit):
    rs = cfg.report
    rs.output_dir.mkdir(parents=True, exist_ok=True)
    files = []
    opt_rows = [(e.C, e.loss_star, int(e.valid)) for e in estimates]
    if "csv" in rs.formats:
        files.append(write_csv(rs.output_dir / "estimates.csv", ESTIMATE_HEADER, estimate_rows(estimates)))
        files.append(write_csv(rs.output_dir / "opt_loss.csv", ("C", "loss_star", "valid"), opt_rows))
        pts = [(c.C, p.N, p.loss, p.sigma) for c in curves for p in c.points]
        files.append(write_csv(rs.output_dir / "isoflop.csv", ("C", "N", "loss", "sigma"), pts))
    if "json" in rs.formats:
        files.append(write_json(rs.output_dir / "fit.json", fit.to_dict()))
        files.append(write_json(rs.output_dir / "loss_fit.json",
                                loss_fit.to_dict() if loss_fit is not None else {"skipped": "too few points"}))
    if "svg" in rs.formats:
        for name, data in figure_data(curves, estimates, fit, loss_fit).items():
            if name == "opt_loss" and not data["points"]:
                continue
            path = rs.output_dir / f"{name}.svg"
            path.write_text(emit_svg(name, data, rs.deterministic))
            files.append(path)
    return files


def run_pipeline(config, base_dir=None) -> PipelineResult:
    """Run every stage for ``config`` (a dict, a :class:`PipelineConfig`, or a JSON path)."""
    if not isinstance(config, PipelineConfig):
        try:
            if isinstance(config, (str, Path)):
                path = Path(config)
                base_dir = base_dir or path.parent
                config = json.loads(path.read_text())
            config = PipelineConfig.from_dict(config, base_dir)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise PipelineError("config", str(exc), 2) from exc
    cfg = config
    try:
        profile = resolve_profile(cfg.profile) if cfg.profile is not None else None
    except (ValueError, OSError, KeyError) as exc:
        raise PipelineError("config", str(exc), 2) from exc
    runs = _load_runs(cfg)
    curves = _curves(cfg, runs, profile)
    estimates = _estimate(cfg, curves)
    fit = _fit(cfg, estimates)
    loss_fit = _loss_fit(estimates)
    files = _report(cfg, curves, estimates, fit, loss_fit)
    return PipelineResult(estimates, fit, loss_fit, curves, files)
