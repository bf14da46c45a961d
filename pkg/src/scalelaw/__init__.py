"""Compute-optimal scaling-law analysis: FLOP accounting, IsoFLOP curve
estimation with a noise-and-interpolate bootstrap, power-law fits,
hyperparameter sweep analysis, experiment planning and synthetic runs."""

from .accounting import (CHINCHILLA_FLOPS, SizeScheme, canonical_model_grid, grid_table, model_size,
                         tokens_for_budget, tokens_per_param, train_flops)
from .estimator import (OPENWEBTEXT2, REFINEDWEB, IsoFlopCurve, NoiseProfile, NStarEstimate,
                        build_isoflop_curves, calibrate_noise, estimate_many, estimate_nstar, min_loss_at,
                        noise_sigma, resolve_profile)
from .hparam import (HParamLaws, SweepPoint, fit_hparam_laws, ideal_tuning_adjust, optimal_hparams,
                     round_hparams, select_beta2)
from .ingest import HyperParams, ModelArch, Schedule, ScheduleKind, TrainingRun, load_run, load_sweep, write_run
from .interp import InterpMode, akima_fit, minimize_interpolant
from .lawfit import (PowerLawFit, SaturatingFit, fit_power_law, fit_power_law_ci, fit_saturating,
                     power_law_ci)
from .pipeline import PipelineError, run_pipeline
from .planner import ExperimentPlan, FlopGrid, ScheduleStyle, WarmupStyle, build_plan, experiment_cost
from .signal import LossSource, loss_at_flops, smooth_loss
from .svg import emit_svg
from .synth import PRESETS, SynthSpec, WarmupPenalty, analytic_optimum, generate_run, generate_runs

__version__ = "0.1.0"

__all__ = [
    "CHINCHILLA_FLOPS",
    "ExperimentPlan",
    "FlopGrid",
    "HParamLaws",
    "HyperParams",
    "InterpMode",
    "IsoFlopCurve",
    "LossSource",
    "ModelArch",
    "NStarEstimate",
    "NoiseProfile",
    "OPENWEBTEXT2",
    "PRESETS",
    "PipelineError",
    "PowerLawFit",
    "REFINEDWEB",
    "SaturatingFit",
    "Schedule",
    "ScheduleKind",
    "ScheduleStyle",
    "SizeScheme",
    "SweepPoint",
    "SynthSpec",
    "TrainingRun",
    "WarmupPenalty",
    "WarmupStyle",
    "akima_fit",
    "analytic_optimum",
    "build_isoflop_curves",
    "build_plan",
    "calibrate_noise",
    "canonical_model_grid",
    "emit_svg",
    "estimate_many",
    "estimate_nstar",
    "experiment_cost",
    "fit_hparam_laws",
    "fit_power_law",
    "fit_power_law_ci",
    "fit_saturating",
    "generate_run",
    "generate_runs",
    "grid_table",
    "ideal_tuning_adjust",
    "load_run",
    "load_sweep",
    "loss_at_flops",
    "min_loss_at",
    "minimize_interpolant",
    "model_size",
    "noise_sigma",
    "optimal_hparams",
    "power_law_ci",
    "resolve_profile",
    "round_hparams",
    "run_pipeline",
    "select_beta2",
    "smooth_loss",
    "tokens_for_budget",
    "tokens_per_param",
    "train_flops",
    "write_run",
]

