"""``scalelaw`` command line.

Global flags (``--seed``, ``--bootstrap``, ``--scheme``, ``--profile``,
``--deterministic``) are accepted before or after the subcommand.
Tables go to stdout as CSV or JSON unless ``--out`` names a file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .accounting import CHINCHILLA_FLOPS, SizeScheme, grid_table, model_size
from .estimator import build_isoflop_curves, estimate_many, resolve_profile
from .ingest import IngestError, load_run, load_sweep, write_run
from .lawfit import fit_power_law, fit_saturating, power_law_ci
from .pipeline import (ESTIMATE_HEADER, PipelineError, estimate_rows, fmt_float, read_estimates,
                       run_pipeline, write_csv, _json_safe)
from .planner import (PLAN_STYLES, ExperimentPlan, FlopGrid, ScheduleStyle, accuracy_vs_compute, build_plan,
                      experiment_cost)
from .signal import loss_at_flops
from .svg import emit_svg
from .synth import PRESETS, SynthSpec, generate_runs

log = logging.getLogger("scalelaw")

GLOBAL_DEFAULTS = {"seed": 0, "bootstrap": 1000, "scheme": "linear", "profile": None, "deterministic": False}


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda k: argparse.SUPPRESS) if suppress else GLOBAL_DEFAULTS.get
    p.add_argument("--seed", type=int, default=d("seed"), help="base RNG seed")
    p.add_argument("--bootstrap", type=int, default=d("bootstrap"), metavar="B", help="bootstrap replicates")
    p.add_argument("--scheme", choices=[s.value for s in SizeScheme], default=d("scheme"),
                   help="model-size accounting")
    p.add_argument("--profile", default=d("profile"),
                   help="noise profile: refinedweb, openwebtext2 or a JSON file")
    p.add_argument("--deterministic", action="store_true", default=d("deterministic"),
                   help="omit timestamps from SVG output")


def _emit_table(header, rows, out, fmt="csv"):
    if fmt == "json":
        text = json.dumps(_json_safe([dict(zip(header, r)) for r in rows]), indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, int)) else v for v in r])
        text = buf.getvalue()
    _write(text, out)


def _emit_json(obj, out):
    _write(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n", out)


def _write(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _grid(args) -> FlopGrid:
    return FlopGrid.parse(args.grid) if args.grid else FlopGrid()


def _profile(args):
    return resolve_profile(args.profile) if args.profile else None


def _plan_from(args) -> ExperimentPlan:
    if getattr(args, "plan", None):
        return ExperimentPlan.from_dict(json.loads(Path(args.plan).read_text()))
    return build_plan(args.style, _grid(args), seed=args.seed,
                      scheme=args.scheme if args.scheme != "linear" else None, warmup=args.warmup)


# subcommands ---------------------------------------------------------------

def cmd_grid(args):
    rows = grid_table()
    header = ("depth", "width", "N_linear", "N_eff", "N_kaplan")
    _emit_table(header, [tuple(int(r[k]) for k in header) for r in rows], args.out, args.format)


def cmd_plan(args):
    plan = _plan_from(args)
    d = plan.to_dict()
    d["cost_flops"] = experiment_cost(plan)
    _emit_json(d, args.out)


def cmd_synth(args):
    spec = (SynthSpec.from_dict(json.loads(Path(args.spec).read_text())) if args.spec
            else SynthSpec.from_dict({"preset": args.preset}))
    if args.noise:
        spec = SynthSpec.from_dict({**spec.to_dict(), "noise": args.noise})
    spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    plan = _plan_from(args)
    runs = generate_runs(spec, plan)
    out = Path(args.out_dir)
    for r in runs:
        write_run(r, out)
    print(f"wrote {len(runs)} runs to {out}")


def _curves(args):
    runs = load_sweep(args.runs)
    curves = build_isoflop_curves(runs, _grid(args).values, args.scheme, args.source, _profile(args))
    if not curves:
        raise ValueError("no IsoFLOP curve has at least 3 points")
    return curves


def cmd_isoflop(args):
    curves = _curves(args)
    if args.points:
        rows = [(c.C, p.N, p.loss, p.sigma) for c in curves for p in c.points]
        write_csv(Path(args.points), ("C", "N", "loss", "sigma"), rows)
    est = estimate_many(curves, args.bootstrap, args.seed)
    _emit_table(ESTIMATE_HEADER, estimate_rows(est), args.out)
    if args.svg:
        data = {"curves": [{"C": c.C, "N": list(c.N), "loss": list(c.loss), "sigma": list(c.sigma)}
                           for c in curves],
                "optima": [{"n_star": e.n_star, "loss_star": e.loss_star} for e in est if e.valid]}
        Path(args.svg).write_text(emit_svg("isoflop", data, args.deterministic))


def cmd_fit(args):
    est = read_estimates(args.estimates)
    if args.bootstrap > 0:
        fit = power_law_ci(est, args.reference_flops, n_boot=args.bootstrap, seed=args.seed)
    else:
        fit = fit_power_law(est, args.reference_flops)
    _emit_json(fit.to_dict(), args.out)
    if args.svg:
        data = {"estimates": [{"C": e.C, "n_star": e.n_star, "log_std": e.log_std, "valid": e.valid} for e in est],
                "fit": fit.to_dict()}
        Path(args.svg).write_text(emit_svg("nstar_fit", data, args.deterministic))


def _read_points(path, xcol, ycol):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "valid" in rows[0]:
        rows = [r for r in rows if r["valid"].strip() in ("1", "True", "true")]
    return [(float(r[xcol]), float(r[ycol])) for r in rows]


def cmd_loss_fit(args):
    pts = _read_points(args.points, "C", args.loss_column)
    fit = fit_saturating(pts)
    _emit_json(fit.to_dict(), args.out)
    if args.svg:
        data = {"points": [{"C": c, "loss": l} for c, l in pts], "fit": fit.to_dict()}
        Path(args.svg).write_text(emit_svg("opt_loss", data, args.deterministic))


def cmd_loss_at(args):
    if bool(args.run) == bool(args.runs):
        raise ValueError("give exactly one of --run or --runs")
    runs = [load_run(args.run)] if args.run else load_sweep(args.runs)
    rows = []
    for run in runs:
        loss = loss_at_flops(run, args.flops, args.scheme, args.source)
        rows.append((run.run_id, int(model_size(run.arch, args.scheme)), "" if loss is None else loss))
    _emit_table(("run_id", "N", "loss"), rows, args.out)
    return 0 if any(r[2] != "" for r in rows) else 1


def cmd_hparams(args):
    from .hparam import (SweepPoint, fit_hparam_laws, optimal_hparams, sweep_points_from_runs,
                         tuned_table)

    if Path(args.sweep).is_dir():
        sweep = sweep_points_from_runs(load_sweep(args.sweep), (args.rho,), args.scheme, args.source)
    else:
        with open(args.sweep, newline="") as fh:
            sweep = [SweepPoint(float(r["N"]), int(r["batch_size_seqs"]), float(r["lr"]), float(r["beta2"]),
                                float(r["final_loss"]), float(r.get("tokens_per_param") or 20.0))
                     for r in csv.DictReader(fh)]
    sizes = sorted({p.N for p in sweep})
    optima = [optimal_hparams(sweep, N) for N in sizes]
    laws = fit_hparam_laws(optima)
    result = {
        "optima": [{"N": o.N, "bs_star": o.bs_star, "lr_star": o.lr_star, "loss_star": o.loss_star,
                    "bs_at_edge": o.bs_at_edge, "lr_at_edge": o.lr_at_edge} for o in optima],
        "laws": laws.to_dict(),
        "table": tuned_table(laws, sizes, args.gpu_count),
    }
    _emit_json(result, args.out)
    if args.svg:
        data = {"optima": result["optima"],
                "laws": {"bs": {"coefficient": laws.bs_law[0], "exponent": laws.bs_law[1]},
                         "lr": {"coefficient": laws.lr_law[0], "exponent": laws.lr_law[1]}}}
        Path(args.svg).write_text(emit_svg("hparam_fit", data, args.deterministic))


def cmd_cost(args):
    plan = _plan_from(args)
    _emit_json({"style": plan.name, "schedule_style": plan.schedule_style.value, "runs": len(plan.runs),
                "cost_flops": experiment_cost(plan)}, args.out)


def cmd_accuracy(args):
    curves = _curves(args)
    est = estimate_many(curves, args.bootstrap, args.seed)
    reference = power_law_ci(est, args.reference_flops)
    pts = accuracy_vs_compute(curves, reference, args.bootstrap, args.seed, ScheduleStyle(args.schedule),
                              estimates=est)
    rows = [(p.max_flops, p.budget, p.exponent, p.ci[0], p.ci[1], p.rms_rel_err) for p in pts]
    _emit_table(("max_flops", "budget", "exponent", "ci_lo", "ci_hi", "rms_rel_err"), rows, args.out)
    if args.svg:
        data = {"points": [{"budget": p.budget, "exponent": p.exponent, "ci_lo": p.ci[0], "ci_hi": p.ci[1]}
                           for p in pts],
                "reference_exponent": reference.exponent}
        Path(args.svg).write_text(emit_svg("accuracy_vs_compute", data, args.deterministic))


def cmd_report(args):
    """Render figures from existing pipeline tables without refitting anything."""
    d = Path(args.input)
    out = Path(args.out_dir or d)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    est_path, fit_path = d / "estimates.csv", d / "fit.json"
    if est_path.exists():
        est = read_estimates(est_path)
        fit = json.loads(fit_path.read_text()) if fit_path.exists() else None
        data = {"estimates": [{"C": e.C, "n_star": e.n_star, "log_std": e.log_std, "valid": e.valid} for e in est],
                "fit": fit}
        written.append(_render(out / "nstar_fit.svg", "nstar_fit", data, args.deterministic))
    iso = d / "isoflop.csv"
    if iso.exists():
        by_c: dict = {}
        with open(iso, newline="") as fh:
            for r in csv.DictReader(fh):
                c = by_c.setdefault(float(r["C"]), {"C": float(r["C"]), "N": [], "loss": [], "sigma": []})
                c["N"].append(float(r["N"]))
                c["loss"].append(float(r["loss"]))
                c["sigma"].append(float(r["sigma"]))
        optima = [{"n_star": e.n_star, "loss_star": e.loss_star} for e in est if e.valid] \
            if est_path.exists() else []
        written.append(_render(out / "isoflop.svg", "isoflop",
                               {"curves": list(by_c.values()), "optima": optima}, args.deterministic))
    opt = d / "opt_loss.csv"
    if opt.exists():
        lf = d / "loss_fit.json"
        fit = json.loads(lf.read_text()) if lf.exists() else None
        if fit is not None and "E" not in fit:
            fit = None
        pts = [{"C": c, "loss": l} for c, l in _read_points(opt, "C", "loss_star")]
        written.append(_render(out / "opt_loss.svg", "opt_loss", {"points": pts, "fit": fit}, args.deterministic))
    if not written:
        raise ValueError(f"no pipeline tables found in {d}")
    for p in written:
        print(p)


def _render(path, figure, data, deterministic):
    path.write_text(emit_svg(figure, data, deterministic))
    return path


def cmd_pipeline(args):
    cfg = json.loads(Path(args.config).read_text()) if Path(args.config).is_file() else None
    if cfg is None:
        raise PipelineError("config", f"config file not found: {args.config}", 2)
    # command-line globals override the file only when given explicitly
    for key in ("seed", "bootstrap", "scheme", "profile"):
        if key in args.explicit:
            cfg[key] = getattr(args, key)
    if "deterministic" in args.explicit:
        cfg["deterministic"] = True
    elif "deterministic" not in cfg:
        cfg["deterministic"] = False
    if args.formats:
        cfg["formats"] = [f.strip() for f in args.formats.split(",") if f.strip()]
    if args.output_dir:
        cfg["output_dir"] = str(Path(args.output_dir).resolve())
    result = run_pipeline(cfg, base_dir=Path(args.config).resolve().parent)
    summary = {"status": "ok", "a": result.fit.exponent, "a_text": result.fit.to_dict()["a_text"],
               "files": [str(p) for p in result.files]}
    _emit_json(summary, None)


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scalelaw", description="Compute-optimal scaling-law analysis.")
    _add_globals(ap, suppress=False)
    ap.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, suppress=True)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    def plan_args(p):
        p.add_argument("--plan", help="plan JSON from 'scalelaw plan'")
        p.add_argument("--style", default="tuned-constant", choices=sorted(PLAN_STYLES))
        p.add_argument("--grid", help="base,factor,count (default 1.25e16,2,12)")
        p.add_argument("--warmup", choices=["match", "kaplan", "capped"])

    def runs_args(p):
        p.add_argument("--runs", required=True, help="directory of run manifests")
        p.add_argument("--grid", help="base,factor,count (default 1.25e16,2,12)")
        p.add_argument("--source", default="validation", choices=["validation", "train"])

    p = add("grid", cmd_grid, "canonical model grid with all size schemes")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out")

    p = add("plan", cmd_plan, "experiment plan for a named configuration")
    plan_args(p)
    p.add_argument("--out")

    p = add("synth", cmd_synth, "write synthetic runs for a plan")
    plan_args(p)
    p.add_argument("--preset", default="chinchilla", choices=sorted(PRESETS))
    p.add_argument("--spec", help="JSON surface spec")
    p.add_argument("--noise", help="observation noise profile name or JSON file")
    p.add_argument("--out-dir", required=True)

    p = add("isoflop", cmd_isoflop, "IsoFLOP curves and bootstrap N* estimates")
    runs_args(p)
    p.add_argument("--points", help="also write curve points CSV here")
    p.add_argument("--svg")
    p.add_argument("--out")

    p = add("fit", cmd_fit, "power-law fit of N* estimates")
    p.add_argument("--estimates", required=True)
    p.add_argument("--reference-flops", type=float, default=CHINCHILLA_FLOPS)
    p.add_argument("--svg")
    p.add_argument("--out")

    p = add("loss-fit", cmd_loss_fit, "saturating power law of optimal loss against compute")
    p.add_argument("--points", required=True, help="CSV with C and loss columns")
    p.add_argument("--loss-column", default="loss_star")
    p.add_argument("--svg")
    p.add_argument("--out")

    p = add("loss-at", cmd_loss_at, "loss of one run after a given number of FLOPs")
    p.add_argument("--run", help="run manifest JSON")
    p.add_argument("--runs", help="directory of run manifests")
    p.add_argument("--flops", type=float, required=True)
    p.add_argument("--source", default="validation", choices=["validation", "train", "v", "t"])
    p.add_argument("--out")

    p = add("hparams", cmd_hparams, "optimal batch size and learning rate from a sweep")
    p.add_argument("--sweep", required=True, help="runs directory or sweep-point CSV")
    p.add_argument("--rho", type=float, default=20.0)
    p.add_argument("--source", default="train", choices=["validation", "train"])
    p.add_argument("--gpu-count", type=int, default=4)
    p.add_argument("--svg")
    p.add_argument("--out")

    p = add("cost", cmd_cost, "total training FLOPs of a plan")
    plan_args(p)
    p.add_argument("--out")

    p = add("accuracy", cmd_accuracy, "fit accuracy against experiment cost")
    runs_args(p)
    p.add_argument("--schedule", default="constant", choices=[s.value for s in ScheduleStyle])
    p.add_argument("--reference-flops", type=float, default=CHINCHILLA_FLOPS)
    p.add_argument("--svg")
    p.add_argument("--out")

    p = add("report", cmd_report, "render SVG figures from pipeline tables")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir")

    p = add("pipeline", cmd_pipeline, "run the full analysis from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--formats", help="comma-separated subset of csv,json,svg")
    p.add_argument("--output-dir")
    return ap


def _explicit(argv) -> set:
    flags = {"--seed": "seed", "--bootstrap": "bootstrap", "--scheme": "scheme", "--profile": "profile",
             "--deterministic": "deterministic"}
    return {flags[a.split("=")[0]] for a in argv if a.split("=")[0] in flags}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.explicit = _explicit(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
        return int(rc or 0)
    except PipelineError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return exc.exit_code
    except (IngestError, FileNotFoundError) as exc:
        sys.stderr.write(json.dumps({"status": "error", "stage": args.command, "message": str(exc),
                                     "exit_code": 2}, sort_keys=True) + "\n")
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        sys.stderr.write(json.dumps({"status": "error", "stage": args.command, "message": str(exc),
                                     "exit_code": 1}, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
