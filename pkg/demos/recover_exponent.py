"""Plant a known surface, run the full analysis, and compare the fitted law
with the closed-form optimum.

    python3 demos/recover_exponent.py [--noise] [--bootstrap 500] [--out report]
"""

import argparse
import tempfile

from scalelaw.pipeline import run_pipeline
from scalelaw.synth import PRESETS, analytic_optimum


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="chinchilla", choices=sorted(PRESETS))
    ap.add_argument("--noise", action="store_true", help="add RefinedWeb-level observation noise")
    ap.add_argument("--bootstrap", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    synth = {"preset": args.preset, "seed": args.seed}
    cfg = {"synth": synth, "bootstrap": args.bootstrap, "seed": args.seed, "deterministic": True,
           "output_dir": args.out or tempfile.mkdtemp(prefix="scalelaw-")}
    if args.noise:
        synth["noise"] = "refinedweb"
        cfg["profile"] = "refinedweb"
    res = run_pipeline(cfg)

    spec = PRESETS[args.preset]
    a_true = analytic_optimum(spec, 1e20)[2]
    print(f"planted a = {a_true:.4f}   fitted a = {res.fit.summary()}")
    print(f"{'C':>10} {'N* fitted':>12} {'N* true':>12} {'ratio':>7}")
    for e in res.estimates:
        if e.valid:
            n_true = analytic_optimum(spec, e.C)[0]
            print(f"{e.C:10.3g} {e.n_star:12.4g} {n_true:12.4g} {e.n_star / n_true:7.3f}")
    if res.loss_fit is not None:
        lf = res.loss_fit
        print(f"optimal loss ~ {lf.E:.3f} + {lf.L0:.3g} C^-{lf.ell:.4f}")
    print("outputs:", *[str(p) for p in res.files], sep="\n  ")


if __name__ == "__main__":
    main()
