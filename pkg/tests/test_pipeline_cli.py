import csv
import json

import pytest

from scalelaw.cli import main
from scalelaw.pipeline import PipelineError, read_estimates, run_pipeline

GRID = "1.25e16,2,6"


def _config(tmp_path, **kw):
    cfg = {"synth": {"preset": "symmetric"}, "grid": GRID, "bootstrap": 100, "seed": 0,
           "output_dir": str(tmp_path / "out")}
    cfg.update(kw)
    return cfg


def test_symmetric_pipeline_recovers_half(tmp_path):
    res = run_pipeline(_config(tmp_path))
    assert 0.49 <= res.fit.exponent <= 0.51
    names = sorted(p.name for p in res.files)
    assert names == sorted(["estimates.csv", "opt_loss.csv", "isoflop.csv", "fit.json", "loss_fit.json",
                            "isoflop.svg", "nstar_fit.svg", "opt_loss.svg"])
    est = read_estimates(tmp_path / "out" / "estimates.csv")
    assert [e.n_star for e in est] == [e.n_star for e in res.estimates]


def test_missing_runs_dir_is_ingest_error(tmp_path):
    with pytest.raises(PipelineError) as ei:
        run_pipeline({"runs_dir": str(tmp_path / "nope"), "output_dir": str(tmp_path / "out")})
    assert ei.value.stage == "ingest" and ei.value.exit_code == 2


def test_config_needs_one_source(tmp_path):
    with pytest.raises(PipelineError) as ei:
        run_pipeline({"output_dir": str(tmp_path)})
    assert ei.value.stage == "config"


def test_formats_subset(tmp_path):
    res = run_pipeline(_config(tmp_path, formats=["csv"]))
    assert res.files and all(p.suffix == ".csv" for p in res.files)
    assert not list((tmp_path / "out").glob("*.svg"))


def test_cli_pipeline_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"runs_dir": "missing", "output_dir": "out"}))
    assert main(["pipeline", "--config", str(cfg)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["stage"] == "ingest" and err["status"] == "error"
    cfg.write_text(json.dumps(_config(tmp_path)))
    assert main(["--deterministic", "pipeline", "--config", str(cfg), "--formats", "csv,json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "ok" and 0.49 <= out["a"] <= 0.51
    assert not list((tmp_path / "out").glob("*.svg"))


def test_cli_global_flag_overrides_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(_config(tmp_path, formats=["json"])))
    main(["pipeline", "--config", str(cfg)])
    a1 = json.loads(capsys.readouterr().out)["a"]
    assert main(["pipeline", "--config", str(cfg), "--scheme", "effective"]) == 0
    a2 = json.loads(capsys.readouterr().out)["a"]
    assert a1 != a2


@pytest.fixture(scope="module")
def runs_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("runs")
    assert main(["synth", "--preset", "symmetric", "--grid", GRID, "--out-dir", str(d)]) == 0
    return d


def _csv(text):
    return list(csv.DictReader(text.splitlines()))


def test_cli_grid(capsys):
    assert main(["grid"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 16
    assert rows[0]["N_linear"] == "5173248"


def test_cli_plan_and_cost(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    assert main(["plan", "--style", "cosine", "--grid", "1.25e16,2,2", "--out", str(plan)]) == 0
    d = json.loads(plan.read_text())
    assert d["cost_flops"] > 0
    assert main(["cost", "--plan", str(plan)]) == 0
    assert json.loads(capsys.readouterr().out)["cost_flops"] == d["cost_flops"]


def test_cli_isoflop_fit_lossfit_report(runs_dir, tmp_path, capsys):
    est = tmp_path / "estimates.csv"
    pts = tmp_path / "isoflop.csv"
    assert main(["--bootstrap", "100", "isoflop", "--runs", str(runs_dir), "--grid", GRID, "--out", str(est),
                 "--points", str(pts), "--svg", str(tmp_path / "iso.svg")]) == 0
    assert len(read_estimates(est)) == 6
    fit = tmp_path / "fit.json"
    assert main(["fit", "--estimates", str(est), "--bootstrap", "200", "--out", str(fit)]) == 0
    assert json.loads(fit.read_text())["a"] == pytest.approx(0.5, abs=0.01)
    lf = tmp_path / "loss_fit.json"
    assert main(["loss-fit", "--points", str(est), "--out", str(lf)]) == 0
    assert set(json.loads(lf.read_text())) >= {"E", "L0", "ell"}
    assert main(["report", "--input", str(tmp_path), "--deterministic"]) == 0
    assert (tmp_path / "nstar_fit.svg").exists() and (tmp_path / "isoflop.svg").exists()
    capsys.readouterr()


def test_cli_loss_at(runs_dir, capsys):
    manifest = sorted(runs_dir.glob("*.json"))[0]
    assert main(["loss-at", "--runs", str(runs_dir), "--flops", "1.25e16", "--source", "v"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert any(r["loss"] for r in rows)
    main(["loss-at", "--run", str(manifest), "--flops", "1e30"])
    assert _csv(capsys.readouterr().out)[0]["loss"] == ""
    assert main(["loss-at", "--flops", "1e17"]) == 1


def test_cli_accuracy(runs_dir, capsys):
    assert main(["--bootstrap", "50", "accuracy", "--runs", str(runs_dir), "--grid", GRID]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 4
    assert float(rows[-1]["rms_rel_err"]) == 0.0


def test_cli_hparams(tmp_path, capsys):
    from scalelaw.synth import PRESETS, synthetic_sweep

    sweep = synthetic_sweep(PRESETS["symmetric"], [2e7, 6e7, 2e8], [32, 64, 128, 256, 512],
                            [1e-3, 2e-3, 4e-3, 8e-3])
    path = tmp_path / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "batch_size_seqs", "lr", "beta2", "final_loss", "tokens_per_param"])
        for p in sweep:
            w.writerow([p.N, p.batch_size_seqs, p.lr, p.beta2, p.final_loss, p.tokens_per_param])
    assert main(["hparams", "--sweep", str(path), "--svg", str(tmp_path / "h.svg")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["optima"]) == 3 and len(out["table"]) == 3
    assert (tmp_path / "h.svg").exists()


def test_cli_missing_input_exit_2(tmp_path, capsys):
    assert main(["isoflop", "--runs", str(tmp_path / "absent")]) == 2
    assert json.loads(capsys.readouterr().err)["exit_code"] == 2
