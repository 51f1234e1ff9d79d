"""End-to-end command tests. Everything runs in process through main(argv)
so return codes and emitted files are checked without subprocess overhead;
one subprocess test pins the `python3 -m deferseg` entry point.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from deferseg import __version__
from deferseg.cli import main
from deferseg.deferral import DeferralModel
from deferseg.synth import SynthSpec, generate


def test_version_runs_as_module():
    proc = subprocess.run(
        [sys.executable, "-m", "deferseg", "--version"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == f"deferseg {__version__}"


def _synth(out, *, images=1, h=16, w=16, corr=1.0, rate=0.1, seed=5, extra=()):
    argv = ["--seed", str(seed), "synth", "--out", str(out),
            "--height", str(h), "--width", str(w), "--images", str(images),
            "--error-rate", str(rate), "--corr", str(corr), "--passes", "4"]
    argv += list(extra)
    assert main(argv) == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> aggregate -> calibrate -> fit -> defer -> evaluate."""
    base = tmp_path_factory.mktemp("pipeline")
    data, cal = base / "data", base / "cal"
    fit, dec, ev = base / "fit", base / "dec", base / "ev"

    _synth(data, images=3, h=24, w=24, corr=1.0, rate=0.08, seed=11)
    assert main(["aggregate", "--input-dir", str(data), "--out", str(data)]) == 0
    assert main(["calibrate", "--input-dir", str(data), "--out", str(cal),
                 "--reliability"]) == 0
    assert main(["fit", "--input-dir", str(data), "--out", str(fit),
                 "--policy", "adaptive",
                 "--temperature", str(cal / "temperature.json")]) == 0
    assert main(["defer", "--input-dir", str(data), "--out", str(dec),
                 "--model", str(fit / "deferral.json"), "--pgm"]) == 0
    eval_argv = ["--seed", "7", "evaluate", "--input-dir", str(data),
                 "--out", str(ev), "--model", str(fit / "deferral.json"),
                 "--temperature", str(cal / "temperature.json"),
                 "--target-coverage", "0.9", "--pgm"]
    assert main(eval_argv) == 0
    return {"data": data, "cal": cal, "fit": fit, "dec": dec, "ev": ev,
            "eval_argv": eval_argv}


def test_synth_writes_manifest_and_per_image_files(tmp_path):
    _synth(tmp_path, images=2, seed=3)
    for i in range(2):
        for prefix in ("gt", "pred", "logit", "unc", "stack"):
            assert (tmp_path / f"{prefix}_{i:04d}.npy").exists()
        assert (tmp_path / f"unc_{i:04d}.npy.json").exists()
        assert (tmp_path / f"stack_{i:04d}.npy.json").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["schema"] == "deferseg-synth/1"
    assert len(manifest["images"]) == 2
    assert manifest["pixel_count"] == 2 * 16 * 16
    # the spec in the manifest regenerates the exact same data
    spec = SynthSpec.from_json_dict(manifest["spec"])
    assert generate(spec).fingerprint() == manifest["fingerprint"]
    timings = json.loads((tmp_path / "timings.json").read_text())
    assert timings["command"] == "synth"
    assert set(timings["phases"]) == {"compute_s", "write_s"}


def test_aggregate_outputs_and_preview(tmp_path, capsys):
    src, out = tmp_path / "src", tmp_path / "agg"
    _synth(src, seed=9)
    assert main(["aggregate", "--input-dir", str(src), "--out", str(out),
                 "--pgm"]) == 0
    assert "aggregated 1 stack(s)" in capsys.readouterr().out
    unc_meta = json.loads((out / "unc_0000.npy.json").read_text())
    assert unc_meta == {"kind": "mutual_information"}
    assert (out / "pred_0000.npy").exists()
    assert (out / "unc_0000.pgm").read_bytes().startswith(b"P5\n")
    timings = json.loads((out / "timings.json").read_text())
    assert set(timings["phases"]) == {"load_s", "compute_s", "write_s"}


def test_calibrate_outputs(pipeline):
    model = json.loads((pipeline["cal"] / "temperature.json").read_text())
    assert set(model) == {"T", "nll_before", "nll_after", "fitted_on", "flat"}
    assert model["nll_after"] <= model["nll_before"] + 1e-12
    lines = (pipeline["cal"] / "reliability.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,frac,conf,acc,gap"
    assert len(lines) == 16


def test_fit_emits_loadable_model(pipeline):
    raw = json.loads((pipeline["fit"] / "deferral.json").read_text())
    model = DeferralModel.from_json_dict(raw)
    assert model.policy == "adaptive"
    assert isinstance(model.alpha, int) and 50 <= model.alpha <= 100


def test_defer_writes_decisions_and_previews(pipeline):
    for i in range(3):
        arr = np.load(pipeline["dec"] / f"decision_{i:04d}.npy")
        assert arr.dtype == np.uint8
        assert arr.shape == (24, 24)
        assert set(np.unique(arr)) <= {0, 1}
        pgm = (pipeline["dec"] / f"decision_{i:04d}.pgm").read_bytes()
        assert pgm.startswith(b"P5\n24 24\n255\n")
    timings = json.loads((pipeline["dec"] / "timings.json").read_text())
    assert timings["command"] == "defer"


def test_evaluate_report_contents(pipeline):
    report = json.loads((pipeline["ev"] / "report.json").read_text())
    assert report["schema"] == "deferseg-report/1"
    assert report["metadata"]["config"]["command"] == "evaluate"
    assert report["metadata"]["bootstrap_seed"] == 7
    assert report["deferral"]["coverage"] > 0.5
    assert report["deferral"]["model"]["policy"] == "adaptive"
    assert report["calibration"]["temperature"]["T"] > 0.0
    # json format inlines the tables
    assert isinstance(report["curve"]["points"], list)
    assert {"coverage", "value", "defined"} == set(report["curve"]["points"][0])
    assert len(report["calibration"]["reliability"]) == 15
    assert len(report["operating_points"]) == 1
    assert (pipeline["ev"] / "decision_0000.pgm").exists()


def test_evaluate_rerun_is_bitwise_identical(pipeline):
    report_path = pipeline["ev"] / "report.json"
    first = report_path.read_bytes()
    assert main(pipeline["eval_argv"]) == 0
    assert report_path.read_bytes() == first
    assert (pipeline["ev"] / "timings.json").exists()  # timings live elsewhere


def test_format_csv_moves_tables_to_files(pipeline, tmp_path):
    argv = ["--format", "csv", "evaluate",
            "--input-dir", str(pipeline["data"]), "--out", str(tmp_path)]
    assert main(argv) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["curve"]["points_csv"] == "curve.csv"
    assert "points" not in report["curve"]
    assert report["calibration"]["reliability_csv"] == "reliability.csv"
    curve_lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert curve_lines[0] == "coverage,value,defined"
    assert (tmp_path / "reliability.csv").exists()


def test_evaluate_without_uncertainty_files(tmp_path, capsys):
    src = tmp_path / "src"
    _synth(src, seed=13)
    for path in list(src.glob("unc_*")):
        path.unlink()
    out = tmp_path / "ev"
    assert main(["evaluate", "--input-dir", str(src), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert "auroc" in report["pooled"]
    assert "unc_auroc" not in report["pooled"]
    assert report["curve"] is None
    assert report["deferral"] is None
    assert "dice=" in capsys.readouterr().out


def test_missing_input_dir_exits_2(tmp_path, capsys):
    code = main(["aggregate", "--input-dir", str(tmp_path / "nope"),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "not a directory" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path, capsys):
    tmp_path.joinpath("empty").mkdir()
    code = main(["aggregate", "--input-dir", str(tmp_path / "empty"),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "stack_0000.npy" in capsys.readouterr().err


def test_uncertainty_kind_mismatches_exit_2(tmp_path, capsys):
    mc = tmp_path / "mc"
    _synth(mc, seed=21)
    code = main(["aggregate", "--input-dir", str(mc), "--out", str(tmp_path),
                 "--uncertainty", "variance"])
    assert code == 2
    assert "only mutual information applies" in capsys.readouterr().err

    tta = tmp_path / "tta"
    _synth(tta, seed=22, extra=["--transformed"])
    code = main(["aggregate", "--input-dir", str(tta), "--out", str(tmp_path),
                 "--uncertainty", "mi"])
    assert code == 2
    assert "mc_dropout or ensemble" in capsys.readouterr().err


def test_broken_temperature_file_exits_3(tmp_path, capsys):
    src = tmp_path / "src"
    _synth(src, seed=23)
    bad = tmp_path / "temperature.json"
    bad.write_text(json.dumps(
        {"T": 1.5, "nll_before": 0.5, "nll_after": 0.7, "flat": False}
    ))
    code = main(["evaluate", "--input-dir", str(src), "--out", str(tmp_path),
                 "--temperature", str(bad)])
    assert code == 3
    assert "nll" in capsys.readouterr().err


def test_infeasible_dice_floor_exits_4(tmp_path, capsys):
    src = tmp_path / "src"
    _synth(src, images=2, corr=0.0, rate=0.3, seed=29)
    code = main(["fit", "--input-dir", str(src), "--out", str(tmp_path),
                 "--policy", "global", "--criterion", "coverage_dice",
                 "--dice-floor", "0.999"])
    assert code == 4
    err = capsys.readouterr().err
    assert "0.999" in err
    assert "best" in err


def test_missing_model_file_exits_2(tmp_path, capsys):
    src = tmp_path / "src"
    _synth(src, seed=31)
    code = main(["defer", "--input-dir", str(src), "--out", str(tmp_path),
                 "--model", str(tmp_path / "missing.json")])
    assert code == 2
    assert "cannot read file" in capsys.readouterr().err


def test_bad_threads_exits_2(tmp_path, capsys):
    code = main(["--threads", "0", "synth", "--out", str(tmp_path)])
    assert code == 2
    assert "--threads" in capsys.readouterr().err
