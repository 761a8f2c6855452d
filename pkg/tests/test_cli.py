import json
import shutil
import subprocess

import numpy as np
import pytest

from patchex import cli, image
from patchex.neural.train import NumericError


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert cli.main(["--seed", "4", "render-dataset", "--out", str(ds), "--width", "64", "--height", "48",
                     "--frames", "3"]) == 0
    return ds


def test_render_dataset_layout(dataset):
    assert (dataset / "manifest").exists() and (dataset / "run.json").exists()
    assert json.loads((dataset / "run.json").read_text())["seed"] == 4
    assert cli.main(["render-dataset", "--out", str(dataset), "--width", "64", "--height", "48",
                     "--frames", "3"]) == cli.EXIT_DATA


def test_segment_outputs(dataset, tmp_path, capsys):
    assert cli.main(["segment", "--dataset", str(dataset), "--out", str(tmp_path / "seg")]) == 0
    names = {p.name for p in (tmp_path / "seg").iterdir()}
    assert {"frame_00000_fg.pfex", "frame_00000_near.pfex", "frame_00000_far.pfex", "rects.csv",
            "temporal_variation.pfex", "high_variation.pfex"} <= names
    assert (tmp_path / "seg" / "rects.csv").read_text().startswith("frame,region,x,y,w,h")


def test_train_extrapolate_evaluate(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    for net in ("fg", "near"):
        assert cli.main(["train", "--network", net, "--dataset", str(dataset), "--run-dir", str(run),
                         "--epochs", "1", "--crop", "16", "--per-frame", "2"]) == 0
        assert (run / f"{net}.pxnn").exists() and (run / f"{net}_loss.csv").exists()
    out = tmp_path / "out"
    assert cli.main(["extrapolate", "--dataset", str(dataset), "--run-dir", str(out),
                     "--fg", str(run / "fg.pxnn"), "--near", str(run / "near.pxnn"), "--workers", "2"]) == 0
    assert (out / "frame_00001_5.pfex").exists() and (out / "timing.csv").exists()
    man = json.loads((out / "run.json").read_text())
    assert {"seed", "config_hash", "versions"} <= set(man)
    capsys.readouterr()
    assert cli.main(["evaluate", "--dataset", str(dataset), "--frames", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "frame_index,psnr_db,ssim" and len(text.splitlines()) == 2


def test_extrapolate_ablations_and_baseline(dataset, tmp_path):
    assert cli.main(["extrapolate", "--dataset", str(dataset), "--run-dir", str(tmp_path / "a"),
                     "--no-foveated", "--no-shadow-partition"]) == 0
    assert cli.main(["extrapolate", "--dataset", str(dataset), "--run-dir", str(tmp_path / "w"),
                     "--mode", "warp"]) == 0
    assert cli.main(["extrapolate", "--dataset", str(dataset), "--run-dir", str(tmp_path / "x"),
                     "--fg", str(tmp_path / "missing.pxnn")]) == cli.EXIT_CONFIG


def test_no_perceptual_loss_flag():
    args = cli.build_parser().parse_args(["train", "--network", "fg", "--dataset", "d", "--run-dir", "r",
                                          "--no-perceptual-loss"])
    tc = cli._train_config({}, args)
    assert tc.weights.vgg == 0 and tc.weights.style == 0 and tc.weights.l1 == 1.0


def test_missing_dataset_is_data_error(tmp_path):
    assert cli.main(["extrapolate", "--dataset", str(tmp_path / "nope"), "--run-dir", str(tmp_path / "o")]) == 3
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "manifest").write_text("garbage\n")
    assert cli.main(["evaluate", "--dataset", str(tmp_path / "bad"), "--frames", str(tmp_path)]) == 3


def test_config_errors(tmp_path, dataset):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1, 2\n")
    assert cli.main(["--config", str(bad), "segment", "--dataset", "x", "--out", "y"]) == cli.EXIT_CONFIG
    unknown = tmp_path / "unknown.yaml"
    unknown.write_text("colour: red\n")
    assert cli.main(["--config", str(unknown), "segment", "--dataset", "x", "--out", "y"]) == cli.EXIT_CONFIG
    opt = tmp_path / "opt.yaml"
    opt.write_text("pipeline: {bogus: 1}\n")
    assert cli.main(["--config", str(opt), "extrapolate", "--dataset", str(dataset),
                     "--run-dir", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_config_file_overrides(tmp_path, dataset):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 11\npipeline: {workers: 1}\ntrain: {epochs: 1, crop: 16, per_frame: 1}\n")
    run = tmp_path / "r"
    assert cli.main(["--config", str(cfg), "train", "--network", "near", "--dataset", str(dataset),
                     "--run-dir", str(run)]) == 0
    man = json.loads((run / "run.json").read_text())
    assert man["seed"] == 11 and man["config"]["train"]["epochs"] == 1


def test_numeric_failure_exit_code(dataset, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError("non-finite loss")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", "--network", "near", "--dataset", str(dataset), "--run-dir", str(tmp_path),
                     "--epochs", "1", "--crop", "16", "--per-frame", "1"]) == cli.EXIT_NUMERIC


def test_latency_model_command(tmp_path, capsys):
    trace = tmp_path / "trace.txt"
    trace.write_text("# ms per frame\n12.0, 15.5\n20.0\n")
    out = tmp_path / "lat.csv"
    assert cli.main(["latency-model", "--refresh-hz", "90", "--render-trace", str(trace), "--interp-ms", "1",
                     "--extrap-ms", "1", "--jnd-ms", "5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 4
    assert float(lines[1].split(",")[2]) == pytest.approx(3000 / 90 - 12.0, abs=1e-4)
    err = capsys.readouterr().err
    assert "interp: 100.0%" in err and "extrap: 0.0%" in err
    fast = tmp_path / "fast.txt"
    fast.write_text("5\n")
    assert cli.main(["latency-model", "--refresh-hz", "90", "--render-trace", str(fast), "--interp-ms", "1",
                     "--extrap-ms", "1"]) == cli.EXIT_CONFIG
    assert cli.read_render_trace(trace) == [12.0, 15.5, 20.0]


def test_bench_unknown_resolution():
    assert cli.main(["bench", "--resolutions", "999p"]) == cli.EXIT_CONFIG


@pytest.mark.skipif(shutil.which("patchex") is None, reason="console script not installed")
def test_console_script_help():
    r = subprocess.run(["patchex", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("render-dataset", "segment", "train", "extrapolate", "evaluate", "bench", "latency-model"):
        assert cmd in r.stdout


def test_extrapolated_frames_are_planes(dataset, tmp_path):
    assert cli.main(["extrapolate", "--dataset", str(dataset), "--run-dir", str(tmp_path), "--no-eval"]) == 0
    p = image.read_plane(tmp_path / "frame_00001_5.pfex")
    assert p.shape == (48, 64, 3) and np.all(np.isfinite(p))
    assert not (tmp_path / "metrics.csv").exists()
