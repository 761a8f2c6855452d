"""Command line entry point: ``patchex <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import image, latency_model, metrics, pipeline, scene, segment
from .neural.networks import CheckpointError, save_checkpoint
from .neural.train import NumericError, TrainConfig, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
TOP_LEVEL_KEYS = {"seed", "scene", "pipeline", "train", "bench"}

log = logging.getLogger("patchex")


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _pipeline_config(cfg: dict, args) -> pipeline.PipelineConfig:
    try:
        pc = pipeline.PipelineConfig.from_dict(cfg.get("pipeline"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pipeline config: {exc}") from exc
    if getattr(args, "workers", None) is not None:
        pc.workers = args.workers
    if getattr(args, "no_foveated", False):
        pc.foveated = False
    if getattr(args, "no_shadow_partition", False):
        pc.shadow_partition = False
    return pc


def _seed(cfg: dict, args) -> int:
    return int(args.seed if getattr(args, "seed", None) is not None else cfg.get("seed", 0))


# ---------------------------------------------------------------------------
# subcommands


def cmd_render_dataset(args, cfg) -> int:
    seed = _seed(cfg, args)
    if "scene" in cfg:
        spec = scene.SceneSpec.from_config(cfg["scene"])
    elif args.scene == "disocclusion":
        spec = scene.disocclusion_scene(frames=args.frames)
    else:
        spec = scene.random_scene(seed, args.width, args.height, args.frames, pan=args.pan)
    spec.validate()
    frames = scene.render_sequence(spec, workers=args.workers or 1)
    scene.write_dataset(frames, args.out, overwrite=args.overwrite)
    pipeline.write_run_manifest(args.out, seed, cfg, "render-dataset")
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def cmd_segment(args, cfg) -> int:
    pc = _pipeline_config(cfg, args)
    frames = scene.read_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["frame,region,x,y,w,h"]
    for i, f in enumerate(frames):
        masks, rects = segment.segment_frame(f.gbuffers.stencil, f.gbuffers.motion_vector, pc.segmentation)
        for name, m in zip(("fg", "near", "far"), masks.as_list()):
            image.write_plane(out / f"frame_{i:05d}_{name}.pfex", m)
        for r in rects:
            lines.append(f"{i},near,{r.x},{r.y},{r.w},{r.h}")
    integer = [f.color for f in frames if float(f.time).is_integer()]
    var, high, rect = segment.offline_segment(integer)
    image.write_plane(out / "temporal_variation.pfex", var)
    image.write_plane(out / "high_variation.pfex", high)
    lines.append(f"-,offline,{rect.x},{rect.y},{rect.w},{rect.h}")
    (out / "rects.csv").write_text("\n".join(lines) + "\n")
    cal_rows = segment.calibration_samples([f for f in frames if float(f.time).is_integer()])
    if len(cal_rows) >= 2:
        try:
            cal = segment.calibrate_k(cal_rows)
            print(f"calibrated k_x={cal.k_x:.4f} (r={cal.pearson_x:.3f}) k_y={cal.k_y:.4f} (r={cal.pearson_y:.3f})")
        except segment.SegmentationError as exc:
            print(f"calibration skipped: {exc}")
    print(f"wrote masks for {len(frames)} frames to {out}")
    return 0


def _train_config(cfg: dict, args) -> TrainConfig:
    try:
        tc = TrainConfig.from_dict(cfg.get("train"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train config: {exc}") from exc
    for key in ("epochs", "lr", "batch", "crop", "max_seconds", "per_frame"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(tc, key, v)
    tc.seed = _seed(cfg, args)
    if args.no_perceptual_loss:
        tc.weights = tc.weights.without_perceptual()
    return tc


def cmd_train(args, cfg) -> int:
    pc = _pipeline_config(cfg, args)
    tc = _train_config(cfg, args)
    rng = np.random.default_rng(tc.seed)
    region = args.network if pc.foveated else "whole"
    samples = []
    for d in args.dataset:
        samples += pipeline.training_samples(scene.read_dataset(d), region, pc, rng, tc.crop, tc.per_frame)
    if not samples:
        raise pipeline.DataError("no training samples: the region is empty in every frame")
    result = train(args.network, samples, tc)
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    ckpt = run / f"{args.network}.pxnn"
    save_checkpoint(ckpt, result.params)
    rows = ["epoch,train_loss,val_loss,train_l1"]
    for i, (a, b, c) in enumerate(zip(result.train_loss, result.val_loss, result.train_l1)):
        rows.append(f"{i},{a:.6f},{b:.6f},{c:.6f}")
    (run / f"{args.network}_loss.csv").write_text("\n".join(rows) + "\n")
    pipeline.write_run_manifest(run, tc.seed, cfg, "train",
                                {"network": args.network, "samples": len(samples),
                                 "n_train": result.n_train, "n_val": result.n_val})
    print(f"saved {ckpt} after {len(result.train_loss)} epochs, final val loss {result.val_loss[-1]:.5f}")
    return 0


def _networks(args, seed: int) -> pipeline.Networks:
    if args.fg and args.near:
        return pipeline.Networks.load(args.fg, args.near)
    if args.fg or args.near:
        raise ConfigError("pass both --fg and --near checkpoints, or neither")
    return pipeline.Networks.fresh(seed)


def cmd_extrapolate(args, cfg) -> int:
    pc = _pipeline_config(cfg, args)
    seed = _seed(cfg, args)
    nets = _networks(args, seed) if args.mode == "patchex" else None
    run = Path(args.run_dir)
    res = pipeline.run_extrapolate(args.dataset, nets, pc, run, mode=args.mode, evaluate=not args.no_eval)
    pipeline.write_run_manifest(run, seed, cfg, "extrapolate",
                                {"mode": args.mode, "workers": pc.workers, "foveated": pc.foveated,
                                 "shadow_partition": pc.shadow_partition})
    print(metrics.timing_pretty(res.timer))
    if res.psnr:
        print(f"mean PSNR {np.mean(res.psnr):.3f} dB (warp-only {np.mean(res.baseline_psnr):.3f} dB), "
              f"mean SSIM {np.mean(res.ssim):.4f}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    frames = scene.read_dataset(args.dataset)
    rows = []
    for t in pipeline.integer_steps(frames):
        path = Path(args.frames) / f"frame_{t:05d}_5.pfex"
        if not path.exists():
            continue
        pred = image.read_plane(path)
        truth = frames[2 * t + 1].color
        rows.append((t, metrics.psnr(pred, truth), metrics.ssim(pred, truth)))
    if not rows:
        raise pipeline.DataError(f"no extrapolated frames found in {args.frames}")
    text = metrics.quality_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_bench(args, cfg) -> int:
    pc = _pipeline_config(cfg, args)
    bc = cfg.get("bench") or {}
    names = args.resolutions.split(",") if args.resolutions else bc.get("resolutions", ["180p", "360p", "720p"])
    bad = [n for n in names if n not in pipeline.RESOLUTIONS]
    if bad:
        raise ConfigError(f"unknown resolutions {bad}; choose from {sorted(pipeline.RESOLUTIONS)}")
    iterations = args.iterations or int(bc.get("iterations", 5))
    seed = _seed(cfg, args)
    res = pipeline.bench(names, pipeline.Networks.fresh(seed), pc, iterations, seed)
    text = pipeline.bench_csv(res)
    for name in res.resolutions:
        print(f"== {name}")
        print(metrics.timing_pretty(res.timers[name]))
    if res.fit is not None:
        print(f"whole-frame inference ~ {res.fit.a:.3g} * pixels^{res.fit.b:.3f} (r2={res.fit.r2:.3f})")
    if args.run_dir:
        run = Path(args.run_dir)
        run.mkdir(parents=True, exist_ok=True)
        (run / "bench.csv").write_text(text)
        extra = {"fit": None if res.fit is None else vars(res.fit)}
        pipeline.write_run_manifest(run, seed, cfg, "bench", extra)
    else:
        sys.stdout.write(text)
    return 0


def read_render_trace(path) -> list[float]:
    values = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise pipeline.DataError(f"cannot read render trace: {exc}") from exc
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        for tok in line.replace(",", " ").split():
            try:
                values.append(float(tok))
            except ValueError as exc:
                raise pipeline.DataError(f"bad render time {tok!r}") from exc
    return values


def cmd_latency_model(args, cfg) -> int:
    trace = read_render_trace(args.render_trace)
    sc = latency_model.TimingScenario.from_hz(args.refresh_hz, trace, args.interp_ms, args.extrap_ms)
    try:
        text = latency_model.latency_csv(sc)
    except latency_model.ScenarioError as exc:
        raise ConfigError(str(exc)) from exc
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.jnd_ms is not None:
        for mode in ("interp", "extrap"):
            r = latency_model.presentation_latency(sc, mode)
            frac = latency_model.jnd_report(r.latency_ms, args.jnd_ms)
            print(f"# {mode}: {100 * frac:.1f}% of frames exceed {args.jnd_ms} ms", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------


def _ablation_flags(p):
    p.add_argument("--no-foveated", action="store_true", help="one whole-frame network instead of region patches")
    p.add_argument("--no-shadow-partition", action="store_true", help="leave shadows in the frames; no shadow task")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="patchex", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render-dataset", help="render a synthetic sequence with G-buffers")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", choices=["random", "disocclusion"], default="random")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--pan", action="store_true")
    p.add_argument("--workers", type=int)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_render_dataset)

    p = sub.add_parser("segment", help="write region masks and the offline variation analysis")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train the foreground or near-background network")
    p.add_argument("--network", choices=["fg", "near"], required=True)
    p.add_argument("--dataset", action="append", required=True, help="repeatable")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--per-frame", type=int)
    p.add_argument("--max-seconds", type=float)
    p.add_argument("--no-perceptual-loss", action="store_true")
    _ablation_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extrapolate", help="extrapolate every half-step frame of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--fg")
    p.add_argument("--near")
    p.add_argument("--workers", type=int)
    p.add_argument("--mode", choices=["patchex", "warp", "oracle"], default="patchex")
    p.add_argument("--no-eval", action="store_true", help="skip scoring against the rendered half-step frames")
    _ablation_flags(p)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of extrapolated frames against the dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="stage timings across resolutions")
    p.add_argument("--resolutions", help="comma list, e.g. 180p,360p,720p")
    p.add_argument("--iterations", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("latency-model", help="presentation latency of interpolation vs extrapolation")
    p.add_argument("--refresh-hz", type=float, required=True)
    p.add_argument("--render-trace", required=True, help="text file of per-frame render times in ms")
    p.add_argument("--interp-ms", type=float, required=True)
    p.add_argument("--extrap-ms", type=float, required=True)
    p.add_argument("--jnd-ms", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_latency_model)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except scene.DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, scene.SceneError) as exc:
        # scene errors here come from the config's scene section
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, image.PlaneFormatError, CheckpointError, pipeline.DataError,
            segment.SegmentationError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
