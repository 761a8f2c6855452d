"""End-to-end extrapolation of the half-step frame ``t + 0.5`` from frames up to ``t``.

Per integer frame: region masks from the target stencil, G-buffer guided warp
of the shadow-free irradiance, invalid-pixel detection, then four sibling
tasks (foreground net, near-background net, far background as warped, shadow
extrapolation) whose results are blended, shadowed and re-modulated.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import image, metrics
from .blend import compose_final, demodulate
from .neural.inputs import assemble_planes, from_nchw, to_nchw
from .neural.networks import NetworkParams, fg_network, infer, load_checkpoint, near_network
from .neural.train import Sample
from .scene import Frame, GBufferSet, Renderer, random_scene, read_dataset
from .segment import BoundingRect, RegionMasks, SegmentationParams, bounding_rect, segment_frame
from .shadow import FarnebackParams, extrapolate_shadow, farneback_flow, mask_iou
from .warp import (GuidedWarpParams, InvalidThresholds, WarpResult, backward_warp, detect_invalid, gbuffer_guided_warp,
                   warp_attributes)


class DataError(ValueError):
    pass


@dataclass
class PipelineConfig:
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    warp: GuidedWarpParams = field(default_factory=GuidedWarpParams)
    invalid: InvalidThresholds = field(default_factory=InvalidThresholds)
    farneback: FarnebackParams = field(default_factory=FarnebackParams)
    attenuation: float = 0.5
    scale: float = 0.5
    foveated: bool = True
    shadow_partition: bool = True
    workers: int = 4
    crop_margin: int = 8

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        cfg = cls()
        sub = {"segmentation": SegmentationParams, "warp": GuidedWarpParams,
               "invalid": InvalidThresholds, "farneback": FarnebackParams}
        for key, typ in sub.items():
            if key in d:
                setattr(cfg, key, typ(**d.pop(key)))
        for key, value in d.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown pipeline option {key!r}")
            setattr(cfg, key, type(getattr(cfg, key))(value))
        cfg.warp.validate()
        if cfg.workers < 1:
            raise ValueError("workers must be >= 1")
        return cfg


@dataclass
class Networks:
    fg: NetworkParams
    near: NetworkParams

    @classmethod
    def fresh(cls, seed: int = 0) -> "Networks":
        return cls(fg_network(seed), near_network(seed + 1))

    @classmethod
    def load(cls, fg_path, near_path) -> "Networks":
        return cls(load_checkpoint(fg_path), load_checkpoint(near_path))


@dataclass(frozen=True)
class CausalInputs:
    """Everything extrapolation may see: past frames and the target's geometry.

    The target G-buffer set carries no shadow mask, since that would reveal
    the future shading.
    """

    previous: Frame
    current: Frame
    target: GBufferSet


def causal_inputs(previous: Frame, current: Frame, target: GBufferSet | Frame) -> CausalInputs:
    g = target.gbuffers if isinstance(target, Frame) else target
    return CausalInputs(previous, current, dataclasses.replace(g, shadow_mask=None))


@dataclass
class Prepared:
    masks: RegionMasks
    rects: list[BoundingRect]
    warped: WarpResult  # hole_mask already combined with invalid detection
    planes: np.ndarray  # (H, W, 7) network input
    coverage: np.ndarray  # 1 where the guided warp had enough candidate weight


@dataclass
class FrameResult:
    color: np.ndarray
    shadow: np.ndarray | None
    masks: RegionMasks
    regions: tuple[np.ndarray, np.ndarray, np.ndarray]


def shadeless(frame: Frame, attenuation: float = 0.5, remove_shadow: bool = True) -> np.ndarray:
    """Demodulated colour with the shadow attenuation divided back out."""
    d = demodulate(frame.color, frame.gbuffers)
    if not remove_shadow:
        return d
    return image.safe_divide(d, 1.0 - attenuation * frame.gbuffers.shadow_mask.astype(np.float64))


def _whole_frame_masks(shape) -> RegionMasks:
    h, w = shape
    z = np.zeros((h, w, 1), np.float32)
    return RegionMasks(z, np.ones_like(z), z.copy())


def prepare(inp: CausalInputs, cfg: PipelineConfig, timer: metrics.StageTimer | None = None) -> Prepared:
    stage = timer.stage if timer is not None else _null_stage
    with stage("preprocessing"):
        src = shadeless(inp.current, cfg.attenuation, cfg.shadow_partition)
        if cfg.foveated:
            masks, rects = segment_frame(inp.target.stencil, inp.target.motion_vector, cfg.segmentation)
        else:
            masks, rects = _whole_frame_masks(inp.target.shape), [BoundingRect(0, 0, inp.target.shape[1], inp.target.shape[0])]
    with stage("warping"):
        wr = gbuffer_guided_warp(src, inp.current.gbuffers, inp.target, scale=cfg.scale, params=cfg.warp)
        # pixels whose plain motion-vector sample disagrees with the target geometry are the ones
        # the guided warp had to make up; those go to the networks
        plain = warp_attributes(inp.current.gbuffers, inp.target.motion_vector, cfg.scale)
        valid = detect_invalid(plain, inp.target, cfg.invalid, wr.hole_mask)
        warped = WarpResult(wr.color, valid, wr.attrs)
    with stage("preprocessing"):
        planes = assemble_planes(warped, inp.target)
    return Prepared(masks, rects, warped, planes, wr.hole_mask)


class _NullStage:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _null_stage(name):
    return _NullStage()


def fill_nearest_valid(color: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid pixels by the nearest valid one (unchanged if none are valid)."""
    v = valid[..., 0] > 0.5
    if v.all() or not v.any():
        return color.copy()
    _, (iy, ix) = ndimage.distance_transform_edt(~v, return_indices=True)
    return color[iy, ix]


def region_crop(mask: np.ndarray, margin: int) -> BoundingRect | None:
    r = bounding_rect(mask[..., 0] > 0.5)
    if r is None:
        return None
    h, w = mask.shape[:2]
    return BoundingRect(r.x - margin, r.y - margin, r.w + 2 * margin, r.h + 2 * margin).clamp(w, h)


def warped_base(prep: Prepared) -> np.ndarray:
    """Guided-warp colour, with nearest-valid fill where the warp found no candidate at all."""
    return fill_nearest_valid(prep.warped.color, prep.coverage)


def run_region(net: NetworkParams, prep: Prepared, mask: np.ndarray, margin: int) -> np.ndarray:
    """Inpaint the invalid pixels inside ``mask``'s box; valid pixels keep their warped value."""
    base = warped_base(prep)
    crop = region_crop(mask, margin)
    if crop is None:
        return base
    ys, xs = crop.slices
    pred = from_nchw(infer(net, to_nchw(prep.planes[ys, xs])))
    valid = prep.warped.hole_mask[ys, xs] > 0.5
    out = base.copy()
    out[ys, xs] = np.where(valid, base[ys, xs], pred)
    return out


def run_far(prep: Prepared) -> np.ndarray:
    return warped_base(prep)


def run_shadow(inp: CausalInputs, cfg: PipelineConfig) -> np.ndarray:
    s_prev = inp.previous.gbuffers.shadow_mask
    s_cur = inp.current.gbuffers.shadow_mask
    flow = farneback_flow(s_prev, s_cur, cfg.farneback)
    return extrapolate_shadow(s_cur, flow, cfg.scale)


def extrapolate_frame(inp: CausalInputs, nets: Networks, cfg: PipelineConfig,
                      timer: metrics.StageTimer | None = None) -> FrameResult:
    prep = prepare(inp, cfg, timer)
    stage = timer.stage if timer is not None else _null_stage
    with stage("inference"):
        fg_net = nets.fg
        near_net = nets.near if cfg.foveated else nets.fg
        tasks = {
            "fg": (run_region, fg_net, prep, prep.masks.fg, cfg.crop_margin),
            "near": (run_region, near_net, prep, prep.masks.near, cfg.crop_margin),
            "far": (run_far, prep),
        }
        if cfg.shadow_partition:
            tasks["shadow"] = (run_shadow, inp, cfg)
        if cfg.workers <= 1:
            results = {k: fn(*args) for k, (fn, *args) in tasks.items()}
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = {k: pool.submit(fn, *args) for k, (fn, *args) in tasks.items()}
                results = {k: f.result() for k, f in futures.items()}
    with stage("blending"):
        shadow = results.get("shadow")
        color = compose_final((results["fg"], results["near"], results["far"], prep.masks), shadow,
                              inp.target, cfg.attenuation)
    return FrameResult(color, shadow, prep.masks, (results["fg"], results["near"], results["far"]))


def warp_only(inp: CausalInputs, cfg: PipelineConfig | None = None) -> np.ndarray:
    """Baseline: backward-warp the shaded frame; holes take the nearest in-frame source pixel."""
    scale = cfg.scale if cfg else 0.5
    return backward_warp(inp.current.color, inp.target.motion_vector, scale, fill="clamp").color


def oracle_frame(truth: Frame, cfg: PipelineConfig) -> np.ndarray:
    """Compose the target from ground-truth regions and shadow (evaluation upper bound)."""
    base = shadeless(truth, cfg.attenuation, True)
    masks, _ = segment_frame(truth.gbuffers.stencil, truth.gbuffers.motion_vector, cfg.segmentation)
    return compose_final((base, base, base, masks), truth.gbuffers.shadow_mask, truth.gbuffers, cfg.attenuation)


# ---------------------------------------------------------------------------
# sequences


def integer_steps(frames: list[Frame]) -> list[int]:
    """Integer times ``t`` with ``t-1``, ``t`` and ``t+0.5`` all present."""
    times = [f.time for f in frames]
    for i, t in enumerate(times):
        if abs(t - 0.5 * i) > 1e-9:
            raise DataError("frames must be emitted at half-step times 0, 0.5, 1, ...")
    n_int = (len(frames) + 1) // 2
    return [t for t in range(1, n_int) if 2 * t + 1 < len(frames)]


def sequence_inputs(frames: list[Frame], t: int) -> CausalInputs:
    return causal_inputs(frames[2 * t - 2], frames[2 * t], frames[2 * t + 1])


@dataclass
class SequenceResult:
    steps: list[int]
    frames: list[np.ndarray]
    psnr: list[float]
    ssim: list[float]
    baseline_psnr: list[float]
    shadow_iou: list[float]
    hold_iou: list[float]
    timer: metrics.StageTimer


def run_sequence(frames: list[Frame], nets: Networks | None, cfg: PipelineConfig, mode: str = "patchex",
                 evaluate: bool = True) -> SequenceResult:
    """Extrapolate every half-step frame of a sequence.

    ``mode`` is ``patchex``, ``warp`` (baseline) or ``oracle``.  Ground-truth
    half-step colour is only read for scoring and in oracle mode.
    """
    if mode not in ("patchex", "warp", "oracle"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "patchex" and nets is None:
        raise ValueError("patchex mode needs networks")
    steps = integer_steps(frames)
    timer = metrics.StageTimer()
    out = SequenceResult(steps, [], [], [], [], [], [], timer)
    for t in steps:
        inp = sequence_inputs(frames, t)
        timer.begin_run()
        shadow = None
        if mode == "patchex":
            res = extrapolate_frame(inp, nets, cfg, timer)
            color, shadow = res.color, res.shadow
        elif mode == "warp":
            with timer.stage("warping"):
                color = warp_only(inp, cfg)
        else:
            color = oracle_frame(frames[2 * t + 1], cfg)
        timer.end_run()
        out.frames.append(color)
        if evaluate:
            truth = frames[2 * t + 1]
            out.psnr.append(metrics.psnr(color, truth.color))
            out.ssim.append(metrics.ssim(color, truth.color))
            out.baseline_psnr.append(metrics.psnr(warp_only(inp, cfg), truth.color))
            true_s = truth.gbuffers.shadow_mask
            if shadow is not None:
                out.shadow_iou.append(mask_iou(shadow, true_s))
            out.hold_iou.append(mask_iou(inp.current.gbuffers.shadow_mask, true_s))
    return out


# ---------------------------------------------------------------------------
# training data


def region_mask(prep: Prepared, region: str) -> np.ndarray:
    if region == "fg":
        return prep.masks.fg
    if region == "near":
        return prep.masks.near
    if region == "whole":
        return np.ones_like(prep.masks.fg)
    raise ValueError(f"unknown region {region!r}")


def training_samples(frames: list[Frame], region: str, cfg: PipelineConfig, rng: np.random.Generator,
                     crop: int = 64, per_frame: int = 8, hole_bias: float = 0.75) -> list[Sample]:
    """Crops of (network input, shadow-free half-step truth, validity) centred inside ``region``.

    Centres are drawn from the region's invalid pixels with probability
    ``hole_bias`` so the networks see mostly pixels they will have to fill.
    """
    out = []
    half = crop // 2
    for t in integer_steps(frames):
        inp = sequence_inputs(frames, t)
        prep = prepare(inp, cfg)
        truth = shadeless(frames[2 * t + 1], cfg.attenuation, cfg.shadow_partition)
        m = region_mask(prep, region)[..., 0] > 0.5
        if not m.any():
            continue
        holes = m & (prep.warped.hole_mask[..., 0] < 0.5)
        pad = lambda a: np.pad(a, ((half, half), (half, half), (0, 0)), mode="edge")  # noqa: E731
        planes, tr, valid = pad(prep.planes), pad(truth), pad(prep.warped.hole_mask)
        all_idx, hole_idx = np.argwhere(m), np.argwhere(holes)
        for _ in range(per_frame):
            pool = hole_idx if len(hole_idx) and rng.random() < hole_bias else all_idx
            cy, cx = pool[rng.integers(len(pool))]
            ys, xs = slice(cy, cy + crop), slice(cx, cx + crop)
            out.append(Sample(planes[ys, xs].transpose(2, 0, 1).copy(),
                              tr[ys, xs].transpose(2, 0, 1).copy(),
                              valid[ys, xs].transpose(2, 0, 1).copy()))
    return out


def corpus(seeds, width: int = 128, height: int = 96, frames: int = 8, pan: bool = False) -> list[list[Frame]]:
    from .scene import render_sequence

    return [render_sequence(random_scene(s, width, height, frames, pan=pan)) for s in seeds]


# ---------------------------------------------------------------------------
# benchmarking

RESOLUTIONS = {"180p": (320, 180), "270p": (480, 270), "360p": (640, 360), "540p": (960, 540), "720p": (1280, 720)}


@dataclass
class BenchResult:
    resolutions: list[str]
    timers: dict[str, metrics.StageTimer]
    whole_frame_ms: dict[str, float]
    patch_parallel_ms: dict[str, float]
    fit: metrics.PowerLawFit | None


def _median_ms(fn, iterations: int) -> float:
    ts = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        fn()
        ts.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(ts))


def bench(resolutions, nets: Networks | None = None, cfg: PipelineConfig | None = None,
          iterations: int = 5, seed: int = 3) -> BenchResult:
    """Stage timings per resolution, plus whole-frame vs patch-parallel inference."""
    nets = nets or Networks.fresh(seed)
    cfg = cfg or PipelineConfig()
    timers, whole, patch = {}, {}, {}
    for name in resolutions:
        w, h = RESOLUTIONS[name] if isinstance(name, str) else name
        label = name if isinstance(name, str) else f"{w}x{h}"
        spec = random_scene(seed, w, h, frames=3)
        renderer = Renderer(spec)
        prev, cur = renderer.render(0.0), renderer.render(1.0)

        def run(timer):
            with timer.stage("gbuffer"):
                target = renderer.render(1.5).gbuffers
            extrapolate_frame(causal_inputs(prev, cur, target), nets, cfg, timer)

        timers[label] = metrics.stage_timing(run, iterations)
        prep = prepare(causal_inputs(prev, cur, renderer.render(1.5)), cfg)
        x = to_nchw(prep.planes)
        whole[label] = _median_ms(lambda: infer(nets.fg, x), iterations)

        def patches():
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                a = pool.submit(run_region, nets.fg, prep, prep.masks.fg, cfg.crop_margin)
                b = pool.submit(run_region, nets.near, prep, prep.masks.near, cfg.crop_margin)
                a.result(), b.result()

        patch[label] = _median_ms(patches, iterations)
    fit = None
    if len(whole) >= 3:
        pts = []
        for name in resolutions:
            w, h = RESOLUTIONS[name] if isinstance(name, str) else name
            label = name if isinstance(name, str) else f"{w}x{h}"
            pts.append((w * h, whole[label]))
        fit = metrics.fit_power_law(pts)
    return BenchResult([n if isinstance(n, str) else f"{n[0]}x{n[1]}" for n in resolutions],
                       timers, whole, patch, fit)


def bench_csv(result: BenchResult) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["resolution", "stage", "median_ms", "p90_ms"])
    for name in result.resolutions:
        for row in result.timers[name].table():
            w.writerow([name, row["stage"], f"{row['median_ms']:.4f}", f"{row['p90_ms']:.4f}"])
        w.writerow([name, "whole_frame_inference", f"{result.whole_frame_ms[name]:.4f}", ""])
        w.writerow([name, "patch_parallel_inference", f"{result.patch_parallel_ms[name]:.4f}", ""])
    return out.getvalue()


# ---------------------------------------------------------------------------
# run directories


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_run_manifest(run_dir: str | os.PathLike, seed: int, cfg: dict, command: str, extra: dict | None = None) -> Path:
    import scipy

    from . import __version__

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "versions": {"patchex": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    if extra:
        manifest.update(extra)
    path = run_dir / "run.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def run_extrapolate(dataset_dir, nets: Networks, cfg: PipelineConfig, out_dir, mode: str = "patchex",
                    evaluate: bool = True) -> SequenceResult:
    """Extrapolate a dataset directory; frames go to ``out_dir/frame_<t>.pfex``."""
    frames = read_dataset(dataset_dir)
    result = run_sequence(frames, nets, cfg, mode, evaluate)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, color in zip(result.steps, result.frames):
        image.write_plane(out_dir / f"frame_{t:05d}_5.pfex", color)
    if evaluate:
        rows = list(zip(result.steps, result.psnr, result.ssim))
        (out_dir / "metrics.csv").write_text(metrics.quality_csv(rows))
    (out_dir / "timing.csv").write_text(metrics.timing_csv(result.timer))
    return result
