import dataclasses
import json

import numpy as np
import pytest

from patchex import image, pipeline, scene
from patchex.neural.train import TrainConfig
from patchex.pipeline import Networks, PipelineConfig

from conftest import static_spec


@pytest.fixture(scope="module")
def nets():
    return Networks.fresh(0)


def test_static_scene_reproduces_mid_frame(nets):
    frames = scene.render_sequence(static_spec(frames=3))
    res = pipeline.run_sequence(frames, nets, PipelineConfig())
    for t, color in zip(res.steps, res.frames):
        assert np.max(np.abs(color - frames[2 * t + 1].color)) <= 1e-3


def test_oracle_mode_upper_bound(disocclusion_frames):
    res = pipeline.run_sequence(disocclusion_frames, None, PipelineConfig(), mode="oracle")
    assert min(res.psnr) > 45


def test_disocclusion_band_goes_to_networks(shadowless_frames):
    inp = pipeline.sequence_inputs(shadowless_frames, 2)
    prep = pipeline.prepare(inp, PipelineConfig())
    band = (inp.current.gbuffers.stencil[..., 0] > 0.5) & (inp.target.stencil[..., 0] < 0.5)
    holes = prep.warped.hole_mask[..., 0] < 0.5
    assert band.sum() > 0
    assert (holes & band).sum() >= 0.8 * band.sum()
    assert np.all(prep.masks.near[holes & band] == 1)


def test_shadow_task_beats_holding_last_mask(disocclusion_frames, nets):
    res = pipeline.run_sequence(disocclusion_frames, nets, PipelineConfig())
    assert np.mean(res.shadow_iou) > np.mean(res.hold_iou)


def test_extrapolation_never_reads_future_colour(disocclusion_frames, nets):
    frames = list(disocclusion_frames)
    cfg = PipelineConfig(workers=1)
    ref = pipeline.extrapolate_frame(pipeline.sequence_inputs(frames, 2), nets, cfg).color
    future = frames[5]
    g = dataclasses.replace(future.gbuffers, shadow_mask=np.full_like(future.gbuffers.shadow_mask, 0.7))
    frames[5] = scene.Frame(future.time, np.full_like(future.color, np.nan), g)
    inp = pipeline.sequence_inputs(frames, 2)
    assert inp.target.shadow_mask is None
    out = pipeline.extrapolate_frame(inp, nets, cfg).color
    assert np.array_equal(out, ref)


def test_output_independent_of_worker_count(random_frames, nets):
    a = pipeline.run_sequence(random_frames, nets, PipelineConfig(workers=1), evaluate=False)
    b = pipeline.run_sequence(random_frames, nets, PipelineConfig(workers=4), evaluate=False)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.frames, b.frames))


def test_region_masks_partition_and_match_stencil(disocclusion_frames, nets):
    inp = pipeline.sequence_inputs(disocclusion_frames, 2)
    res = pipeline.extrapolate_frame(inp, nets, PipelineConfig())
    m = res.masks
    assert np.all(m.fg + m.near + m.far == 1)
    assert np.array_equal(m.fg, inp.target.stencil)
    assert np.all(res.color >= 0) and np.all(np.isfinite(res.color))


def test_no_foveated_masks_cover_whole_frame(disocclusion_frames, nets):
    inp = pipeline.sequence_inputs(disocclusion_frames, 2)
    res = pipeline.extrapolate_frame(inp, nets, PipelineConfig(foveated=False))
    assert np.all(res.masks.fg == 0) and np.all(res.masks.near == 1) and np.all(res.masks.far == 0)


def test_all_ablations_together_run(disocclusion_frames, nets):
    cfg = PipelineConfig(foveated=False, shadow_partition=False)
    res = pipeline.run_sequence(disocclusion_frames[:7], nets, cfg)
    assert res.shadow_iou == [] and all(np.isfinite(res.psnr))
    assert TrainConfig().weights.without_perceptual().vgg == 0


def test_valid_pixels_keep_warped_values(disocclusion_frames, nets):
    inp = pipeline.sequence_inputs(disocclusion_frames, 2)
    cfg = PipelineConfig()
    prep = pipeline.prepare(inp, cfg)
    out = pipeline.run_region(nets.fg, prep, prep.masks.fg, cfg.crop_margin)
    valid = prep.warped.hole_mask[..., 0] > 0.5
    assert np.array_equal(out[valid], prep.warped.color[valid])


def test_fill_nearest_valid():
    c = np.arange(5, dtype=np.float32).reshape(1, 5, 1)
    v = np.array([1, 0, 0, 1, 1], np.float32).reshape(1, 5, 1)
    assert pipeline.fill_nearest_valid(c, v)[0, :, 0].tolist() == [0, 0, 3, 3, 4]


def test_integer_steps_and_bad_timing(disocclusion_frames):
    n = len(disocclusion_frames)
    steps = pipeline.integer_steps(disocclusion_frames)
    assert steps[0] == 1 and 2 * steps[-1] + 1 <= n - 1
    with pytest.raises(pipeline.DataError):
        pipeline.integer_steps(disocclusion_frames[1:])


def test_training_samples_shapes(disocclusion_frames):
    rng = np.random.default_rng(0)
    s = pipeline.training_samples(disocclusion_frames[:7], "near", PipelineConfig(), rng, crop=32, per_frame=3)
    assert len(s) == 6
    assert s[0].input.shape == (7, 32, 32) and s[0].truth.shape == (3, 32, 32) and s[0].hole.shape == (1, 32, 32)
    assert any(x.hole.min() == 0 for x in s)


def test_config_from_dict():
    cfg = PipelineConfig.from_dict({"workers": 2, "warp": {"window": 5}, "segmentation": {"k_x": 3, "k_y": 1}})
    assert cfg.workers == 2 and cfg.warp.window == 5 and cfg.segmentation.k_x == 3
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"warp": {"window": 4}})


def test_run_extrapolate_writes_outputs(tmp_path, nets):
    seq = scene.render_sequence(scene.random_scene(5, 64, 48, frames=3))
    scene.write_dataset(seq, tmp_path / "ds")
    res = pipeline.run_extrapolate(tmp_path / "ds", nets, PipelineConfig(), tmp_path / "out")
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["frame_00001_5.pfex", "metrics.csv", "timing.csv"]
    assert np.array_equal(image.read_plane(tmp_path / "out" / "frame_00001_5.pfex"), res.frames[0])
    assert (tmp_path / "out" / "metrics.csv").read_text().startswith("frame_index,psnr_db,ssim")


def test_run_manifest(tmp_path):
    path = pipeline.write_run_manifest(tmp_path, 7, {"a": 1}, "extrapolate")
    man = json.loads(path.read_text())
    assert man["seed"] == 7 and man["config_hash"] == pipeline.config_hash({"a": 1})
    assert {"patchex", "numpy", "scipy", "python"} <= set(man["versions"])


def test_bench_small_resolutions(nets):
    res = pipeline.bench([(64, 48), (96, 64), (128, 96)], nets, PipelineConfig(workers=2), iterations=5)
    assert len(res.timers) == 3 and res.fit is not None
    rows = pipeline.bench_csv(res).splitlines()
    assert rows[0] == "resolution,stage,median_ms,p90_ms"
    assert len(rows) == 1 + 3 * 7
