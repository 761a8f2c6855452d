"""Train both inpainting nets briefly and extrapolate held-out sequences.

Short budgets keep this under a few minutes on one core; raise max_seconds for
better numbers.  Compares against warp-only output and a hold-last shadow mask.
"""
import numpy as np

from patchex import pipeline
from patchex.neural import TrainConfig, train

cfg = pipeline.PipelineConfig()
rng = np.random.default_rng(0)
corpus = pipeline.corpus(range(6)) + pipeline.corpus(range(6, 8), pan=True)
fg = sum((pipeline.training_samples(f, "fg", cfg, rng, crop=32, per_frame=6) for f in corpus), [])
near = sum((pipeline.training_samples(f, "near", cfg, rng, crop=32, per_frame=6) for f in corpus), [])
print(f"{len(fg)} fg samples, {len(near)} near samples")

rf = train("fg", fg, TrainConfig(epochs=1000, max_seconds=45, seed=0))
rn = train("near", near, TrainConfig(epochs=1000, max_seconds=25, seed=1))
print(f"fg: {len(rf.train_loss)} epochs, final L1 {rf.train_l1[-1]:.4f}")
print(f"near: {len(rn.train_loss)} epochs, final L1 {rn.train_l1[-1]:.4f}")

nets = pipeline.Networks(rf.params, rn.params)
for frames in pipeline.corpus(range(500, 503)):
    r = pipeline.run_sequence(frames, nets, cfg)
    print(f"PSNR {np.mean(r.psnr):.2f} dB (warp-only {np.mean(r.baseline_psnr):.2f})  "
          f"shadow IoU {np.mean(r.shadow_iou):.3f} (hold-last {np.mean(r.hold_iou):.3f})")
