"""Warping a rendered frame half a step forward.

A sprite slides across a textured backdrop.  Plain backward warping drags the
sprite's colour into the strip it just uncovered; occlusion motion vectors and
the G-buffer guided warp both use the target geometry to pull background instead.
PNGs land in ./demo_out/warping.
"""
from pathlib import Path

import numpy as np
from scipy import ndimage

from patchex import image, scene, warp
from patchex.pipeline import sequence_inputs, shadeless

out = Path("demo_out/warping")
out.mkdir(parents=True, exist_ok=True)

frames = scene.render_sequence(scene.disocclusion_scene(shadows=False))
inp, truth = sequence_inputs(frames, 2), frames[5]  # frames at t=1, t=2 and the t=2.5 ground truth
tgt = truth.gbuffers
src, ref = shadeless(inp.current), shadeless(truth)

plain = warp.backward_warp(src, tgt.motion_vector, 0.5, fill="clamp").color
omv = warp.occlusion_motion_vectors(tgt.motion_vector, tgt.depth, tgt.stencil, 0.5,
                                    source_stencil=inp.current.gbuffers.stencil)
occl = warp.backward_warp(src, omv, 0.5, fill="clamp").color
guided = warp.gbuffer_guided_warp(src, inp.current.gbuffers, inp.target, scale=0.5)

# errors are reported around the moving object, where the methods differ
moving = (inp.current.gbuffers.stencil[..., 0] > 0.5) | (tgt.stencil[..., 0] > 0.5)
ghost = ndimage.binary_dilation(moving, iterations=3)
for name, img in [("plain", plain), ("occlusion_mv", occl), ("guided", guided.color)]:
    err = np.abs(img - ref)[ghost].mean()
    print(f"{name:>13}: L1 near the sprite = {err:.4f}")
    (out / f"{name}.png").write_bytes(image.to_png8(img))
(out / "truth.png").write_bytes(image.to_png8(ref))

# pixels the networks will be asked to fill
attrs = warp.warp_attributes(inp.current.gbuffers, tgt.motion_vector, 0.5)
valid = warp.detect_invalid(attrs, tgt, hole_mask=guided.hole_mask)
print("invalid pixels:", int((valid < 0.5).sum()))
(out / "valid_mask.png").write_bytes(image.to_png8(valid))
