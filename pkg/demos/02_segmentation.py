"""Foveated segmentation on a random scene.

Offline, temporal variation plus Otsu finds where the picture changes.  At run
time the stencil box of each object is grown along its motion to get the "near"
ring, everything else is "far" and is left to the warp.
"""
import numpy as np

from patchex import scene, segment

frames = scene.render_sequence(scene.random_scene(3, frames=8))
ints = [f for f in frames if float(f.time).is_integer()]

var, high, rect = segment.offline_segment([f.color for f in ints])
print(f"high-variation pixels: {int(high.sum())}  bounding rect: {rect}")

# one scene moves at a single speed, so pool several to fit the expansion factor
cal_samples = []
for seed in range(8):
    seq = scene.render_sequence(scene.random_scene(seed, frames=8))
    cal_samples += segment.calibration_samples([f for f in seq if float(f.time).is_integer()])
cal = segment.calibrate_k(cal_samples)
print(f"calibrated k = ({cal.k_x:.2f}, {cal.k_y:.2f}), r = ({cal.pearson_x:.2f}, {cal.pearson_y:.2f})")

g = ints[-1].gbuffers
masks, rects = segment.segment_frame(g.stencil, g.motion_vector)
n = masks.fg.size
print(f"fg {masks.fg.sum() / n:.1%}  near {masks.near.sum() / n:.1%}  far {masks.far.sum() / n:.1%}")
for r in rects:
    print("near rect:", r)
assert np.all(masks.fg + masks.near + masks.far == 1)
