import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from patchex import warp
from patchex.pipeline import sequence_inputs, shadeless
from patchex.scene import GBufferSet
from patchex.warp import GuidedWarpParams


def bilinear_oracle(source, mv, scale):
    """Scalar per-pixel reference for backward warping."""
    h, w, c = source.shape
    out = np.zeros_like(source)
    valid = np.zeros((h, w, 1), np.float32)
    for y in range(h):
        for x in range(w):
            sx = float(x) - scale * float(mv[y, x, 0])
            sy = float(y) - scale * float(mv[y, x, 1])
            if not (-1e-6 <= sx <= w - 1 + 1e-6 and -1e-6 <= sy <= h - 1 + 1e-6):
                continue
            valid[y, x, 0] = 1
            cx, cy = min(max(sx, 0.0), w - 1), min(max(sy, 0.0), h - 1)
            x0, y0 = math.floor(cx), math.floor(cy)
            fx, fy = cx - x0, cy - y0
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            for k in range(c):
                a, b = float(source[y0, x0, k]), float(source[y0, x1, k])
                d, e = float(source[y1, x0, k]), float(source[y1, x1, k])
                top = a * (1 - fx) + b * fx
                bot = d * (1 - fx) + e * fx
                out[y, x, k] = np.float32(top * (1 - fy) + bot * fy)
    return out, valid


def test_zero_motion_is_identity(rng):
    src = rng.random((7, 9, 3), dtype=np.float32)
    r = warp.backward_warp(src, np.zeros((7, 9, 2), np.float32))
    assert np.array_equal(r.color, src)
    assert np.all(r.hole_mask == 1)


def test_translation_leaves_hole_columns():
    src = np.tile(np.arange(10, dtype=np.float32), (6, 1))[..., None]
    mv = np.zeros((6, 10, 2), np.float32)
    mv[..., 0] = 2
    r = warp.backward_warp(src, mv, 1.0)
    assert np.all(r.hole_mask[:, :2] == 0)
    assert np.all(r.color[:, :2] == 0)
    assert np.array_equal(r.color[:, 2:, 0], src[:, :-2, 0])
    assert np.all(r.hole_mask[:, 2:] == 1)


def test_backward_warp_matches_scalar_oracle(rng):
    src = rng.random((11, 13, 3), dtype=np.float32)
    mv = rng.uniform(-4, 4, (11, 13, 2)).astype(np.float32)
    for scale in (1.0, 0.5):
        r = warp.backward_warp(src, mv, scale)
        ref, valid = bilinear_oracle(src, mv, scale)
        assert np.max(np.abs(r.color - ref)) == 0
        assert np.array_equal(r.hole_mask, valid)


def test_resolution_mismatch_rejected():
    with pytest.raises(ValueError):
        warp.backward_warp(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_backward_warp_is_linear(seed, alpha, beta):
    r = np.random.default_rng(seed)
    a, b = r.random((6, 7, 2)), r.random((6, 7, 2))
    mv = r.uniform(-3, 3, (6, 7, 2)).astype(np.float32)
    lhs = warp.backward_warp((alpha * a + beta * b).astype(np.float32), mv, 0.5)
    wa, wb = warp.backward_warp(a.astype(np.float32), mv, 0.5), warp.backward_warp(b.astype(np.float32), mv, 0.5)
    v = lhs.hole_mask[..., 0] > 0
    assert np.allclose(lhs.color[v], (alpha * wa.color + beta * wb.color)[v], atol=1e-5)


def test_forward_warp_identity_and_shift(rng):
    src = rng.random((5, 8, 3), dtype=np.float32)
    depth = np.ones((5, 8, 1), np.float32)
    r = warp.forward_warp(src, np.zeros((5, 8, 2), np.float32), 1.0, depth)
    assert np.array_equal(r.color, src) and np.all(r.hole_mask == 1)
    mv = np.zeros((5, 8, 2), np.float32)
    mv[..., 0] = 3
    r = warp.forward_warp(src, mv, 1.0, depth)
    assert np.all(r.hole_mask[:, :3] == 0) and np.all(r.hole_mask[:, 3:] == 1)
    assert np.array_equal(r.color[:, 3:], src[:, :-3])


def test_forward_warp_nearer_depth_wins():
    src = np.array([[[0.25], [0.75], [0.0]]], np.float32)
    depth = np.array([[[2.0], [1.0], [5.0]]], np.float32)
    mv = np.zeros((1, 3, 2), np.float32)
    mv[0, 0, 0] = 1  # pixel 0 (depth 2) lands on pixel 1 (depth 1)
    r = warp.forward_warp(src, mv, 1.0, depth)
    assert r.color[0, 1, 0] == 0.75
    assert r.hole_mask[0, 0, 0] == 0
    depth2 = np.array([[[1.0], [2.0], [5.0]]], np.float32)
    assert warp.forward_warp(src, mv, 1.0, depth2).color[0, 1, 0] == 0.25


def test_occlusion_mvs_without_holes_unchanged(rng):
    mv = rng.uniform(-2, 2, (6, 6, 2)).astype(np.float32)
    d = rng.uniform(1, 5, (6, 6, 1)).astype(np.float32)
    s = np.zeros((6, 6, 1), np.float32)
    out = warp.occlusion_motion_vectors(mv, d, s, holes=np.zeros((6, 6), bool))
    assert np.array_equal(out, mv)


def test_single_hole_takes_background_motion():
    mv = np.ones((5, 5, 2), np.float32)
    mv[2, 2] = (7, -7)
    d = np.full((5, 5, 1), 10.0, np.float32)
    holes = np.zeros((5, 5), bool)
    holes[2, 2] = True
    out = warp.occlusion_motion_vectors(mv, d, np.zeros_like(d), holes=holes)
    assert np.array_equal(out[2, 2], [1.0, 1.0])


def test_hole_prefers_occluder_motion():
    # background (depth 20, static) on the left, sprite (depth 10, moving +4) on the right
    mv = np.zeros((3, 6, 2), np.float32)
    mv[:, 4:, 0] = 4
    d = np.full((3, 6, 1), 20.0, np.float32)
    d[:, 4:] = 10
    holes = np.zeros((3, 6), bool)
    holes[:, 2:4] = True
    out = warp.occlusion_motion_vectors(mv, d, np.zeros_like(d), holes=holes)
    assert np.all(out[:, 2:4, 0] == 4)


@given(st.integers(0, 2**31 - 1))
def test_occlusion_mvs_never_touch_valid_pixels(seed):
    r = np.random.default_rng(seed)
    mv = r.uniform(-3, 3, (8, 9, 2)).astype(np.float32)
    d = r.uniform(1, 5, (8, 9, 1)).astype(np.float32)
    holes = r.random((8, 9)) < 0.3
    out = warp.occlusion_motion_vectors(mv, d, np.zeros_like(d), holes=holes)
    assert np.array_equal(out[~holes], mv[~holes])


def _ghost_region(inp, truth):
    moving = (inp.current.gbuffers.stencil[..., 0] > 0.5) | (truth.gbuffers.stencil[..., 0] > 0.5)
    return ndimage.binary_dilation(moving, iterations=3)


def test_occlusion_mvs_reduce_ghosting(shadowless_frames):
    f = shadowless_frames
    inp, truth = sequence_inputs(f, 2), f[5]
    ghost = _ghost_region(inp, truth)
    tgt = truth.gbuffers
    plain = warp.backward_warp(inp.current.color, tgt.motion_vector, 0.5, fill="clamp").color
    omv = warp.occlusion_motion_vectors(tgt.motion_vector, tgt.depth, tgt.stencil, 0.5,
                                        source_stencil=inp.current.gbuffers.stencil)
    occl = warp.backward_warp(inp.current.color, omv, 0.5, fill="clamp").color
    e_plain = np.abs(plain - truth.color)[ghost].mean()
    e_occl = np.abs(occl - truth.color)[ghost].mean()
    assert e_occl < e_plain


def _flat_g(h, w, depth=None, normal=None, albedo=None):
    ones = np.ones((h, w, 1), np.float32)
    n = np.zeros((h, w, 3), np.float32)
    n[..., 2] = 1
    return GBufferSet(
        base_color=albedo if albedo is not None else np.full((h, w, 3), 0.5, np.float32),
        metallic=0 * ones, specular=0 * ones, roughness=0.5 * ones,
        depth=depth if depth is not None else 10 * ones,
        world_normal=normal if normal is not None else n,
        stencil=0 * ones, motion_vector=np.zeros((h, w, 2), np.float32),
        shadow_mask=0 * ones, nov=ones,
    )


def test_guided_warp_large_sigmas_box_filter(rng):
    h, w = 9, 10
    src = rng.random((h, w, 3), dtype=np.float32)
    g = _flat_g(h, w)
    inf = float("inf")
    p = GuidedWarpParams(window=3, sigma_spatial=inf, sigma_normal=inf, sigma_depth_frac=inf,
                         sigma_albedo=inf, occlusion=False)
    out = warp.gbuffer_guided_warp(src, g, g, scale=0.5, params=p).color
    ref = np.zeros_like(src)
    for y in range(h):
        for x in range(w):
            ys, xs = slice(max(0, y - 1), y + 2), slice(max(0, x - 1), x + 2)
            ref[y, x] = src[ys, xs].reshape(-1, 3).mean(axis=0)
    assert np.allclose(out, ref, atol=1e-6)


def test_guided_warp_nearest_limit_is_identity(rng):
    src = rng.random((6, 7, 3), dtype=np.float32)
    g = _flat_g(6, 7)
    p = GuidedWarpParams(sigma_spatial=0.0, occlusion=False)
    out = warp.gbuffer_guided_warp(src, g, g, scale=0.5, params=p)
    assert np.array_equal(out.color, src)
    assert np.all(out.hole_mask == 1)


def test_guided_warp_depth_selects_single_candidate():
    h, w = 7, 7
    src = np.zeros((h, w, 3), np.float32)
    src[2, 4] = (1.0, 0.5, 0.25)
    depth_s = np.full((h, w, 1), 20.0, np.float32)
    depth_s[2, 4] = 10.0
    depth_t = np.full((h, w, 1), 20.0, np.float32)
    depth_t[3, 3] = 10.0
    gs, gt = _flat_g(h, w, depth=depth_s), _flat_g(h, w, depth=depth_t)
    p = GuidedWarpParams(window=3, sigma_spatial=1.0, occlusion=False)
    out = warp.gbuffer_guided_warp(src, gs, gt, scale=0.5, params=p).color
    # direct weights at target (3,3): the matching candidate vs the best non-matching one
    sigma_d = 0.05 * 10.0
    w_match = math.exp(-2 / 2.0)
    w_other = math.exp(-0 / 2.0) * math.exp(-(10.0**2) / (2 * sigma_d**2))
    assert w_match / w_other > 1e3
    assert np.allclose(out[3, 3], src[2, 4], atol=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_guided_warp_is_convex_combination(seed):
    r = np.random.default_rng(seed)
    h, w = 8, 8
    src = r.random((h, w, 3)).astype(np.float32)
    n = r.normal(size=(h, w, 3))
    n[..., 2] = np.abs(n[..., 2]) + 1
    n = (n / np.linalg.norm(n, axis=-1, keepdims=True)).astype(np.float32)
    gs = _flat_g(h, w, depth=r.uniform(5, 15, (h, w, 1)).astype(np.float32), normal=n,
                 albedo=r.random((h, w, 3)).astype(np.float32))
    gt = _flat_g(h, w, depth=r.uniform(5, 15, (h, w, 1)).astype(np.float32), normal=n,
                 albedo=r.random((h, w, 3)).astype(np.float32))
    mv = r.uniform(-3, 3, (h, w, 2)).astype(np.float32)
    out = warp.gbuffer_guided_warp(src, gs, gt, mv=mv, scale=0.5, params=GuidedWarpParams(occlusion=False))
    v = out.hole_mask[..., 0] > 0
    lo, hi = src.reshape(-1, 3).min(0), src.reshape(-1, 3).max(0)
    assert np.all(out.color[v] >= lo - 1e-6) and np.all(out.color[v] <= hi + 1e-6)
    assert set(np.unique(out.hole_mask)) <= {0.0, 1.0}
    assert np.all(out.color[~v] == 0)


def test_guided_warp_rejects_even_window():
    with pytest.raises(ValueError):
        GuidedWarpParams(window=4).validate()


def test_guided_warp_beats_plain_warp_on_ghost_region(disocclusion_frames):
    f = disocclusion_frames
    inp, truth = sequence_inputs(f, 2), f[5]
    ghost = _ghost_region(inp, truth)
    src, ref = shadeless(inp.current), shadeless(truth)
    guided = warp.gbuffer_guided_warp(src, inp.current.gbuffers, inp.target, scale=0.5).color
    plain = warp.backward_warp(src, inp.target.motion_vector, 0.5, fill="clamp").color
    assert np.abs(guided - ref)[ghost].mean() < np.abs(plain - ref)[ghost].mean()


def test_detect_invalid_consistent_and_holes(shadowless_frames):
    g = shadowless_frames[2].gbuffers
    attrs = {"depth": g.depth, "world_normal": g.world_normal}
    assert np.all(warp.detect_invalid(attrs, g) == 1)
    holes = np.ones_like(g.depth)
    holes[:, :3] = 0
    m = warp.detect_invalid(attrs, g, hole_mask=holes)
    assert np.all(m[:, :3] == 0) and np.all(m[:, 3:] == 1)


def test_detect_invalid_flags_disoccluded_band(shadowless_frames):
    f = shadowless_frames
    src, tgt = f[4].gbuffers, f[5].gbuffers  # t = 2 -> 2.5, sprite moves +4 px per frame
    attrs = warp.warp_attributes(src, tgt.motion_vector, 0.5)
    valid = warp.detect_invalid(attrs, tgt)
    s_src = src.stencil[..., 0] > 0.5
    s_tgt = tgt.stencil[..., 0] > 0.5
    band = s_src & ~s_tgt  # uncovered between t and t + 0.5: width 2 px along the trailing edge
    ys, xs = np.nonzero(s_src)
    assert band.sum() == 2 * (ys.max() - ys.min() + 1)
    flagged = (valid[..., 0] < 0.5) & band
    assert flagged.sum() >= 0.8 * band.sum()


def test_exact_motion_reconstructs_next_frame(shadowless_frames):
    f = shadowless_frames
    for i in (2, 4, 6):
        a, b = f[i], f[i + 2]
        r = warp.backward_warp(a.color, b.gbuffers.motion_vector, 1.0)
        attrs = warp.warp_attributes(a.gbuffers, b.gbuffers.motion_vector, 1.0)
        valid = warp.detect_invalid(attrs, b.gbuffers, hole_mask=r.hole_mask)[..., 0] > 0.5
        assert valid.mean() > 0.9
        assert np.max(np.abs(r.color - b.color)[valid]) <= 1e-4
