"""Motion-vector warping: backward, forward, occlusion-aware and G-buffer guided.

Motion fields follow the backward convention: ``mv[y, x]`` is the displacement
(in pixels) that carried the surface now visible at target pixel ``(x, y)``
over one frame interval.  Warping by a fraction ``scale`` of that interval
samples the source at ``(x, y) - scale * mv``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import image
from .scene import GBufferSet


@dataclass
class WarpResult:
    color: np.ndarray
    hole_mask: np.ndarray  # 1 = valid, 0 = hole
    attrs: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class GuidedWarpParams:
    window: int = 7
    sigma_spatial: float = 0.25
    sigma_normal: float = 0.1
    sigma_depth_frac: float = 0.05
    sigma_albedo: float = 0.2
    min_weight: float = 1e-4
    occlusion: bool = True

    def validate(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")


@dataclass
class InvalidThresholds:
    depth_rel: float = 0.02
    normal_dot: float = 0.9


def _check_mv(source: np.ndarray, mv: np.ndarray) -> None:
    image.same_shape(source, mv)
    if mv.shape[2] != 2:
        raise ValueError("motion field must have 2 channels")


def sample_positions(mv: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = mv.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return xx - scale * mv[..., 0].astype(np.float64), yy - scale * mv[..., 1].astype(np.float64)


def bilinear(source: np.ndarray, sx: np.ndarray, sy: np.ndarray, clamp: bool = False):
    """Bilinear lookup at float positions.  Returns (values, inside-mask)."""
    h, w = source.shape[:2]
    eps = 1e-6
    inside = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    x = np.clip(sx, 0, w - 1)
    y = np.clip(sy, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    src = source.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    if not clamp:
        out = np.where(inside[..., None], out, 0.0)
    return out.astype(np.float32), inside


def nearest(source: np.ndarray, sx: np.ndarray, sy: np.ndarray):
    h, w = source.shape[:2]
    xi = np.floor(sx + 0.5).astype(np.int64)
    yi = np.floor(sy + 0.5).astype(np.int64)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = source[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    return np.where(inside[..., None], out, 0.0).astype(np.float32), inside


def backward_warp(source: np.ndarray, mv: np.ndarray, scale: float = 1.0, fill: str = "zero") -> WarpResult:
    """Pull every target pixel from the source with bilinear interpolation.

    ``fill="clamp"`` replaces out-of-frame samples by the nearest edge pixel
    (the classic warp-only behaviour) but still reports them as holes.
    """
    _check_mv(source, mv)
    sx, sy = sample_positions(mv, scale)
    color, inside = bilinear(source, sx, sy, clamp=(fill == "clamp"))
    return WarpResult(color, inside.astype(np.float32)[..., None])


def warp_mask_nearest(mask: np.ndarray, mv: np.ndarray, scale: float = 1.0) -> np.ndarray:
    sx, sy = sample_positions(mv, scale)
    out, _ = nearest(mask, sx, sy)
    return out


def forward_warp(source: np.ndarray, mv: np.ndarray, scale: float, depth: np.ndarray) -> WarpResult:
    """Splat each source pixel to ``round(p + scale * mv(p))``; nearer depth wins."""
    _check_mv(source, mv)
    image.same_shape(source, depth)
    h, w = source.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    tx = np.floor(xx + scale * mv[..., 0].astype(np.float64) + 0.5).astype(np.int64).ravel()
    ty = np.floor(yy + scale * mv[..., 1].astype(np.float64) + 0.5).astype(np.int64).ravel()
    ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    src_idx = np.arange(h * w)[ok]
    tgt = (ty * w + tx)[ok]
    d = depth[..., 0].ravel()[ok]
    # sort by target, then depth, then source index: first of each run wins
    order = np.lexsort((src_idx, d, tgt))
    tgt_sorted = tgt[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = tgt_sorted[1:] != tgt_sorted[:-1]
    winners = order[first]
    color = np.zeros((h * w, source.shape[2]), dtype=np.float32)
    valid = np.zeros(h * w, dtype=np.float32)
    color[tgt[winners]] = source.reshape(h * w, -1)[src_idx[winners]]
    valid[tgt[winners]] = 1.0
    return WarpResult(color.reshape(source.shape), valid.reshape(h, w, 1))


_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _shift(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    """out[y, x] = a[y + dy, x + dx], ``fill`` outside."""
    out = np.full_like(a, fill)
    h, w = a.shape[:2]
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    yd = slice(max(0, dy), min(h, h + dy))
    xd = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[yd, xd]
    return out


def backward_holes(mv: np.ndarray, scale: float, stencil: np.ndarray | None = None,
                   source_stencil: np.ndarray | None = None) -> np.ndarray:
    """Boolean map of target pixels without a valid backward source.

    A pixel is a hole when its sample leaves the frame or, given both
    stencils, when a background pixel would sample a dynamic object
    (disocclusion).
    """
    sx, sy = sample_positions(mv, scale)
    h, w = mv.shape[:2]
    eps = 1e-6
    holes = ~((sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps))
    if stencil is not None and source_stencil is not None:
        src, _ = nearest(source_stencil, sx, sy)
        holes |= (stencil[..., 0] < 0.5) & (src[..., 0] > 0.5)
    return holes


def occlusion_motion_vectors(mv: np.ndarray, depth: np.ndarray, stencil: np.ndarray, scale: float = 1.0,
                             source_stencil: np.ndarray | None = None,
                             holes: np.ndarray | None = None) -> np.ndarray:
    """Give disoccluded pixels the motion of the surface that uncovered them.

    Hole pixels take the motion vector of the nearest non-hole pixel that is
    strictly nearer the camera (the occluder), found by 8-neighbour dilation
    through the hole region.  Holes no occluder can reach fall back to the
    nearest non-hole pixel of any depth.  Non-hole pixels are never changed.
    """
    image.same_shape(mv, depth, stencil)
    if holes is None:
        holes = backward_holes(mv, scale, stencil, source_stencil)
    holes = np.asarray(holes, dtype=bool)
    if holes.ndim == 3:
        holes = holes[..., 0]
    out = mv.astype(np.float32).copy()
    if not holes.any():
        return out
    if holes.all():
        return out

    d = depth[..., 0].astype(np.float64)
    assigned = ~holes
    carried = d.copy()
    pending = holes.copy()
    for _ in range(sum(holes.shape)):
        snap_assigned, snap_val, snap_d = assigned.copy(), out.copy(), carried.copy()
        newly = np.zeros_like(pending)
        for dy, dx in _NEIGHBOURS:
            nb_ok = _shift(snap_assigned, dy, dx, False)
            nb_d = _shift(snap_d, dy, dx, np.inf)
            take = pending & ~newly & nb_ok & (nb_d < d)
            if take.any():
                nb_v = _shift(snap_val, dy, dx, 0.0)
                out[take] = nb_v[take]
                carried[take] = nb_d[take]
                newly |= take
        if not newly.any():
            break
        assigned |= newly
        pending &= ~newly

    if pending.any():
        _, (iy, ix) = ndimage.distance_transform_edt(holes, return_indices=True)
        out[pending] = mv[iy[pending], ix[pending]]
    return out


def _guided_core(source_color, source_g: GBufferSet, target_g: GBufferSet, mv, scale, params: GuidedWarpParams):
    h, w = mv.shape[:2]
    sx, sy = sample_positions(mv, scale)
    cx = np.floor(sx + 0.5).astype(np.int64)
    cy = np.floor(sy + 0.5).astype(np.int64)
    r = params.window // 2

    d_t = target_g.depth[..., 0].astype(np.float64)
    n_t = target_g.world_normal.astype(np.float64)
    a_t = target_g.base_color.astype(np.float64)
    d_s = source_g.depth[..., 0].astype(np.float64)
    n_s = source_g.world_normal.astype(np.float64)
    a_s = source_g.base_color.astype(np.float64)
    col = source_color.astype(np.float64)

    depth_range = float(max(d_t.max(), d_s.max()) - min(d_t.min(), d_s.min()))
    sigma_d = params.sigma_depth_frac * max(depth_range, 1e-6)

    def inv2s2(sigma):
        return 0.0 if np.isinf(sigma) else 1.0 / (2.0 * sigma * sigma)

    ks_n, ks_d, ks_a = inv2s2(params.sigma_normal), inv2s2(sigma_d), inv2s2(params.sigma_albedo)

    wsum = np.zeros((h, w))
    acc = np.zeros((h, w, col.shape[2]))
    acc_d = np.zeros((h, w))
    acc_n = np.zeros((h, w, 3))
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            qx, qy = cx + ox, cy + oy
            inside = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
            qxc, qyc = np.clip(qx, 0, w - 1), np.clip(qy, 0, h - 1)
            if params.sigma_spatial <= 0:
                ws = np.where((ox == 0) & (oy == 0), 1.0, 0.0) * np.ones((h, w))
            else:
                ws = np.exp(-((qx - sx) ** 2 + (qy - sy) ** 2) * inv2s2(params.sigma_spatial))
            dn = np.sum((n_t - n_s[qyc, qxc]) ** 2, axis=-1)
            dd = (d_t - d_s[qyc, qxc]) ** 2
            da = np.sum((a_t - a_s[qyc, qxc]) ** 2, axis=-1)
            wq = ws * np.exp(-(dn * ks_n + dd * ks_d + da * ks_a)) * inside
            wsum += wq
            acc += wq[..., None] * col[qyc, qxc]
            acc_d += wq * d_s[qyc, qxc]
            acc_n += wq[..., None] * n_s[qyc, qxc]
    return wsum, acc, acc_d, acc_n


def gbuffer_guided_warp(source_color: np.ndarray, source_g: GBufferSet, target_g: GBufferSet,
                        mv: np.ndarray | None = None, scale: float = 0.5,
                        params: GuidedWarpParams | None = None) -> WarpResult:
    """Joint-bilateral warp guided by target-frame G-buffers.

    Each target pixel blends a window of source pixels around its backward
    sample position; a candidate's weight is the product of Gaussians on its
    spatial offset and on the normal, depth and albedo differences between
    the target pixel and the candidate.  ``mv`` defaults to the target frame's
    motion vectors.  With ``params.occlusion`` the motion of disoccluded pixels
    is replaced by occlusion motion vectors first.
    """
    params = params or GuidedWarpParams()
    params.validate()
    if mv is None:
        mv = target_g.motion_vector
    _check_mv(source_color, mv)
    image.same_shape(source_color, source_g.depth, target_g.depth)
    if params.occlusion:
        mv = occlusion_motion_vectors(mv, target_g.depth, target_g.stencil, scale,
                                      source_stencil=source_g.stencil)
    wsum, acc, acc_d, acc_n = _guided_core(source_color, source_g, target_g, mv, scale, params)
    valid = wsum >= params.min_weight
    safe = np.where(valid, wsum, 1.0)
    color = np.where(valid[..., None], acc / safe[..., None], 0.0)
    depth = np.where(valid, acc_d / safe, 0.0)
    normal = np.where(valid[..., None], acc_n / safe[..., None], 0.0)
    return WarpResult(
        color=image.as_plane(color),
        hole_mask=valid.astype(np.float32)[..., None],
        attrs={"depth": image.as_plane(depth), "world_normal": image.as_plane(normal)},
    )


def warp_attributes(source_g: GBufferSet, mv: np.ndarray, scale: float = 1.0) -> dict[str, np.ndarray]:
    """Backward-warp the depth and normal buffers along ``mv``."""
    sx, sy = sample_positions(mv, scale)
    depth, _ = bilinear(source_g.depth, sx, sy)
    normal, _ = bilinear(source_g.world_normal, sx, sy)
    return {"depth": depth, "world_normal": normal}


def detect_invalid(warped_attrs: dict[str, np.ndarray], target_g: GBufferSet,
                   thresholds: InvalidThresholds | None = None,
                   hole_mask: np.ndarray | None = None) -> np.ndarray:
    """Mask (1 = valid) of warped pixels whose geometry disagrees with the target."""
    th = thresholds or InvalidThresholds()
    d_w = warped_attrs["depth"][..., 0].astype(np.float64)
    d_t = target_g.depth[..., 0].astype(np.float64)
    n_w = warped_attrs["world_normal"].astype(np.float64)
    n_t = target_g.world_normal.astype(np.float64)
    norm = np.linalg.norm(n_w, axis=-1)
    dot = np.sum(n_w * n_t, axis=-1) / np.maximum(norm, 1e-12)
    valid = (np.abs(d_w - d_t) <= th.depth_rel * d_t) & (dot >= th.normal_dot) & (norm > 1e-12)
    if hole_mask is not None:
        valid &= hole_mask[..., 0] > 0.5
    return valid.astype(np.float32)[..., None]
