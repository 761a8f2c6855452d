"""Foveated segmentation into foreground, near-background and far-background.

Offline side: temporal variation of intensity, Otsu thresholding and
rectangle fitting, plus the regression that calibrates the expansion factors.
Real-time side: per-object stencil boxes grown by the object's mean motion.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import image


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingRect:
    x: int
    y: int
    w: int
    h: int

    def clamp(self, width: int, height: int) -> "BoundingRect":
        x0, y0 = max(0, self.x), max(0, self.y)
        x1, y1 = min(width, self.x + self.w), min(height, self.y + self.h)
        if x1 <= x0 or y1 <= y0:
            raise SegmentationError("rectangle lies outside the frame")
        return BoundingRect(x0, y0, x1 - x0, y1 - y0)

    def contains(self, other: "BoundingRect") -> bool:
        return (self.x <= other.x and self.y <= other.y and self.x + self.w >= other.x + other.w
                and self.y + self.h >= other.y + other.h)

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


@dataclass(frozen=True)
class SegmentationParams:
    k_x: float = 2.0
    k_y: float = 2.0

    def __post_init__(self):
        if not (self.k_x > 0 and self.k_y > 0):
            raise ValueError("scaling factors must be positive")


@dataclass
class RegionMasks:
    fg: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [self.fg, self.near, self.far]


def _intensity(frame: np.ndarray) -> np.ndarray:
    frame = image.as_plane(frame)
    if frame.shape[2] >= 3:
        return image.luma(frame)
    return frame[..., :1]


def temporal_variation(frames) -> np.ndarray:
    """Mean absolute frame-to-frame intensity change per pixel."""
    if len(frames) < 2:
        raise SegmentationError("temporal variation needs at least two frames")
    stack = np.stack([_intensity(f)[..., 0].astype(np.float64) for f in frames])
    return image.as_plane(np.abs(np.diff(stack, axis=0)).sum(axis=0) / (len(frames) - 1))


def otsu_threshold(plane: np.ndarray, bins: int = 256) -> float:
    """Otsu threshold on a ``bins``-bin histogram spanning the plane's range.

    Values ``>= threshold`` form the upper class.  Ties go to the lowest
    threshold.
    """
    v = np.asarray(plane, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise SegmentationError("Otsu threshold needs at least two distinct values")
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    p = hist / hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * centers)[:-1]
    mt = float((p * centers).sum())
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = np.where((w0 > 0) & (w1 > 0), (mt * w0 - m0) ** 2 / (w0 * w1), 0.0)
    best = between.max()
    k = int(np.flatnonzero(between >= best - 1e-12 * max(best, 1e-300))[0]) + 1
    return float(edges[k])


def majority3x3(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 3:
        m = m[..., 0]
    counts = ndimage.convolve(m.astype(np.int32), np.ones((3, 3), dtype=np.int32), mode="constant")
    return counts >= 5


def bounding_rect(mask: np.ndarray) -> BoundingRect | None:
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 3:
        m = m[..., 0]
    ys, xs = np.nonzero(m)
    if len(xs) == 0:
        return None
    return BoundingRect(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def offline_segment(frames) -> tuple[np.ndarray, np.ndarray, BoundingRect]:
    """Threshold the temporal variation and fit a rectangle around the high part."""
    var = temporal_variation(frames)
    thr = otsu_threshold(var)
    high = var[..., 0] >= thr
    cleaned = majority3x3(high)
    rect = bounding_rect(cleaned if cleaned.any() else high)
    return var, high.astype(np.float32)[..., None], rect


def object_components(stencil: np.ndarray) -> list[tuple[BoundingRect, np.ndarray]]:
    """Connected stencil components (8-connectivity) with their tight boxes."""
    s = np.asarray(stencil)[..., 0] > 0.5
    labels, n = ndimage.label(s, structure=np.ones((3, 3)))
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        comp = labels == i
        out.append((BoundingRect(xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start), comp))
    return out


def expand_rect(rect: BoundingRect, mv: np.ndarray, stencil: np.ndarray,
                params: SegmentationParams | None = None) -> BoundingRect:
    """Grow ``rect`` by ``k * mean|mv|`` over the stencil pixels, centred, clamped to the frame."""
    params = params or SegmentationParams()
    h, w = mv.shape[:2]
    sel = np.asarray(stencil)
    if sel.ndim == 3:
        sel = sel[..., 0]
    sel = sel > 0.5
    n = int(sel.sum())
    if n == 0:
        raise SegmentationError("empty stencil: no near region")
    vx = float(np.abs(mv[..., 0][sel].astype(np.float64)).mean())
    vy = float(np.abs(mv[..., 1][sel].astype(np.float64)).mean())
    wb, hb = params.k_x * vx, params.k_y * vy
    x0 = math.floor(rect.x - wb / 2 + 1e-9)
    y0 = math.floor(rect.y - hb / 2 + 1e-9)
    x1 = math.ceil(rect.x + rect.w + wb / 2 - 1e-9)
    y1 = math.ceil(rect.y + rect.h + hb / 2 - 1e-9)
    return BoundingRect(x0, y0, x1 - x0, y1 - y0).clamp(w, h)


def near_rects(stencil: np.ndarray, mv: np.ndarray, params: SegmentationParams | None = None) -> list[BoundingRect]:
    return [expand_rect(rect, mv, comp, params) for rect, comp in object_components(stencil)]


def make_masks(stencil: np.ndarray, rects) -> RegionMasks:
    """Foreground = stencil; near = union of rects minus stencil; far = the rest."""
    if isinstance(rects, BoundingRect):
        rects = [rects]
    fg = np.asarray(stencil)[..., 0] > 0.5
    inside = np.zeros_like(fg)
    for r in rects:
        inside[r.slices] = True
    near = inside & ~fg
    far = ~(fg | near)
    as_f = lambda m: m.astype(np.float32)[..., None]  # noqa: E731
    return RegionMasks(as_f(fg), as_f(near), as_f(far))


def segment_frame(stencil: np.ndarray, mv: np.ndarray, params: SegmentationParams | None = None):
    rects = near_rects(stencil, mv, params)
    return make_masks(stencil, rects), rects


@dataclass
class Calibration:
    k_x: float
    k_y: float
    pearson_x: float
    pearson_y: float


def _slope_and_r(v: np.ndarray, extra: np.ndarray, axis: str) -> tuple[float, float]:
    if len(v) < 2 or np.ptp(v) == 0 or np.ptp(extra) == 0:
        raise SegmentationError(f"degenerate regression along {axis}: constant inputs")
    k = float(np.dot(v, extra) / np.dot(v, v))
    r = float(np.corrcoef(v, extra)[0, 1])
    return k, r


def calibrate_k(samples, warn_below: float = 0.5) -> Calibration:
    """Fit expansion factors from ``(vx, vy, w_extra, h_extra)`` samples.

    Slopes are least squares through the origin; Pearson r measures how well
    rectangle growth follows average motion.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise SegmentationError("samples must be rows of (vx, vy, w_extra, h_extra)")
    kx, rx = _slope_and_r(arr[:, 0], arr[:, 2], "x")
    ky, ry = _slope_and_r(arr[:, 1], arr[:, 3], "y")
    for name, r in (("x", rx), ("y", ry)):
        if abs(r) < warn_below:
            warnings.warn(f"weak correlation along {name} (r={r:.3f}); calibrated k is unreliable",
                          RuntimeWarning, stacklevel=2)
    return Calibration(kx, ky, rx, ry)


def calibration_samples(frames, window: int = 3) -> list[tuple[float, float, float, float]]:
    """Measure ``(vx, vy, w_extra, h_extra)`` per window of consecutive frames.

    ``frames`` are :class:`patchex.scene.Frame` objects at integer times.  The
    offline rectangle comes from the window's temporal variation; the extra
    size is taken relative to the stencil box of the window's first frame.
    """
    out = []
    for i in range(len(frames) - window + 1):
        chunk = frames[i : i + window]
        g0 = chunk[0].gbuffers
        g1 = chunk[1].gbuffers
        stencil_rect = bounding_rect(g0.stencil[..., 0] > 0.5)
        sel = g1.stencil[..., 0] > 0.5
        if stencil_rect is None or not sel.any():
            continue
        try:
            _, _, rect = offline_segment([f.color for f in chunk])
        except SegmentationError:
            continue
        vx = float(np.abs(g1.motion_vector[..., 0][sel]).mean())
        vy = float(np.abs(g1.motion_vector[..., 1][sel]).mean())
        out.append((vx, vy, float(rect.w - stencil_rect.w), float(rect.h - stencil_rect.h)))
    return out
