"""Shadow motion estimation and extrapolation.

Shadow masks carry almost no texture, so dense flow between two of them is
estimated with Farneback's two-frame method: every neighbourhood is
approximated by a quadratic polynomial, and the displacement follows from how
the linear coefficients change between frames under a shared quadratic term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import image
from .warp import bilinear, occlusion_motion_vectors, sample_positions


@dataclass(frozen=True)
class FarnebackParams:
    levels: int = 3
    pyr_scale: float = 0.5
    window: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1
    pre_sigma: float = 1.0


def _poly_basis_kernels(n: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """2-D correlation kernels for the basis {1, x, y, x^2, y^2, xy} and the inverse Gram matrix."""
    r = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-r**2 / (2 * sigma**2))
    yy, xx = np.meshgrid(r, r, indexing="ij")
    a = np.outer(g, g)
    basis = np.stack([np.ones_like(xx), xx, yy, xx**2, yy**2, xx * yy])
    kernels = basis * a
    gram = np.einsum("ihw,jhw->ij", basis * a, basis)
    return kernels, np.linalg.inv(gram)


def poly_expansion(img: np.ndarray, n: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel quadratic fit ``f(p+u) ~ u^T A u + b^T u + c``.

    Returns ``A`` of shape (H, W, 2, 2) and ``b`` of shape (H, W, 2), both in
    (x, y) order.
    """
    kernels, ginv = _poly_basis_kernels(n, sigma)
    f = img.astype(np.float64)
    r = np.stack([ndimage.correlate(f, k, mode="reflect") for k in kernels], axis=-1)
    coef = r @ ginv.T
    A = np.empty(f.shape + (2, 2))
    A[..., 0, 0] = coef[..., 3]
    A[..., 1, 1] = coef[..., 4]
    A[..., 0, 1] = A[..., 1, 0] = coef[..., 5] / 2
    b = coef[..., 1:3]
    return A, b


def _sample(field: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Bilinear lookup of ``field`` at ``p + flow(p)`` with edge clamping."""
    h, w = flow.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    shp = field.shape
    flat = field.reshape(h, w, -1)
    out, _ = bilinear(flat, xx + flow[..., 0], yy + flow[..., 1], clamp=True)
    return out.astype(np.float64).reshape(shp)


def _update_flow(A1, b1, A2, b2, flow, window):
    A2s = _sample(A2, flow)
    b2s = _sample(b2, flow)
    A = 0.5 * (A1 + A2s)
    db = -0.5 * (b2s - b1) + np.einsum("hwij,hwj->hwi", A, flow)
    G = np.einsum("hwki,hwkj->hwij", A, A)
    hv = np.einsum("hwki,hwk->hwi", A, db)
    G = ndimage.uniform_filter(G, size=(window, window, 1, 1), mode="reflect")
    hv = ndimage.uniform_filter(hv, size=(window, window, 1), mode="reflect")
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    ok = np.abs(det) > 1e-12
    safe = np.where(ok, det, 1.0)
    dx = (G[..., 1, 1] * hv[..., 0] - G[..., 0, 1] * hv[..., 1]) / safe
    dy = (-G[..., 1, 0] * hv[..., 0] + G[..., 0, 0] * hv[..., 1]) / safe
    new = np.stack([dx, dy], axis=-1)
    return np.where(ok[..., None], new, flow)


def _resize(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    factors = (shape[0] / a.shape[0], shape[1] / a.shape[1]) + (1,) * (a.ndim - 2)
    out = ndimage.zoom(a, factors, order=1, mode="nearest", grid_mode=True)
    return out[: shape[0], : shape[1]]


def farneback_flow(mask_prev: np.ndarray, mask_curr: np.ndarray,
                   params: FarnebackParams | None = None) -> np.ndarray:
    """Dense flow (x, y) in pixels such that ``prev(p) ~ curr(p + flow(p))``.

    Flow is zeroed outside the blurred support of the two masks.
    """
    p = params or FarnebackParams()
    image.same_shape(mask_prev, mask_curr)
    h, w = mask_prev.shape[:2]
    m0 = ndimage.gaussian_filter(np.asarray(mask_prev, np.float64)[..., 0], p.pre_sigma)
    m1 = ndimage.gaussian_filter(np.asarray(mask_curr, np.float64)[..., 0], p.pre_sigma)
    if m0.max() <= 0 and m1.max() <= 0:
        return np.zeros((h, w, 2), dtype=np.float32)

    pyr0, pyr1 = [m0], [m1]
    for _ in range(p.levels - 1):
        nh, nw = int(round(pyr0[-1].shape[0] * p.pyr_scale)), int(round(pyr0[-1].shape[1] * p.pyr_scale))
        if min(nh, nw) < 2 * p.poly_n + 1:
            break
        sig = np.sqrt(1 / p.pyr_scale**2 - 1) * 0.5
        pyr0.append(_resize(ndimage.gaussian_filter(pyr0[-1], sig), (nh, nw)))
        pyr1.append(_resize(ndimage.gaussian_filter(pyr1[-1], sig), (nh, nw)))

    flow = np.zeros(pyr0[-1].shape + (2,))
    for lvl in range(len(pyr0) - 1, -1, -1):
        f0, f1 = pyr0[lvl], pyr1[lvl]
        if flow.shape[:2] != f0.shape:
            sy, sx = f0.shape[0] / flow.shape[0], f0.shape[1] / flow.shape[1]
            flow = _resize(flow, f0.shape) * np.array([sx, sy])
        A1, b1 = poly_expansion(f0, p.poly_n, p.poly_sigma)
        A2, b2 = poly_expansion(f1, p.poly_n, p.poly_sigma)
        for _ in range(p.iterations):
            flow = _update_flow(A1, b1, A2, b2, flow, p.window)

    support = (m0 + m1) > 1e-3
    flow = np.where(support[..., None], flow, 0.0)
    return image.as_plane(flow)


def extrapolate_shadow(mask_t: np.ndarray, flow: np.ndarray, scale: float = 0.5) -> np.ndarray:
    """Advance ``mask_t`` by ``scale`` times ``flow``.

    Pixels without flow (outside its support) borrow the flow of the nearest
    supported pixel, so the mask can move into previously empty space.
    """
    image.same_shape(mask_t, flow)
    support = np.any(flow != 0, axis=-1) | (mask_t[..., 0] > 0.5)
    holes = ~support
    depth = np.ones(mask_t.shape[:2] + (1,), dtype=np.float32)
    filled = occlusion_motion_vectors(flow, depth, depth, holes=holes)
    sx, sy = sample_positions(filled, scale)
    out, _ = bilinear(mask_t, sx, sy)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def shadow_apply(shadeless: np.ndarray, shadow_pred: np.ndarray, attenuation: float = 0.5) -> np.ndarray:
    """Add the (non-positive) shadow layer ``-attenuation * shadow * shadeless``."""
    image.same_shape(shadeless, shadow_pred)
    s = np.clip(shadow_pred.astype(np.float64), 0.0, 1.0)
    base = shadeless.astype(np.float64)
    layer = -attenuation * s * base
    return image.as_plane(base + layer)


def mask_iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    aa, bb = np.asarray(a) > threshold, np.asarray(b) > threshold
    union = np.logical_or(aa, bb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(aa, bb).sum() / union)
