"""Demodulation, region blending and final composition."""
from __future__ import annotations

import numpy as np

from . import image
from .scene import GBufferSet, material_response
from .segment import RegionMasks
from .shadow import shadow_apply


def _response(g: GBufferSet) -> np.ndarray:
    return material_response(g.base_color.astype(np.float64), g.specular.astype(np.float64),
                             g.metallic.astype(np.float64))


def demodulate(color: np.ndarray, g: GBufferSet) -> np.ndarray:
    return image.safe_divide(color[..., :3], _response(g))


def modulate(color: np.ndarray, g: GBufferSet) -> np.ndarray:
    return image.as_plane(color[..., :3].astype(np.float64) * _response(g))


def check_partition(masks: RegionMasks) -> None:
    total = masks.fg + masks.near + masks.far
    binary = all(np.all((m == 0) | (m == 1)) for m in masks.as_list())
    if not binary or not np.all(total == 1):
        raise ValueError("region masks do not form an exact partition")


def blend_regions(f1: np.ndarray, f2: np.ndarray, f3: np.ndarray, masks: RegionMasks) -> np.ndarray:
    """``M1*F1 + M2*F2 + M3*F3`` for binary partition masks."""
    check_partition(masks)
    image.same_shape(f1, f2, f3, masks.fg)
    # select rather than multiply-add so every pixel is copied bit-exactly
    out = np.where(masks.fg > 0.5, f1, np.where(masks.near > 0.5, f2, f3))
    return out.astype(np.float32)


def compose_final(regions, shadow_pred: np.ndarray | None, g_target: GBufferSet,
                  attenuation: float = 0.5, clamp: bool = True) -> np.ndarray:
    """Blend the region outputs, apply the predicted shadow, then modulate.

    ``regions`` is ``(F1, F2, F3, masks)`` in demodulated space.
    """
    f1, f2, f3, masks = regions
    merged = blend_regions(f1, f2, f3, masks)
    if shadow_pred is not None:
        merged = shadow_apply(merged, shadow_pred, attenuation)
    out = modulate(merged, g_target)
    if clamp:
        out = np.maximum(out, 0.0)
    return out
