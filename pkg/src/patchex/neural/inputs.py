"""Network input assembly: warped irradiance, hole mask, material channels and LBP texture."""
from __future__ import annotations

import numpy as np

from .. import image
from ..scene import GBufferSet
from ..warp import WarpResult

# neighbour offsets (dy, dx), clockwise from the top-left; index == bit
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def lbp_map(gray: np.ndarray) -> np.ndarray:
    """8-neighbour local binary pattern scaled to [0, 1].

    A bit is set when the neighbour is at least the centre; borders clamp.
    """
    g = image.as_plane(gray, 1)[..., 0]
    h, w = g.shape
    pad = np.pad(g, 1, mode="edge")
    code = np.zeros((h, w), dtype=np.int32)
    for bit, (dy, dx) in enumerate(LBP_OFFSETS):
        nb = pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        code |= (nb >= g).astype(np.int32) << bit
    return (code.astype(np.float32) / 255.0)[..., None]


def assemble_planes(warped: WarpResult, g: GBufferSet) -> np.ndarray:
    """(H, W, 7) input: RGB, hole mask, roughness, metallic, LBP of luma."""
    image.same_shape(warped.color, g.roughness)
    lbp = lbp_map(image.luma(warped.color))
    return np.concatenate([warped.color, warped.hole_mask, g.roughness, g.metallic, lbp], axis=-1).astype(np.float32)


def to_nchw(plane: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(plane).transpose(2, 0, 1)[None])


def from_nchw(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(t)[0].transpose(1, 2, 0)).astype(np.float32)


def assemble_input(warped: WarpResult, g: GBufferSet) -> np.ndarray:
    """The 7-channel network input as a (1, 7, H, W) array."""
    return to_nchw(assemble_planes(warped, g))
