"""Deterministic 2.5D layered renderer that produces frames plus G-buffers.

Frames are emitted at half-interval timesteps ``t = 0, 0.5, 1, ...`` so that
every integer (rendered) frame has a ground-truth mid-frame after it.

Screen conventions: x grows to the right, y grows downward, depth grows away
from the camera.  Motion vectors hold the on-screen displacement of the
visible surface over one full frame interval ending at the emitted time,
stored at the surface's current pixel (the backward convention used by
:mod:`patchex.warp`).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import image

SHADOW_ATTENUATION = 0.5
SPECULAR_SCALE = 0.08
TILE = 64
AMBIENT = 0.2

BUFFER_NAMES = (
    "base_color",
    "metallic",
    "specular",
    "roughness",
    "depth",
    "world_normal",
    "stencil",
    "motion_vector",
    "shadow_mask",
    "nov",
)
BUFFER_CHANNELS = {
    "base_color": 3,
    "metallic": 1,
    "specular": 1,
    "roughness": 1,
    "depth": 1,
    "world_normal": 3,
    "stencil": 1,
    "motion_vector": 2,
    "shadow_mask": 1,
    "nov": 1,
}


class SceneError(ValueError):
    pass


class DatasetError(SceneError):
    """A dataset directory is malformed."""


@dataclass
class GBufferSet:
    base_color: np.ndarray
    metallic: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray
    depth: np.ndarray
    world_normal: np.ndarray
    stencil: np.ndarray
    motion_vector: np.ndarray
    shadow_mask: np.ndarray
    nov: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape[:2]

    def buffers(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BUFFER_NAMES}

    @classmethod
    def from_buffers(cls, buffers: dict[str, np.ndarray]) -> "GBufferSet":
        missing = [n for n in BUFFER_NAMES if n not in buffers]
        if missing:
            raise SceneError(f"missing buffers: {', '.join(missing)}")
        return cls(**{n: image.as_plane(buffers[n], BUFFER_CHANNELS[n]) for n in BUFFER_NAMES})


@dataclass
class Frame:
    time: float
    color: np.ndarray
    gbuffers: GBufferSet

    @property
    def pretonemap(self) -> np.ndarray:
        # no tonemapping stage exists, so the HDR color is the color itself
        return self.color


@dataclass
class Layer:
    """Textured rectangle in world space; ``rect=None`` covers the whole plane."""

    depth: float
    base_color: tuple[float, float, float] = (0.6, 0.6, 0.6)
    rect: tuple[int, int, int, int] | None = None
    metallic: float = 0.0
    specular: float = 0.5
    roughness: float = 0.7
    texture_strength: float = 0.6
    bump: float = 0.25


@dataclass
class Sprite:
    """Dynamic object whose top-left corner follows a polynomial in time."""

    size: tuple[int, int]
    depth: float
    trajectory_x: tuple[float, ...]
    trajectory_y: tuple[float, ...]
    base_color: tuple[float, float, float] = (0.8, 0.3, 0.2)
    shape: str = "ellipse"
    metallic: float = 0.2
    specular: float = 0.5
    roughness: float = 0.4
    cast_shadow: bool = True
    texture_strength: float = 0.4

    def position(self, t: float) -> tuple[float, float]:
        px = sum(c * t**i for i, c in enumerate(self.trajectory_x))
        py = sum(c * t**i for i, c in enumerate(self.trajectory_y))
        return float(px), float(py)


@dataclass
class SceneSpec:
    width: int
    height: int
    frames: int
    seed: int = 0
    layers: list[Layer] = field(default_factory=list)
    sprites: list[Sprite] = field(default_factory=list)
    light_angle: float = 45.0
    camera_pan: tuple[float, float] = (0.0, 0.0)

    @property
    def times(self) -> list[float]:
        return [k / 2 for k in range(2 * self.frames - 1)]

    def validate(self) -> None:
        if self.width < 32 or self.height < 32:
            raise SceneError(f"resolution must be at least 32x32, got {self.width}x{self.height}")
        if self.frames < 3:
            raise SceneError(f"need at least 3 frames, got {self.frames}")
        if not 0.0 < self.light_angle < 90.0:
            raise SceneError("light angle must lie strictly between 0 and 90 degrees")
        for i, s in enumerate(self.sprites):
            if s.size[0] < 1 or s.size[1] < 1 or s.depth <= 0:
                raise SceneError(f"sprite {i} has invalid size or depth")
            # the t-1 sample used for motion vectors must stay in range too
            for t in [-1.0] + self.times:
                x, y = s.position(t)
                if not (-2 * self.width <= x <= 3 * self.width and -2 * self.height <= y <= 3 * self.height):
                    raise SceneError(f"sprite {i} leaves the frame margin at t={t}")
        for i, layer in enumerate(self.layers):
            if layer.depth <= 0:
                raise SceneError(f"layer {i} has non-positive depth")

    @classmethod
    def from_config(cls, cfg: dict) -> "SceneSpec":
        """Build a scene from a parsed config mapping (see README for keys)."""
        try:
            w, h = cfg["resolution"]
            light = cfg.get("light", {})
            camera = cfg.get("camera", {})
            layers = [
                Layer(
                    depth=float(lc["depth"]),
                    base_color=tuple(lc.get("base_color", (0.6, 0.6, 0.6))),
                    rect=tuple(lc["rect"]) if lc.get("rect") is not None else None,
                    metallic=float(lc.get("metallic", 0.0)),
                    specular=float(lc.get("specular", 0.5)),
                    roughness=float(lc.get("roughness", 0.7)),
                )
                for lc in cfg.get("layers", [])
            ]
            sprites = [
                Sprite(
                    size=tuple(sc["size"]),
                    depth=float(sc["depth"]),
                    trajectory_x=tuple(float(v) for v in sc["trajectory"]["x"]),
                    trajectory_y=tuple(float(v) for v in sc["trajectory"]["y"]),
                    base_color=tuple(sc.get("base_color", (0.8, 0.3, 0.2))),
                    shape=sc.get("shape", "ellipse"),
                    metallic=float(sc.get("metallic", 0.2)),
                    specular=float(sc.get("specular", 0.5)),
                    roughness=float(sc.get("roughness", 0.4)),
                    cast_shadow=bool(sc.get("cast_shadow", True)),
                )
                for sc in cfg.get("sprites", [])
            ]
            spec = cls(
                width=int(w),
                height=int(h),
                frames=int(cfg["frames"]),
                seed=int(cfg.get("seed", 0)),
                layers=layers,
                sprites=sprites,
                light_angle=float(light.get("angle", 45.0)),
                camera_pan=tuple(float(v) for v in camera.get("pan", (0.0, 0.0))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"invalid scene config: {exc}") from exc
        spec.validate()
        return spec


def load_scene_config(path: str | os.PathLike) -> SceneSpec:
    import yaml

    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    return SceneSpec.from_config(cfg.get("scene", cfg))


# ---------------------------------------------------------------------------
# textures


def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    n = rng.random(shape)
    axes = tuple(range(2))
    n = ndimage.gaussian_filter(n, sigma=[sigma if a in axes else 0 for a in range(n.ndim)], mode="wrap")
    n -= n.min()
    return n / max(n.max(), 1e-12)


def _normals_from_height(height: np.ndarray, strength: float) -> np.ndarray:
    gy, gx = np.gradient(height)
    n = np.stack([-strength * gx * 8, -strength * gy * 8, np.ones_like(height)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass
class _LayerTex:
    albedo: np.ndarray  # (TILE, TILE, 3)
    normal: np.ndarray  # (TILE, TILE, 3)


@dataclass
class _SpriteTex:
    albedo: np.ndarray  # (h, w, 3)
    normal: np.ndarray  # (h, w, 3)
    alpha: np.ndarray  # (h, w) bool


def _layer_texture(layer: Layer, seed: int, index: int) -> _LayerTex:
    rng = np.random.default_rng([seed, 1, index])
    noise = _smooth_noise(rng, (TILE, TILE, 3), sigma=2.5)
    base = np.asarray(layer.base_color, dtype=np.float64)
    albedo = base * (1.0 - layer.texture_strength) + layer.texture_strength * noise
    albedo = np.clip(albedo, 0.05, 1.0)
    height = _smooth_noise(rng, (TILE, TILE), sigma=3.0)
    return _LayerTex(albedo, _normals_from_height(height, layer.bump))


def _sprite_texture(sprite: Sprite, seed: int, index: int) -> _SpriteTex:
    w, h = sprite.size
    rng = np.random.default_rng([seed, 2, index])
    noise = _smooth_noise(rng, (h, w, 3), sigma=1.5)
    base = np.asarray(sprite.base_color, dtype=np.float64)
    albedo = np.clip(base * (1.0 - sprite.texture_strength) + sprite.texture_strength * noise, 0.05, 1.0)
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx + 0.5) / w * 2 - 1
    v = (yy + 0.5) / h * 2 - 1
    if sprite.shape == "ellipse":
        alpha = u**2 + v**2 <= 1.0
    elif sprite.shape == "rect":
        alpha = np.ones((h, w), dtype=bool)
    else:
        raise SceneError(f"unknown sprite shape {sprite.shape!r}")
    r2 = np.clip(u**2 + v**2, 0, 1)
    normal = np.stack([0.7 * u, 0.7 * v, np.sqrt(1.0 - 0.49 * r2)], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    return _SpriteTex(albedo, normal, alpha)


def light_direction(angle_deg: float) -> np.ndarray:
    """Unit vector towards the light; it sits up-left of the scene, tilted by ``angle_deg`` above the screen plane."""
    a = math.radians(angle_deg)
    d = np.array([-math.cos(a) / math.sqrt(2), -math.cos(a) / math.sqrt(2), math.sin(a)])
    return d / np.linalg.norm(d)


def shadow_offset_per_depth(angle_deg: float) -> float:
    """Screen-space shadow shift along +x and +y per unit of depth gap."""
    return 1.0 / math.tan(math.radians(angle_deg))


def material_response(base_color: np.ndarray, specular: np.ndarray, metallic: np.ndarray) -> np.ndarray:
    """``Albedo + Specular * 0.08 * (1 - Metallic)`` per channel."""
    return base_color + specular * SPECULAR_SCALE * (1.0 - metallic)


def _nearest(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.int64)


class Renderer:
    """Holds the per-scene textures so individual timesteps render independently."""

    def __init__(self, spec: SceneSpec):
        spec.validate()
        self.spec = spec
        self.layer_tex = [_layer_texture(l, spec.seed, i) for i, l in enumerate(spec.layers)]
        self.sprite_tex = [_sprite_texture(s, spec.seed, i) for i, s in enumerate(spec.sprites)]
        self.light = light_direction(spec.light_angle)
        self._yy, self._xx = np.mgrid[0 : spec.height, 0 : spec.width]

    def _sprite_screen_pos(self, sprite: Sprite, t: float) -> tuple[float, float]:
        x, y = sprite.position(t)
        return x - self.spec.camera_pan[0] * t, y - self.spec.camera_pan[1] * t

    def _sprite_coverage(self, idx: int, t: float, dx: float = 0.0, dy: float = 0.0):
        """Local texel indices and coverage of sprite ``idx`` at pixel centres shifted by (-dx, -dy)."""
        sprite = self.spec.sprites[idx]
        tex = self.sprite_tex[idx]
        sx, sy = self._sprite_screen_pos(sprite, t)
        lx = _nearest(self._xx - sx - dx)
        ly = _nearest(self._yy - sy - dy)
        h, w = tex.alpha.shape
        inside = (lx >= 0) & (lx < w) & (ly >= 0) & (ly < h)
        cov = np.zeros(inside.shape, dtype=bool)
        cov[inside] = tex.alpha[ly[inside], lx[inside]]
        return cov, np.clip(lx, 0, w - 1), np.clip(ly, 0, h - 1)

    def render(self, t: float) -> Frame:
        spec = self.spec
        H, W = spec.height, spec.width
        zbuf = np.full((H, W), np.inf)
        albedo = np.zeros((H, W, 3))
        normal = np.zeros((H, W, 3))
        normal[..., 2] = 1.0
        metallic = np.zeros((H, W))
        specular = np.zeros((H, W))
        roughness = np.zeros((H, W))
        stencil = np.zeros((H, W))
        mv = np.zeros((H, W, 2))
        pan = np.asarray(spec.camera_pan, dtype=np.float64)

        for layer, tex in zip(spec.layers, self.layer_tex):
            wx = _nearest(self._xx + pan[0] * t)
            wy = _nearest(self._yy + pan[1] * t)
            if layer.rect is None:
                cov = np.ones((H, W), dtype=bool)
            else:
                rx, ry, rw, rh = layer.rect
                cov = (wx >= rx) & (wx < rx + rw) & (wy >= ry) & (wy < ry + rh)
            win = cov & (layer.depth < zbuf)
            tx, ty = np.mod(wx, TILE), np.mod(wy, TILE)
            zbuf[win] = layer.depth
            albedo[win] = tex.albedo[ty[win], tx[win]]
            normal[win] = tex.normal[ty[win], tx[win]]
            metallic[win] = layer.metallic
            specular[win] = layer.specular
            roughness[win] = layer.roughness
            stencil[win] = 0.0
            mv[win] = -pan

        for idx, sprite in enumerate(spec.sprites):
            cov, lx, ly = self._sprite_coverage(idx, t)
            win = cov & (sprite.depth < zbuf)
            tex = self.sprite_tex[idx]
            zbuf[win] = sprite.depth
            albedo[win] = tex.albedo[ly[win], lx[win]]
            normal[win] = tex.normal[ly[win], lx[win]]
            metallic[win] = sprite.metallic
            specular[win] = sprite.specular
            roughness[win] = sprite.roughness
            stencil[win] = 1.0
            x0, y0 = self._sprite_screen_pos(sprite, t - 1.0)
            x1, y1 = self._sprite_screen_pos(sprite, t)
            mv[win] = (x1 - x0, y1 - y0)

        if t == 0:
            mv[:] = 0.0
        if not np.all(np.isfinite(zbuf)):
            raise SceneError("scene leaves pixels uncovered; add a full-frame background layer")

        shadow = np.zeros((H, W), dtype=bool)
        per_depth = shadow_offset_per_depth(spec.light_angle)
        for idx, sprite in enumerate(spec.sprites):
            if not sprite.cast_shadow:
                continue
            receivers = zbuf > sprite.depth
            gaps = np.unique(zbuf[receivers])
            for d in gaps:
                off = (d - sprite.depth) * per_depth
                cov, _, _ = self._sprite_coverage(idx, t, off, off)
                shadow |= cov & (zbuf == d)

        irradiance = AMBIENT + (1.0 - AMBIENT) * np.clip(normal @ self.light, 0.0, None)
        response = material_response(albedo, specular[..., None], metallic[..., None])
        shadeless = irradiance[..., None] * response
        color = shadeless - SHADOW_ATTENUATION * shadow[..., None] * shadeless

        g = GBufferSet(
            base_color=image.as_plane(albedo),
            metallic=image.as_plane(metallic),
            specular=image.as_plane(specular),
            roughness=image.as_plane(roughness),
            depth=image.as_plane(zbuf),
            world_normal=image.as_plane(normal),
            stencil=image.as_plane(stencil),
            motion_vector=image.as_plane(mv),
            shadow_mask=image.as_plane(shadow.astype(np.float32)),
            nov=image.as_plane(np.clip(normal[..., 2], 0.0, 1.0)),
        )
        return Frame(time=float(t), color=image.as_plane(color), gbuffers=g)

    def irradiance(self, t: float) -> np.ndarray:
        """Shadow-free demodulated radiance at time ``t`` (a ground-truth helper)."""
        frame = self.render(t)
        n = frame.gbuffers.world_normal.astype(np.float64)
        e = AMBIENT + (1.0 - AMBIENT) * np.clip(n @ self.light, 0.0, None)
        return image.as_plane(np.repeat(e, 3, axis=-1))


def render_sequence(spec: SceneSpec, workers: int = 1) -> list[Frame]:
    renderer = Renderer(spec)
    if workers <= 1:
        return [renderer.render(t) for t in spec.times]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(renderer.render, spec.times))


# ---------------------------------------------------------------------------
# dataset files

MANIFEST = "manifest"
DATASET_FORMAT = "patchex-dataset 1"


def write_dataset(sequence: list[Frame], directory: str | os.PathLike, overwrite: bool = False) -> None:
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()) and not overwrite:
        raise FileExistsError(f"{directory} exists and is not empty")
    directory.mkdir(parents=True, exist_ok=True)
    h, w = sequence[0].color.shape[:2]
    for i, frame in enumerate(sequence):
        fdir = directory / f"frame_{i:05d}"
        fdir.mkdir(exist_ok=True)
        image.write_plane(fdir / "color.pfex", frame.color)
        for name, plane in frame.gbuffers.buffers().items():
            image.write_plane(fdir / f"{name}.pfex", plane)
    lines = [
        f"format: {DATASET_FORMAT}",
        f"width: {w}",
        f"height: {h}",
        f"frames: {len(sequence)}",
        "buffers: color " + " ".join(BUFFER_NAMES),
        "aliases: pretonemap=color",
        "times: " + " ".join(repr(float(f.time)) for f in sequence),
    ]
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")


def read_manifest(directory: str | os.PathLike) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {directory}")
    fields = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    if fields.get("format") != DATASET_FORMAT:
        raise DatasetError(f"unrecognised dataset format {fields.get('format')!r}")
    return {
        "width": int(fields["width"]),
        "height": int(fields["height"]),
        "frames": int(fields["frames"]),
        "buffers": fields["buffers"].split(),
        "times": [float(v) for v in fields["times"].split()],
    }


def read_dataset(directory: str | os.PathLike) -> list[Frame]:
    directory = Path(directory)
    man = read_manifest(directory)
    frames = []
    for i, t in enumerate(man["times"]):
        fdir = directory / f"frame_{i:05d}"
        missing = [b for b in man["buffers"] if not (fdir / f"{b}.pfex").exists()]
        if missing:
            raise FileNotFoundError(f"{fdir}: missing {', '.join(missing)}")
        color = image.read_plane(fdir / "color.pfex")
        g = GBufferSet.from_buffers({n: image.read_plane(fdir / f"{n}.pfex") for n in BUFFER_NAMES})
        frames.append(Frame(time=t, color=color, gbuffers=g))
    return frames


# ---------------------------------------------------------------------------
# stock scenes


def disocclusion_scene(width: int = 128, height: int = 96, frames: int = 6, seed: int = 7,
                       velocity: float = 4.0, shadows: bool = True) -> SceneSpec:
    """A large sprite sliding right over a textured background."""
    return SceneSpec(
        width=width,
        height=height,
        frames=frames,
        seed=seed,
        layers=[Layer(depth=20.0, base_color=(0.35, 0.55, 0.75), texture_strength=0.7)],
        sprites=[
            Sprite(
                size=(width // 4, height // 2),
                depth=12.0,
                trajectory_x=(width * 0.2, velocity),
                trajectory_y=(height * 0.2, 0.0),
                base_color=(0.9, 0.5, 0.2),
                shape="rect",
                cast_shadow=shadows,
            )
        ],
        light_angle=60.0,
    )


def random_scene(seed: int, width: int = 128, height: int = 96, frames: int = 8,
                 n_sprites: int | None = None, pan: bool = False) -> SceneSpec:
    """Seeded scene generator used for the training and evaluation corpora."""
    rng = np.random.default_rng([seed, 99])
    layers = [Layer(depth=30.0, base_color=tuple(rng.uniform(0.25, 0.8, 3)), texture_strength=0.6)]
    for _ in range(int(rng.integers(0, 3))):
        lw, lh = int(rng.integers(width // 6, width // 2)), int(rng.integers(height // 6, height // 2))
        layers.append(
            Layer(
                depth=float(rng.uniform(20.0, 28.0)),
                base_color=tuple(rng.uniform(0.2, 0.9, 3)),
                rect=(int(rng.integers(0, width - lw)), int(rng.integers(0, height - lh)), lw, lh),
                metallic=float(rng.uniform(0, 0.5)),
                roughness=float(rng.uniform(0.3, 0.9)),
            )
        )
    n = int(rng.integers(1, 3)) if n_sprites is None else n_sprites
    sprites = []
    for _ in range(n):
        sw, sh = int(rng.integers(width // 8, width // 4)), int(rng.integers(height // 6, height // 3))
        vx, vy = rng.integers(-4, 5, size=2).astype(float)
        if vx == 0 and vy == 0:
            vx = 2.0
        x0 = float(rng.uniform(max(0.0, -vx * frames) + 2, max(3.0, width - sw - max(0.0, vx * frames) - 2)))
        y0 = float(rng.uniform(max(0.0, -vy * frames) + 2, max(3.0, height - sh - max(0.0, vy * frames) - 2)))
        sprites.append(
            Sprite(
                size=(sw, sh),
                depth=float(rng.uniform(8.0, 16.0)),
                trajectory_x=(round(x0), float(vx)),
                trajectory_y=(round(y0), float(vy)),
                base_color=tuple(rng.uniform(0.3, 0.95, 3)),
                shape=str(rng.choice(["ellipse", "rect"])),
                metallic=float(rng.uniform(0, 0.6)),
                specular=float(rng.uniform(0.2, 0.8)),
                roughness=float(rng.uniform(0.2, 0.8)),
            )
        )
    camera = (float(rng.integers(-2, 3)), 0.0) if pan else (0.0, 0.0)
    return SceneSpec(width, height, frames, seed, layers, sprites, float(rng.uniform(40, 70)), camera)
