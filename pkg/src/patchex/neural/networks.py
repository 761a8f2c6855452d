"""Gated-convolution encoder/decoder networks and their checkpoint format."""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor

INPUT_CHANNELS = 7
OUTPUT_CHANNELS = 3

FG_WIDTHS = (16, 32, 64)
NEAR_WIDTHS = (8, 16)

CKPT_MAGIC = b"PXNN"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    """One node of the network graph.

    ``kind`` is ``gated`` (gated 3x3 conv), ``conv`` (plain 3x3 conv),
    ``up`` (nearest 2x upsample) or ``concat`` (channel concatenation).
    """

    name: str
    kind: str
    inputs: tuple[str, ...]
    in_ch: int = 0
    out_ch: int = 0
    stride: int = 1


def unet_steps(in_ch: int, widths: tuple[int, ...], out_ch: int = OUTPUT_CHANNELS) -> list[Step]:
    steps = [Step("e0", "gated", ("input",), in_ch, widths[0], 1)]
    for lvl in range(1, len(widths)):
        steps.append(Step(f"e{lvl}", "gated", (f"e{lvl - 1}",), widths[lvl - 1], widths[lvl], 2))
    prev, prev_ch = f"e{len(widths) - 1}", widths[-1]
    for lvl in range(len(widths) - 2, -1, -1):
        steps.append(Step(f"u{lvl}", "up", (prev,)))
        steps.append(Step(f"c{lvl}", "concat", (f"u{lvl}", f"e{lvl}")))
        steps.append(Step(f"d{lvl}", "gated", (f"c{lvl}",), prev_ch + widths[lvl], widths[lvl], 1))
        prev, prev_ch = f"d{lvl}", widths[lvl]
    steps.append(Step("out", "conv", (prev,), prev_ch, out_ch, 1))
    return steps


def param_shapes(steps: list[Step], k: int = 3) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for s in steps:
        if s.kind == "gated":
            for tag in ("g", "f"):
                shapes[f"{s.name}.w{tag}"] = (s.out_ch, s.in_ch, k, k)
                shapes[f"{s.name}.b{tag}"] = (s.out_ch,)
        elif s.kind == "conv":
            shapes[f"{s.name}.w"] = (s.out_ch, s.in_ch, k, k)
            shapes[f"{s.name}.b"] = (s.out_ch,)
    return shapes


@dataclass
class NetworkParams:
    name: str
    in_channels: int
    widths: tuple[int, ...]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def steps(self) -> list[Step]:
        return unet_steps(self.in_channels, self.widths)

    @property
    def depth_factor(self) -> int:
        """Spatial sizes must be multiples of this."""
        return 2 ** (len(self.widths) - 1)

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.name, self.in_channels, self.widths,
                             {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.name, self.in_channels, self.widths,
                             {k: v.copy() for k, v in self.params.items()})


def init_network(name: str, widths: tuple[int, ...], seed: int = 0, in_channels: int = INPUT_CHANNELS,
                 zero_final: bool = False) -> NetworkParams:
    """Kaiming-uniform (fan-in) weights, zero biases, drawn in parameter order."""
    rng = np.random.default_rng(seed)
    params = {}
    for key, shape in param_shapes(unet_steps(in_channels, widths)).items():
        if ".b" in key:
            params[key] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = shape[1] * shape[2] * shape[3]
        bound = np.sqrt(6.0 / fan_in)
        params[key] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    if zero_final:
        params["out.w"][:] = 0.0
        params["out.b"][:] = 0.0
    return NetworkParams(name, in_channels, tuple(widths), params)


def fg_network(seed: int = 0) -> NetworkParams:
    return init_network("fg", FG_WIDTHS, seed)


def near_network(seed: int = 0) -> NetworkParams:
    return init_network("near", NEAR_WIDTHS, seed)


def gated_conv(x: Tensor, wg: Tensor, bg: Tensor, wf: Tensor, bf: Tensor, stride: int = 1) -> Tensor:
    """``sigmoid(conv(Wg, x)) * conv(Wf, x)``."""
    gate = ag.sigmoid(ag.conv2d(x, wg, bg, stride))
    feat = ag.conv2d(x, wf, bf, stride)
    return ag.mul(gate, feat)


def forward(net: NetworkParams, x, leaves: dict[str, Tensor] | None = None) -> Tensor:
    """Run the network on an NCHW input.

    Pass ``leaves`` (parameter name -> Tensor with ``requires_grad``) to build
    a differentiable graph; otherwise the stored arrays are used as constants.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    n, c, h, w = x.shape
    f = net.depth_factor
    if h % f or w % f:
        raise ValueError(f"spatial size {h}x{w} must be a multiple of {f}")
    p = leaves if leaves is not None else {k: Tensor(v) for k, v in net.params.items()}
    vals = {"input": x}
    for s in net.steps:
        if s.kind == "gated":
            vals[s.name] = gated_conv(vals[s.inputs[0]], p[f"{s.name}.wg"], p[f"{s.name}.bg"],
                                      p[f"{s.name}.wf"], p[f"{s.name}.bf"], s.stride)
        elif s.kind == "conv":
            vals[s.name] = ag.conv2d(vals[s.inputs[0]], p[f"{s.name}.w"], p[f"{s.name}.b"], s.stride)
        elif s.kind == "up":
            vals[s.name] = ag.upsample2x(vals[s.inputs[0]])
        elif s.kind == "concat":
            vals[s.name] = ag.concat([vals[i] for i in s.inputs], axis=1)
        else:
            raise ValueError(f"unknown step kind {s.kind}")
    return vals["out"]


def leaf_tensors(net: NetworkParams) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in net.params.items()}


def infer(net: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Inference on an NCHW array of any spatial size (edge-padded to fit)."""
    n, c, h, w = x.shape
    f = net.depth_factor
    ph, pw = (-h) % f, (-w) % f
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    out = forward(net, x.astype(np.float32)).data
    return out[:, :, :h, :w]


# ---------------------------------------------------------------------------
# checkpoints


def encode_checkpoint(net: NetworkParams) -> bytes:
    manifest = [f"name {net.name}", f"in_channels {net.in_channels}",
                "widths " + " ".join(str(w) for w in net.widths)]
    shapes = param_shapes(net.steps)
    for key, shape in shapes.items():
        manifest.append(f"param {key} " + " ".join(str(d) for d in shape))
    text = ("\n".join(manifest) + "\n").encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(text)))
    buf.write(text)
    for key, shape in shapes.items():
        arr = net.params[key]
        if arr.shape != shape:
            raise CheckpointError(f"{key}: shape {arr.shape} != {shape}")
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> NetworkParams:
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, n_text = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    text = data[12 : 12 + n_text].decode()
    offset = 12 + n_text
    name, in_ch, widths, entries = None, None, None, []
    for line in text.splitlines():
        parts = line.split()
        if parts[0] == "name":
            name = parts[1]
        elif parts[0] == "in_channels":
            in_ch = int(parts[1])
        elif parts[0] == "widths":
            widths = tuple(int(v) for v in parts[1:])
        elif parts[0] == "param":
            entries.append((parts[1], tuple(int(v) for v in parts[2:])))
    if name is None or in_ch is None or widths is None:
        raise CheckpointError("incomplete checkpoint manifest")
    expected = param_shapes(unet_steps(in_ch, widths))
    if dict(entries) != expected:
        raise CheckpointError("checkpoint layer manifest does not match its architecture")
    params = {}
    for key, shape in entries:
        nbytes = 4 * int(np.prod(shape))
        chunk = data[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"truncated weights for {key}")
        params[key] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint weights")
    return NetworkParams(name, in_ch, widths, params)


def save_checkpoint(path: str | os.PathLike, net: NetworkParams) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(net))


def load_checkpoint(path: str | os.PathLike) -> NetworkParams:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
