"""Adam training of the inpainting networks."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .loss import FeatureExtractor, LossWeights, total_loss
from .networks import NEAR_WIDTHS, FG_WIDTHS, NetworkParams, forward, init_network, leaf_tensors

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class Sample:
    """One training crop, all NCHW without the batch axis."""

    input: np.ndarray  # (7, h, w)
    truth: np.ndarray  # (3, h, w)
    hole: np.ndarray  # (1, h, w), 1 = valid


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch: int = 16
    seed: int = 0
    crop: int = 64
    val_fraction: float = 0.2
    weights: LossWeights = field(default_factory=LossWeights)
    max_seconds: float | None = None
    per_frame: int = 8  # crops drawn per frame when building a dataset

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d or {})
        w = d.pop("weights", None)
        unknown = set(d) - {"lr", "epochs", "batch", "seed", "crop", "val_fraction", "max_seconds", "per_frame"}
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        cfg = cls(**d)
        if w:
            cfg.weights = LossWeights(**w)
        return cfg


@dataclass
class TrainResult:
    params: NetworkParams
    train_loss: list[float]
    val_loss: list[float]
    train_l1: list[float]
    n_train: int
    n_val: int


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    if val_fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _stack(samples: list[Sample], idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.stack([samples[i].input for i in idx]).astype(np.float32),
            np.stack([samples[i].truth for i in idx]).astype(np.float32),
            np.stack([samples[i].hole for i in idx]).astype(np.float32))


def evaluate(net: NetworkParams, samples: list[Sample], idx, weights: LossWeights,
             feat: FeatureExtractor | None, batch: int = 16) -> float:
    if len(idx) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(idx), batch):
        chunk = idx[s : s + batch]
        x, y, m = _stack(samples, chunk)
        pred = forward(net, x)
        value, _ = total_loss(pred, y, m, weights, feat)
        total += float(value.data) * len(chunk)
    return total / len(idx)


def network_for(network_id: str, seed: int) -> NetworkParams:
    if network_id == "fg":
        return init_network("fg", FG_WIDTHS, seed)
    if network_id == "near":
        return init_network("near", NEAR_WIDTHS, seed)
    raise ValueError(f"network_id must be 'fg' or 'near', got {network_id!r}")


def train(network_id: str | NetworkParams, dataset: list[Sample], config: TrainConfig | None = None) -> TrainResult:
    """Train one network; deterministic for a fixed ``config.seed``."""
    cfg = config or TrainConfig()
    if not dataset:
        raise ValueError("empty training dataset")
    net = network_for(network_id, cfg.seed) if isinstance(network_id, str) else network_id.copy()
    feat = FeatureExtractor() if (cfg.weights.vgg > 0 or cfg.weights.style > 0) else None
    train_idx, val_idx = split_indices(len(dataset), cfg.val_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(net.params, lr=cfg.lr)
    curve, val_curve, l1_curve = [], [], []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx)
        ep_loss, ep_l1 = 0.0, 0.0
        for s in range(0, len(order), cfg.batch):
            chunk = order[s : s + cfg.batch]
            x, y, m = _stack(dataset, chunk)
            leaves = leaf_tensors(net)
            pred = forward(net, x, leaves)
            value, parts = total_loss(pred, y, m, cfg.weights, feat)
            if not np.isfinite(value.data):
                norms = {k: float(np.linalg.norm(v)) for k, v in net.params.items()}
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {s // cfg.batch}: "
                                   f"terms={parts}, param norms={norms}")
            value.backward()
            grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in leaves.items()}
            opt.step(net.params, grads)
            ep_loss += float(value.data) * len(chunk)
            ep_l1 += parts["l1"] * len(chunk)
        curve.append(ep_loss / len(order))
        l1_curve.append(ep_l1 / len(order))
        val_curve.append(evaluate(net, dataset, val_idx, cfg.weights, feat, cfg.batch))
        log.info("%s epoch %d train %.5f val %.5f", net.name, epoch, curve[-1], val_curve[-1])
        if cfg.max_seconds is not None and time.perf_counter() - start > cfg.max_seconds:
            log.info("%s: time budget reached after %d epochs", net.name, epoch + 1)
            break
    return TrainResult(net, curve, val_curve, l1_curve, len(train_idx), len(val_idx))
