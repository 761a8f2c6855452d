"""Pixel, perceptual and style losses over a frozen feature extractor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

FEATURE_SEED = 0xFEED
FEATURE_WIDTHS = (8, 16, 32)


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    hole: float = 0.5
    valid: float = 0.5
    vgg: float = 0.1
    style: float = 0.01

    def __post_init__(self):
        for k in ("l1", "hole", "valid", "vgg", "style"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be nonnegative")

    def without_perceptual(self) -> "LossWeights":
        return LossWeights(self.l1, self.hole, self.valid, 0.0, 0.0)


class FeatureExtractor:
    """Frozen random 3-stage conv/ReLU stack standing in for a pretrained classifier.

    Stage 1 keeps the resolution; each later stage halves it.
    """

    def __init__(self, seed: int = FEATURE_SEED, in_channels: int = 3, widths=FEATURE_WIDTHS):
        rng = np.random.default_rng(seed)
        self.layers = []
        c = in_channels
        for i, w in enumerate(widths):
            bound = np.sqrt(6.0 / (c * 9))
            weight = rng.uniform(-bound, bound, size=(w, c, 3, 3))
            self.layers.append((weight, 1 if i == 0 else 2))
            c = w

    def features(self, img) -> list[Tensor]:
        x = img if isinstance(img, Tensor) else Tensor(img)
        out = []
        for weight, stride in self.layers:
            x = ag.relu(ag.conv2d(x, Tensor(weight.astype(x.data.dtype)), None, stride))
            out.append(x)
        return out

    fixed_features = features


def _l1(a: Tensor, b) -> Tensor:
    return ag.mean(ag.absolute(ag.sub(a, b)))


def loss_terms(pred: Tensor, truth: np.ndarray, hole_mask: np.ndarray, weights: LossWeights,
               feat: FeatureExtractor | None) -> dict[str, Tensor]:
    """Individual loss terms; ``hole_mask`` is 1 on valid pixels, NCHW with one channel.

    L1 norms are means over all elements, so the masked terms share the
    normaliser of the unmasked one.
    """
    truth = np.asarray(truth, dtype=pred.data.dtype)
    m = np.asarray(hole_mask, dtype=pred.data.dtype)
    diff = ag.sub(pred, truth)
    terms = {
        "l1": ag.mean(ag.absolute(diff)),
        "hole": ag.mean(ag.absolute(ag.mul(diff, 1.0 - m))),
        "valid": ag.mean(ag.absolute(ag.mul(diff, m))),
    }
    if feat is not None and (weights.vgg > 0 or weights.style > 0):
        fp = feat.features(pred)
        ft = [f.data for f in feat.features(truth)]
        vgg, style = None, None
        for a, b in zip(fp, ft):
            t = _l1(a, b)
            vgg = t if vgg is None else ag.add(vgg, t)
            gb = ag.gram(Tensor(b)).data
            s = _l1(ag.gram(a), gb)
            style = s if style is None else ag.add(style, s)
        terms["vgg"] = vgg
        terms["style"] = style
    return terms


def total_loss(pred: Tensor, truth, hole_mask, weights: LossWeights | None = None,
               feat: FeatureExtractor | None = None) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of all terms, ready for ``backward()``, plus scalar values per term."""
    w = weights or LossWeights()
    terms = loss_terms(pred, truth, hole_mask, w, feat)
    total = None
    for k, t in terms.items():
        c = getattr(w, k)
        if c == 0:
            continue
        part = ag.scale(t, c)
        total = part if total is None else ag.add(total, part)
    if total is None:
        total = ag.scale(terms["l1"], 0.0)
    return total, {k: float(t.data) for k, t in terms.items()}


def loss(pred: Tensor, truth, hole_mask, weights: LossWeights | None = None,
         feat: FeatureExtractor | None = None) -> float:
    """Evaluate the loss and back-propagate it into every tensor that requires gradients."""
    total, _ = total_loss(pred, truth, hole_mask, weights, feat)
    total.backward()
    return float(total.data)
