"""Image quality metrics, stage timing and power-law fitting."""
from __future__ import annotations

import csv
import io
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
STAGES = ("gbuffer", "warping", "preprocessing", "inference", "blending")


def psnr(x: np.ndarray, y: np.ndarray, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def _gauss(a: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(a, sigma=SSIM_SIGMA, truncate=SSIM_RADIUS / SSIM_SIGMA, mode="reflect")


def ssim_map(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = _gauss(x), _gauss(y)
    sxx = _gauss(x * x) - mx * mx
    syy = _gauss(y * y) - my * my
    sxy = _gauss(x * y) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over 11x11 Gaussian windows (sigma 1.5), averaged over channels.

    Windows overlapping the border are dropped when the image is large enough
    to hold at least one full window.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    r = SSIM_RADIUS
    scores = []
    for c in range(x.shape[2]):
        m = ssim_map(x[..., c], y[..., c], data_range)
        if m.shape[0] > 2 * r and m.shape[1] > 2 * r:
            m = m[r:-r, r:-r]
        scores.append(m.mean())
    return float(np.mean(scores))


@dataclass
class PowerLawFit:
    a: float
    b: float
    r2: float


def fit_power_law(points) -> PowerLawFit:
    """Least-squares fit of ``y = a * x**b`` in log-log space."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 3:
        raise ValueError("power-law fit needs at least 3 points")
    if np.any(pts <= 0):
        raise ValueError("power-law fit needs positive values")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("power-law fit needs distinct x values")
    b, log_a = np.polyfit(lx, ly, 1)
    pred = log_a + b * lx
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(float(math.exp(log_a)), float(b), r2)


@dataclass
class StageTimer:
    """Accumulates wall time per pipeline stage across repeated runs."""

    samples: dict[str, list[float]] = field(default_factory=lambda: {s: [] for s in STAGES})
    totals: list[float] = field(default_factory=list)
    _current: dict[str, float] = field(default_factory=dict)
    _start: float = 0.0

    def begin_run(self) -> None:
        self._current = {s: 0.0 for s in STAGES}
        self._start = time.perf_counter()

    @contextmanager
    def stage(self, name: str):
        if name not in STAGES:
            raise KeyError(name)
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self._current[name] += (time.perf_counter() - t0) * 1e3

    def end_run(self) -> None:
        self.totals.append((time.perf_counter() - self._start) * 1e3)
        for s in STAGES:
            self.samples[s].append(self._current[s])

    def table(self) -> list[dict]:
        rows = []
        cumulative = 0.0
        for s in STAGES:
            v = np.asarray(self.samples[s]) if self.samples[s] else np.zeros(1)
            med = float(np.median(v))
            cumulative += med
            rows.append({"stage": s, "median_ms": med, "p90_ms": float(np.percentile(v, 90)),
                         "cumulative_ms": cumulative})
        return rows

    @property
    def median_total(self) -> float:
        return float(np.median(self.totals)) if self.totals else 0.0


def stage_timing(run, iterations: int = 5) -> StageTimer:
    """Call ``run(timer)`` ``iterations`` times and collect per-stage times.

    ``run`` must wrap its work in ``timer.stage(name)`` blocks.
    """
    if iterations < 5:
        raise ValueError("stage timing reports medians over at least 5 iterations")
    timer = StageTimer()
    for _ in range(iterations):
        timer.begin_run()
        run(timer)
        timer.end_run()
    return timer


def timing_csv(timer: StageTimer) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["stage", "median_ms", "p90_ms"])
    for row in timer.table():
        w.writerow([row["stage"], f"{row['median_ms']:.4f}", f"{row['p90_ms']:.4f}"])
    return out.getvalue()


def timing_pretty(timer: StageTimer) -> str:
    lines = [f"{'stage':<14}{'median ms':>12}{'p90 ms':>12}{'cumul. ms':>12}"]
    for row in timer.table():
        lines.append(f"{row['stage']:<14}{row['median_ms']:>12.3f}{row['p90_ms']:>12.3f}{row['cumulative_ms']:>12.3f}")
    lines.append(f"{'total':<14}{timer.median_total:>12.3f}")
    return "\n".join(lines)


def quality_csv(rows) -> str:
    """``rows`` of ``(frame_index, psnr_db, ssim)``."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["frame_index", "psnr_db", "ssim"])
    for idx, p, s in rows:
        w.writerow([idx, f"{p:.6f}", f"{s:.6f}"])
    return out.getvalue()
