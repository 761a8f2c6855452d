"""Presentation latency of 2x temporal supersampling by interpolation vs extrapolation.

With refresh interval ``D`` and per-frame render time ``R_i > D``:

* interpolation shows frame ``i`` at ``P_i = 3D - R_i`` after it finishes
  rendering, provided ``R_i + I <= 2D``;
* extrapolation shows it immediately (``P_i = 0``), provided the next frame's
  render plus the extrapolation fits, ``R_{i+1} + E <= 2D``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


class ScenarioError(ValueError):
    pass


@dataclass
class TimingScenario:
    refresh_ms: float
    render_ms: list[float]
    interp_ms: float
    extrap_ms: float

    @classmethod
    def from_hz(cls, hz: float, render_ms, interp_ms: float, extrap_ms: float) -> "TimingScenario":
        return cls(1000.0 / hz, list(render_ms), interp_ms, extrap_ms)

    def validate(self) -> None:
        values = [self.refresh_ms, self.interp_ms, self.extrap_ms, *self.render_ms]
        if not self.render_ms or any(not v > 0 for v in values):
            raise ScenarioError("all timings must be positive")
        bad = [i for i, r in enumerate(self.render_ms) if r <= self.refresh_ms]
        if bad:
            raise ScenarioError(f"render times must exceed the refresh interval (frames {bad})")


@dataclass
class LatencyResult:
    mode: str
    latency_ms: list[float]
    feasible: list[bool]


def presentation_latency(scenario: TimingScenario, mode: str) -> LatencyResult:
    scenario.validate()
    d = scenario.refresh_ms
    r = np.asarray(scenario.render_ms, dtype=np.float64)
    if mode == "interp":
        p = 3 * d - r
        feasible = r + scenario.interp_ms <= 2 * d
    elif mode == "extrap":
        p = np.zeros_like(r)
        nxt = np.append(r[1:], np.nan)
        # the last frame has no successor inside the trace, so nothing constrains it
        feasible = np.where(np.isnan(nxt), True, nxt + scenario.extrap_ms <= 2 * d)
    else:
        raise ValueError(f"mode must be 'interp' or 'extrap', got {mode!r}")
    return LatencyResult(mode, p.tolist(), [bool(f) for f in feasible])


def jnd_report(latencies, threshold_ms: float) -> float:
    """Fraction of frames whose presentation latency exceeds ``threshold_ms``."""
    p = np.asarray(list(latencies), dtype=np.float64)
    if p.size == 0:
        return 0.0
    return float(np.mean(p > threshold_ms))


def latency_csv(scenario: TimingScenario) -> str:
    interp = presentation_latency(scenario, "interp")
    extrap = presentation_latency(scenario, "extrap")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["frame", "render_ms", "interp_latency_ms", "interp_feasible", "extrap_latency_ms", "extrap_feasible"])
    for i, r in enumerate(scenario.render_ms):
        w.writerow([i, f"{r:.4f}", f"{interp.latency_ms[i]:.4f}", int(interp.feasible[i]),
                    f"{extrap.latency_ms[i]:.4f}", int(extrap.feasible[i])])
    return out.getvalue()
