import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchex import latency_model as lm

D90 = 1000.0 / 90


def _scenario(render, interp=1.0, extrap=1.0):
    return lm.TimingScenario(D90, list(render), interp, extrap)


@given(st.lists(st.floats(D90 + 1e-6, 2 * D90 - 1.0), min_size=1, max_size=20))
def test_interpolation_latency_range_at_90hz(render):
    res = lm.presentation_latency(_scenario(render), "interp")
    assert all(D90 - 1e-9 <= p <= 2 * D90 + 1e-9 for p in res.latency_ms)
    assert all(res.feasible)
    assert res.latency_ms == pytest.approx([3 * D90 - r for r in render])


def test_interpolation_latency_decreases_linearly():
    r = np.linspace(D90 + 0.5, 2 * D90 - 1, 6)
    p = np.array(lm.presentation_latency(_scenario(r), "interp").latency_ms)
    assert np.allclose(np.diff(p), -np.diff(r))


@given(st.lists(st.floats(D90 + 1e-6, 40.0), min_size=1, max_size=20))
def test_extrapolation_latency_is_zero(render):
    res = lm.presentation_latency(_scenario(render), "extrap")
    assert res.latency_ms == [0.0] * len(render)


def test_constraint_boundaries_flag_infeasible():
    interp = 2.0
    r = 2 * D90 - interp + 1e-6
    assert lm.presentation_latency(_scenario([r], interp=interp), "interp").feasible == [False]
    assert lm.presentation_latency(_scenario([2 * D90 - interp], interp=interp), "interp").feasible == [True]
    res = lm.presentation_latency(_scenario([15.0, 2 * D90 - 2.0 + 1e-6], extrap=2.0), "extrap")
    assert res.feasible == [False, True]


def test_render_faster_than_refresh_rejected():
    with pytest.raises(lm.ScenarioError):
        lm.presentation_latency(_scenario([D90]), "interp")
    with pytest.raises(lm.ScenarioError):
        lm.presentation_latency(_scenario([15.0], interp=0.0), "interp")


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        lm.presentation_latency(_scenario([15.0]), "other")


def test_jnd_report_examples():
    s = _scenario([12.0, 15.0, 20.0])
    assert lm.jnd_report(lm.presentation_latency(s, "extrap").latency_ms, 3.0) == 0.0
    assert lm.jnd_report(lm.presentation_latency(s, "interp").latency_ms, 5.0) == 1.0
    assert lm.jnd_report(lm.presentation_latency(s, "interp").latency_ms, math.inf) == 0.0


def test_from_hz_and_csv():
    s = lm.TimingScenario.from_hz(90, [12.0, 13.0], 1.0, 1.0)
    assert s.refresh_ms == pytest.approx(D90)
    lines = lm.latency_csv(s).splitlines()
    assert lines[0].startswith("frame,render_ms,interp_latency_ms")
    assert len(lines) == 3
