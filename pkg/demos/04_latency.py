"""Why extrapolate: presentation latency, then inference cost versus resolution."""
import numpy as np

from patchex import latency_model as lm, pipeline

s = lm.TimingScenario.from_hz(90, np.linspace(11.5, 20.0, 8), interp_ms=1.0, extrap_ms=1.0)
print(lm.latency_csv(s))
interp = lm.presentation_latency(s, "interp").latency_ms
print(f"interpolation waits {min(interp):.2f}-{max(interp):.2f} ms; "
      f"{lm.jnd_report(interp, 5.0):.0%} of frames exceed a 5 ms JND")

res = pipeline.bench([(160, 90), (320, 180), (480, 270)], iterations=5)
for name in res.resolutions:
    print(f"{name}: whole-frame {res.whole_frame_ms[name]:.1f} ms  patches {res.patch_parallel_ms[name]:.1f} ms")
print(f"latency ~ pixels^{res.fit.b:.2f}")
