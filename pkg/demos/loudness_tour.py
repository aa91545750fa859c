"""
Measuring loudness
==================

Integrated loudness and loudness range on a few test signals, then
normalising a limited and an unlimited mix to the same level.
"""

import numpy as np

from delimiter import AudioBuffer, LimiterParams, apply_limiter, integrated_loudness, loudness_normalize, loudness_range
from delimiter.metrics import dynamics_report

sr = 48000
t = np.arange(10 * sr) / sr
sine = 10 ** (-3.01 / 20) * np.sin(2 * np.pi * 997 * t)
print("997 Hz sine: %.3f LUFS" % integrated_loudness(AudioBuffer(sr, np.stack([sine, sine]))).integrated)

# 10 dB step halfway through
step = np.where(t < 5, 0.1, 0.1 * 10 ** 0.5) * np.sin(2 * np.pi * 1000 * t)
print("step LRA: %.2f LU" % loudness_range(AudioBuffer(sr, np.stack([step, step]))))

rng = np.random.default_rng(0)
bursts = rng.standard_normal(t.size) * (0.05 + 0.3 * (np.sin(2 * np.pi * 0.5 * t) > 0.7))
original = AudioBuffer(sr, np.stack([bursts, bursts]))
limited, _ = apply_limiter(original, LimiterParams(input_gain_db=12.0, ceiling=0.9))

for name, buf in [("original", original), ("limited", limited)]:
    rep = dynamics_report(loudness_normalize(buf, -14.0))
    print("%-8s crest %.2f  LRA %.2f LU  rms %.3f" % (name, rep.crest_factor, rep.lra, rep.rms))
