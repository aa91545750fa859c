"""
Carrying a de-limiting gain over to stems
=========================================

When the stems of a limited mix are available, the per-sample ratio
between the de-limited and limited mix can be applied to each stem. Here
the oracle inverse plays the role of the de-limiter, so every stem should
come back as it was before limiting.
"""

import numpy as np

from delimiter import AudioBuffer, LimiterParams, apply_limiter, oracle_inverse
from delimiter.dataset import make_synthetic_pool, random_mix, render_stems
from delimiter.dynamics import transfer_gains
from delimiter.metrics import si_sdr

pool = make_synthetic_pool(n_tracks=2, seconds=8.0)
mix, prov = random_mix(pool, np.random.default_rng(11), segment_seconds=4.0)
stems, _ = render_stems(pool, prov)

limited, env = apply_limiter(mix, LimiterParams(input_gain_db=6.0, ceiling=0.9))
gain = 10 ** (6.0 / 20)
# a linked limiter scales every stem by the same per-sample gain
limited_stems = [AudioBuffer(mix.sample_rate, s * gain * env.gains) for s in stems]

delimited = oracle_inverse(limited, env)
recovered = transfer_gains(limited, delimited, limited_stems)

for spec, stem, before, after in zip(prov["stems"], stems, limited_stems, recovered):
    ref = stem * gain
    print("%-7s limited %6.1f dB -> transferred %6.1f dB" % (spec["role"], si_sdr(before.data, ref), si_sdr(after.data, ref)))
