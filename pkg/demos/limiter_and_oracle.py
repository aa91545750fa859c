"""
Limiting a mix and undoing it exactly
=====================================

The limiter hands back the gain it applied at every sample. Dividing by
that gain recovers the input, and the normalised inverse gain is what an
SGI network is trained to predict.
"""

import numpy as np

from delimiter import AudioBuffer, LimiterParams, apply_limiter, oracle_inverse, sgi_target
from delimiter.dataset import make_synthetic_pool, random_mix
from delimiter.metrics import crest_factor, si_sdr

pool = make_synthetic_pool(n_tracks=2, seconds=8.0)
mix, _ = random_mix(pool, np.random.default_rng(3), segment_seconds=4.0)
print("mix:", mix.data.shape, "peak %.3f" % np.abs(mix.data).max())

# push 8 dB into a 0.9 ceiling
params = LimiterParams(input_gain_db=8.0, ceiling=0.9)
limited, env = apply_limiter(mix, params)
print("limited peak %.4f, smallest gain %.3f" % (np.abs(limited.data).max(), env.gains.min()))
print("crest factor: original %.2f, limited %.2f" % (crest_factor(mix), crest_factor(limited)))

# the boosted signal is what the limiter saw, so that is what comes back
restored = oracle_inverse(limited, env)
boosted = AudioBuffer(mix.sample_rate, mix.data * params.input_gain)
print("oracle SI-SDR %.1f dB" % si_sdr(restored.data, boosted.data))

target = sgi_target(env)
print("SGI target range [%.3f, %.3f]" % (target.gains.min(), target.gains.max()))
