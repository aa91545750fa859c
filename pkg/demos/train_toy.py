"""
Training a small SGI de-limiter
===============================

A few hundred short pairs from the synthetic stem pool and a small network,
enough to watch held-out SI-SDR climb past the limited input. Takes a few
minutes on a laptop CPU.
"""

from delimiter import NetConfig, TrainHyper, train
from delimiter.dataset import generate_pairs, make_synthetic_pool
from delimiter.metrics import count_macs, count_params
from delimiter.training import baseline_si_sdr, evaluate_pairs

pool = make_synthetic_pool()
pairs = generate_pairs(pool, 200, segment_seconds=1.0, seed=1)
held_out = generate_pairs(pool, 40, segment_seconds=1.0, seed=2)

config = NetConfig(head="sgi", X=4, R=2)
print("params %d, MACs per second of audio %d" % (count_params(config), count_macs(config, 1.0)))

hyper = TrainHyper(epochs=4, crop_seconds=0.5)
result = train(config, pairs, hyper)
for row in result.log:
    print("epoch %d  loss %.2f  val %.2f dB" % (row["epoch"], row["train_loss"], row["val_si_sdr"]))

print("limited input  %.2f dB" % baseline_si_sdr(held_out))
print("de-limited     %.2f dB" % evaluate_pairs(result.model, held_out))
