"""De-limiter networks and the DSP, loudness and evaluation tools around them."""

__version__ = "0.1.0"

from .audio_io import AudioBuffer, read_wav, write_wav
from .dynamics import GainEnvelope, LimiterParams, apply_limiter, oracle_inverse, parallel_mix, sgi_target
from .loudness import integrated_loudness, loudness_normalize, loudness_range
from .metrics import count_macs, count_params, dynamics_report, si_sdr
from .net import NetConfig, build_model, receptive_field
from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainHyper, infer, train

__all__ = [
    "AudioBuffer", "read_wav", "write_wav", "GainEnvelope", "LimiterParams", "apply_limiter",
    "oracle_inverse", "parallel_mix", "sgi_target", "integrated_loudness", "loudness_normalize",
    "loudness_range", "count_macs", "count_params", "dynamics_report", "si_sdr", "NetConfig",
    "build_model", "receptive_field", "load_checkpoint", "save_checkpoint", "TrainHyper", "infer", "train",
]
